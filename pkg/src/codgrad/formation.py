"""Coordinated network formation: detection, scheme distribution, coded data
exchange and node addition, simulated in synchronous ticks.

Messages sent at tick ``t`` are delivered at tick ``t + 1``.  Node ids are
0-based integers.  Cryptography is abstracted behind :class:`Cipher`; the
provided implementations do not protect anything, they only make the
addressing of each payload explicit so the privacy audit can check it.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .coding import GradientCode, check_min_degree, closed_neighborhoods, generate_graph_code
from .errors import (
    CoordinatorNotInGraph,
    InsufficientNodes,
    MessageCapExceeded,
    MissingAssignment,
    MissingKey,
    ThresholdUnmet,
)
from .objectives import CodedGradients, PartitionedQuadratic

# --- graphs -----------------------------------------------------------------


def adjacency_from_edges(n: int, edges: Iterable[tuple[int, int]]) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for u, v in edges:
        if u == v:
            continue
        adj[u, v] = adj[v, u] = True
    return adj


def edges_of(adj) -> list[tuple[int, int]]:
    adj = np.asarray(adj, dtype=bool)
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(adj, 1)))]


def bfs_distances(adj, src: int) -> np.ndarray:
    adj = np.asarray(adj, dtype=bool)
    dist = np.full(adj.shape[0], -1)
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for v in np.flatnonzero(adj[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(int(v))
    return dist


def shortest_path(adj, src: int, dst: int) -> list[int]:
    adj = np.asarray(adj, dtype=bool)
    prev = {src: None}
    q = deque([src])
    while q:
        u = q.popleft()
        if u == dst:
            break
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v not in prev:
                prev[v] = u
                q.append(v)
    if dst not in prev:
        raise MissingAssignment(f"node {dst} is unreachable from node {src}")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def read_edge_list(path) -> tuple[int, list[tuple[int, int]]]:
    """Whitespace-separated ``u v`` pairs; an optional ``nodes K`` line fixes the count."""
    edges, n = [], 0
    with open(path) as fh:
        for line in fh:
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if tok[0] == "nodes":
                n = max(n, int(tok[1]))
                continue
            u, v = int(tok[0]), int(tok[1])
            edges.append((u, v))
            n = max(n, u + 1, v + 1)
    return n, edges


# --- ciphers ----------------------------------------------------------------


@dataclass(frozen=True)
class Key:
    owner: int
    kind: str   # "public" | "private" | "symmetric"

    def opens(self, sealed_with: "Key") -> bool:
        if sealed_with.kind == "public":
            return self.kind == "private" and self.owner == sealed_with.owner
        return self == sealed_with


class Cipher(Protocol):
    def encrypt(self, key: Key, data: bytes) -> bytes: ...

    def decrypt(self, key: Key, data: bytes, actor: int | None = None) -> bytes: ...


class NullCipher:
    """Identity transform: payloads stay readable."""

    def encrypt(self, key: Key, data: bytes) -> bytes:
        return data

    def decrypt(self, key: Key, data: bytes, actor: int | None = None) -> bytes:
        return data


@dataclass
class DecryptAttempt:
    actor: int | None
    key: Key
    sealed_with: Key
    success: bool


class RecordingCipher:
    """Tags each ciphertext with its sealing key and logs every decryption.

    Decryption with a key that does not open the ciphertext raises
    :class:`MissingKey`.
    """

    def __init__(self):
        self.log: list[DecryptAttempt] = []

    @staticmethod
    def _tag(key: Key) -> bytes:
        return f"{key.kind}:{key.owner}|".encode()

    def encrypt(self, key: Key, data: bytes) -> bytes:
        return self._tag(key) + data

    def decrypt(self, key: Key, data: bytes, actor: int | None = None) -> bytes:
        head, _, body = data.partition(b"|")
        kind, owner = head.decode().split(":")
        sealed = Key(int(owner), kind)
        ok = key.opens(sealed)
        self.log.append(DecryptAttempt(actor, key, sealed, ok))
        if not ok:
            raise MissingKey(f"{key} cannot open material sealed with {sealed}")
        return body

    def cross_key_decryptions(self) -> list[DecryptAttempt]:
        """Successful decryptions of material sealed for someone else."""
        return [a for a in self.log if a.success and a.actor is not None and a.actor != a.sealed_with.owner]


def _pack(obj) -> bytes:
    return json.dumps(obj).encode()


def _unpack(data: bytes):
    return json.loads(data.decode())


# --- traces -----------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    label: str
    sender: int
    path: tuple[int, ...]                      # nodes visited, sender last
    block: tuple[tuple[int, bytes], ...] = ()  # (recipient, ciphertext)

    def directed_edges(self) -> list[tuple[int, int]]:
        return list(zip(self.path[:-1], self.path[1:]))


@dataclass(frozen=True)
class Event:
    tick: int
    node: int
    kind: str     # send | recv | suppress | decrypt | store | timeout | ...
    path: tuple[int, ...] = ()

    def format(self) -> str:
        edges = ",".join(f"{u}-{v}" for u, v in zip(self.path[:-1], self.path[1:]))
        return f"tick={self.tick} node={self.node} event={self.kind} path={edges}"


@dataclass
class ProtocolTrace:
    coordinator: int
    n_nodes: int
    label: str
    events: list[Event]
    inferred_adjacency: np.ndarray
    members: tuple[int, ...]
    keys: dict[int, Key]                 # symmetric keys recovered by the coordinator
    ticks: int
    messages_relayed: int
    cipher: Cipher = field(repr=False, default_factory=NullCipher)

    def format(self) -> str:
        lines = [e.format() for e in self.events]
        lines.append("adjacency")
        lines += [" ".join("1" if v else "0" for v in row) for row in self.inferred_adjacency]
        return "\n".join(lines) + "\n"


def detect(adjacency, coordinator: int, timeout_ticks: int | None = None,
           cipher: Cipher | None = None, label: str = "codgrad",
           max_messages: int = 2_000_000) -> ProtocolTrace:
    """Flood detection messages from the coordinator and infer the adjacency.

    Every node appends itself to the accumulated path and relays to all
    neighbors, except along a directed edge the path already contains.  Each
    non-coordinator node adds its symmetric key sealed with the coordinator's
    public key to the message block.  The coordinator only collects.  The
    default timeout ``2 * ecc(coordinator) + 1`` lets the longest needed
    round trip (out, across one edge, back) arrive.
    """
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    if not 0 <= coordinator < n:
        raise CoordinatorNotInGraph(f"coordinator {coordinator} not in a {n}-node graph")
    cipher = cipher or NullCipher()
    if timeout_ticks is None:
        dist = bfs_distances(adj, coordinator)
        timeout_ticks = 2 * int(dist.max()) + 1
    pub = Key(coordinator, "public")
    events: list[Event] = []
    pending: list[tuple[int, Message]] = []
    for w in np.flatnonzero(adj[coordinator]):
        pending.append((int(w), Message(label, coordinator, (coordinator,))))
        events.append(Event(0, coordinator, "send", (coordinator, int(w))))
    received: list[Message] = []
    relayed = 0
    tick = 0
    while pending and tick < timeout_ticks:
        tick += 1
        nxt: list[tuple[int, Message]] = []
        for v, msg in pending:
            path = msg.path + (v,)
            events.append(Event(tick, v, "recv", path))
            if v == coordinator:
                received.append(Message(msg.label, msg.sender, path, msg.block))
                continue
            block = msg.block
            if v not in msg.path:   # first visit along this path: attach own key
                sealed = cipher.encrypt(pub, _pack({"node": v, "key": ["symmetric", v]}))
                block = block + ((coordinator, sealed),)
            used = set(zip(path[:-1], path[1:]))
            for w in np.flatnonzero(adj[v]):
                w = int(w)
                if (v, w) in used:
                    events.append(Event(tick, v, "suppress", path + (w,)))
                    continue
                nxt.append((w, Message(msg.label, v, path, block)))
                relayed += 1
                if relayed > max_messages:
                    raise MessageCapExceeded(f"more than {max_messages} relays")
        pending = nxt
    events.append(Event(tick, coordinator, "timeout" if pending else "quiescent"))

    inferred = np.zeros((n, n), dtype=bool)
    keys: dict[int, Key] = {}
    priv = Key(coordinator, "private")
    for msg in received:
        for u, w in msg.directed_edges():
            inferred[u, w] = inferred[w, u] = True
        for recipient, sealed in msg.block:
            if recipient != coordinator:
                continue
            info = _unpack(cipher.decrypt(priv, sealed, actor=coordinator))
            keys[info["node"]] = Key(info["key"][1], info["key"][0])
    members = tuple(sorted({coordinator} | {int(i) for i in np.flatnonzero(inferred.any(axis=1))}))
    return ProtocolTrace(coordinator, n, label, events, inferred, members, keys,
                         tick, relayed, cipher)


# --- scheme distribution ------------------------------------------------------


@dataclass
class NodeMaterial:
    """What one node learns from the coordinator's scheme message."""

    sde_row: list[float] | None = None
    expected_partitions: list[int] = field(default_factory=list)
    send_coeffs: dict[int, float] = field(default_factory=dict)   # recipient -> b(recipient, self)
    peer_keys: dict[int, Key] = field(default_factory=dict)


@dataclass
class SchemeDistribution:
    trace: ProtocolTrace
    code: GradientCode
    workers: tuple[int, ...]           # workers[i] = network node running code row i
    material: dict[int, NodeMaterial]
    events: list[Event]

    def sde_matrix(self) -> np.ndarray:
        """Reassemble the lifted decoding matrix from the rows nodes received."""
        n = len(self.workers)
        top = np.array([self.material[v].sde_row for v in self.workers])
        if top.shape != (n, 2 * n):
            raise MissingAssignment("some node did not receive its decoding row")
        return np.vstack([top, top])


def assign_scheme(trace: ProtocolTrace, code: GradientCode,
                  cipher: Cipher | None = None) -> SchemeDistribution:
    """Seal each node's lifted row and coding coefficients under its key and flood them.

    Code row ``i`` runs on the ``i``-th smallest member id.  Every entry in
    the message block is addressed; a node opens only entries addressed to
    itself and relays each labelled message at most once.
    """
    cipher = cipher or trace.cipher
    n = code.n
    if len(trace.members) < n:
        raise InsufficientNodes(f"code expects {n} nodes, network has {len(trace.members)}")
    workers = tuple(trace.members[:n])
    adj = trace.inferred_adjacency
    for i, row in enumerate(code.gamma):
        for j in row:
            if j != i and not adj[workers[i], workers[j]]:
                raise ThresholdUnmet(
                    f"decoding row {i} needs node {workers[j]} which is not a neighbor of {workers[i]}")
    missing = [v for v in workers if v != trace.coordinator and v not in trace.keys]
    if missing:
        raise MissingKey(f"coordinator holds no key for nodes {missing}")

    def key_of(v):
        return Key(v, "symmetric") if v == trace.coordinator else trace.keys[v]

    sde = code.a_sde
    block = []
    for i, v in enumerate(workers):
        expected = [l for l in range(code.m) if code.B[i, l] != 0.0]
        coeffs = {str(workers[j]): float(code.B[j, i]) for j in range(n) if code.B[j, i] != 0.0}
        peer = {str(workers[j]): ["symmetric", workers[j]] for j in range(n) if code.B[j, i] != 0.0}
        payload = {"row": [float(x) for x in sde[i]], "expected": expected,
                   "coeffs": coeffs, "keys": peer}
        block.append((v, cipher.encrypt(key_of(v), _pack(payload))))

    label = trace.label + "/scheme"
    events: list[Event] = []
    material = {v: NodeMaterial() for v in workers}
    seen: set[int] = set()
    c = trace.coordinator
    pending = [(c, (c,))]
    tick = 0
    while pending:
        nxt = []
        for v, path in pending:
            if v in seen:
                continue
            seen.add(v)
            events.append(Event(tick, v, "recv", path))
            for recipient, sealed in block:
                if recipient != v:
                    continue
                info = _unpack(cipher.decrypt(key_of(v), sealed, actor=v))
                mat = material[v]
                mat.sde_row = info["row"]
                mat.expected_partitions = info["expected"]
                mat.send_coeffs = {int(k): val for k, val in info["coeffs"].items()}
                mat.peer_keys = {int(k): Key(kv[1], kv[0]) for k, kv in info["keys"].items()}
                events.append(Event(tick, v, "decrypt", path))
            for w in np.flatnonzero(adj[v]):
                w = int(w)
                if w not in seen:
                    nxt.append((w, path + (w,)))
                    events.append(Event(tick, v, "send", path + (w,)))
        pending = nxt
        tick += 1
    return SchemeDistribution(trace, code, workers, material, events)


# --- coded data exchange ------------------------------------------------------


@dataclass
class NodeStore:
    """Secondary information: coded partitions received from other nodes."""

    node: int
    expected: list[int]
    secondary: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def coded_terms(self) -> tuple[np.ndarray, np.ndarray]:
        missing = [l for l in self.expected if l not in self.secondary]
        if missing:
            raise MissingAssignment(f"node {self.node} is missing coded partitions {missing}")
        N = next(iter(self.secondary.values()))[1].size
        hess, lin = np.zeros((N, N)), np.zeros(N)
        for l in sorted(self.expected):
            h, c = self.secondary[l]
            hess += h
            lin += c
        return hess, lin

    def gradient(self, x) -> np.ndarray:
        hess, lin = self.coded_terms()
        return 2.0 * (hess @ np.asarray(x, dtype=float) - lin)


def exchange_coded_data(dist: SchemeDistribution, problem: PartitionedQuadratic,
                        cipher: Cipher | None = None,
                        drop: Iterable[tuple[int, int]] = ()) -> dict[int, NodeStore]:
    """Each node seals its weighted partition for every recipient and routes it.

    Node ``v`` owning partition ``i`` sends ``(b * G_i^T G_i, b * G_i^T y_i)``
    with ``b = B[j, i]`` to the node running row ``j``, sealed with that
    node's key.  Recipients that are not neighbors are reached along a
    shortest path; relays forward ciphertext they cannot open.  ``drop``
    lists ``(sender, recipient)`` node pairs whose transmission is lost.
    """
    cipher = cipher or dist.trace.cipher
    code = dist.code
    if problem.m != code.n:
        raise ValueError("coded exchange assumes one partition per worker (m == n)")
    drop = set(drop)
    workers = dist.workers
    index = {v: i for i, v in enumerate(workers)}
    adj = dist.trace.inferred_adjacency
    stores = {v: NodeStore(v, list(dist.material[v].expected_partitions)) for v in workers}
    H, c = problem.hessians, problem.linear_terms
    for v in workers:
        i = index[v]
        mat = dist.material[v]
        for u, b in sorted(mat.send_coeffs.items()):
            if (v, u) in drop:
                continue
            key = mat.peer_keys.get(u)
            if key is None:
                raise MissingKey(f"node {v} has no key for recipient {u}")
            payload = {"partition": i, "hess": (b * H[i]).tolist(), "lin": (b * c[i]).tolist()}
            sealed = cipher.encrypt(key, _pack(payload))
            route = shortest_path(adj, v, u) if u != v else [v]
            if len(route) > 2:
                dist.events.append(Event(-1, v, "route", tuple(route)))
            info = _unpack(cipher.decrypt(Key(u, "symmetric"), sealed, actor=u))
            stores[u].secondary[info["partition"]] = (np.array(info["hess"]), np.array(info["lin"]))
            dist.events.append(Event(-1, u, "store", tuple(route)))
    return stores


def coded_gradients_from_stores(dist: SchemeDistribution,
                                stores: dict[int, NodeStore]) -> CodedGradients:
    terms = [stores[v].coded_terms() for v in dist.workers]
    return CodedGradients(np.stack([h for h, _ in terms]), np.stack([c for _, c in terms]))


# --- node addition ------------------------------------------------------------


@dataclass
class AddNodeResult:
    accepted: bool
    trace: ProtocolTrace
    code: GradientCode | None = None
    distribution: SchemeDistribution | None = None
    rejection: ThresholdUnmet | None = None
    notify_events: list[Event] = field(default_factory=list)


def add_node(trace: ProtocolTrace, new_node: int, edges: Iterable[int],
             straggler_threshold: int | None = None, seed: int = 0,
             cipher: Cipher | None = None) -> AddNodeResult:
    """Try to admit ``new_node`` connected to the listed existing nodes.

    Neighbors of the newcomer flood an update toward the coordinator (each
    node relays it once).  The coordinator admits the node when it has at
    least ``straggler_threshold`` links, or, with no threshold given, when
    the enlarged graph still satisfies the min-degree condition.  On
    admission the network is re-detected and a fresh code supported on the
    enlarged graph is distributed; otherwise the old network stays.
    """
    cipher = cipher or trace.cipher
    links = sorted({int(u) for u in edges})
    if new_node < trace.n_nodes:
        raise ValueError(f"node id {new_node} is already in use")
    n2 = new_node + 1
    adj2 = np.zeros((n2, n2), dtype=bool)
    adj2[: trace.n_nodes, : trace.n_nodes] = trace.inferred_adjacency
    for u in links:
        adj2[new_node, u] = adj2[u, new_node] = True

    events: list[Event] = []
    seen: set[int] = set()
    pending = [(u, (new_node, u)) for u in links]
    tick = 1
    while pending:
        nxt = []
        for v, path in pending:
            if v in seen:
                continue
            seen.add(v)
            events.append(Event(tick, v, "update", path))
            if v == trace.coordinator:
                continue
            for w in np.flatnonzero(trace.inferred_adjacency[v]):
                if int(w) not in seen:
                    nxt.append((int(w), path + (int(w),)))
        pending = nxt
        tick += 1

    members2 = list(trace.members) + [new_node]
    sub = adj2[np.ix_(members2, members2)]
    reason = None
    if not links:
        reason = "new node has no links"
    elif trace.coordinator not in seen:
        reason = "update never reached the coordinator"
    elif straggler_threshold is not None:
        if len(links) < straggler_threshold:
            reason = f"new node has {len(links)} links, threshold is {straggler_threshold}"
    elif not check_min_degree(closed_neighborhoods(sub)).satisfied:
        reason = "enlarged network violates the min-degree condition"
    if reason is not None:
        return AddNodeResult(False, trace, rejection=ThresholdUnmet(reason), notify_events=events)

    new_trace = detect(adj2, trace.coordinator, cipher=cipher, label=trace.label)
    member_adj = new_trace.inferred_adjacency[np.ix_(new_trace.members, new_trace.members)]
    code = generate_graph_code(member_adj, seed=seed)
    dist = assign_scheme(new_trace, code, cipher)
    return AddNodeResult(True, new_trace, code, dist, notify_events=events)
