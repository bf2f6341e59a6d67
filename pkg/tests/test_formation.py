import re

import numpy as np
import pytest

from codgrad.coding import check_min_degree, closed_neighborhoods, generate_graph_code, validate_code
from codgrad.engine import CodedSystem, RunConfig, run
from codgrad.errors import (
    CoordinatorNotInGraph,
    InsufficientNodes,
    MessageCapExceeded,
    MissingAssignment,
    MissingKey,
    ThresholdUnmet,
)
from codgrad.formation import (
    Key,
    NullCipher,
    RecordingCipher,
    adjacency_from_edges,
    add_node,
    assign_scheme,
    bfs_distances,
    coded_gradients_from_stores,
    detect,
    exchange_coded_data,
    read_edge_list,
)
from codgrad.objectives import CodedGradients, coded_gradient, generate_problem, local_gradient
from codgrad.presets import FIVE_NODE_EDGES, SIX_NODE_EDGES, THREE_NODE_EDGES

LINE = re.compile(r"^tick=-?\d+ node=\d+ event=[a-z-]+ path=(\d+-\d+(,\d+-\d+)*)?$")


def no_repeated_directed_edge(trace):
    for e in trace.events:
        edges = list(zip(e.path[:-1], e.path[1:]))
        if e.kind == "recv" and len(edges) != len(set(edges)):
            return False
    return True


def random_connected(n, seed, p=0.4):
    rng = np.random.default_rng(seed)
    adj = np.triu(rng.random((n, n)) < p, 1)
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):   # spanning path keeps it connected
        adj[min(a, b), max(a, b)] = True
    return adj | adj.T


@pytest.fixture(scope="module")
def six():
    return adjacency_from_edges(6, SIX_NODE_EDGES)


def test_six_node_detection(six):
    trace = detect(six, 0, cipher=RecordingCipher())
    assert np.array_equal(trace.inferred_adjacency, six)
    assert trace.members == tuple(range(6))
    assert sorted(trace.keys) == [1, 2, 3, 4, 5]
    assert no_repeated_directed_edge(trace)
    assert np.array_equal(trace.inferred_adjacency, trace.inferred_adjacency.T)


def test_single_node():
    trace = detect(np.zeros((1, 1), dtype=bool), 0)
    assert trace.ticks == 0 and not trace.inferred_adjacency.any()
    assert trace.members == (0,)


def test_path_graph_within_four_ticks():
    adj = adjacency_from_edges(3, [(0, 1), (1, 2)])
    trace = detect(adj, 0)
    found = {}
    for e in trace.events:
        if e.kind == "recv" and e.node == 0:
            for u, v in zip(e.path[:-1], e.path[1:]):
                found.setdefault(frozenset((u, v)), e.tick)
    assert set(found) == {frozenset((0, 1)), frozenset((1, 2))}
    assert max(found.values()) <= 4


def test_coordinator_errors(six):
    with pytest.raises(CoordinatorNotInGraph):
        detect(six, 6)
    with pytest.raises(MessageCapExceeded):
        detect(six, 0, max_messages=10)


@pytest.mark.parametrize("n", range(3, 11))
def test_random_graphs_inferred_exactly(n):
    for seed in range(50):
        adj = random_connected(n, seed)
        c = seed % n
        trace = detect(adj, c)
        assert np.array_equal(trace.inferred_adjacency, adj), (n, seed)
        assert no_repeated_directed_edge(trace)


def test_disconnected_graph_restricted_to_component():
    adj = adjacency_from_edges(5, [(0, 1), (1, 2), (3, 4)])
    trace = detect(adj, 0)
    want = adjacency_from_edges(5, [(0, 1), (1, 2)])
    assert np.array_equal(trace.inferred_adjacency, want)
    assert trace.members == (0, 1, 2)


def test_timeout_default_tracks_eccentricity(six):
    ecc = int(bfs_distances(six, 0).max())
    trace = detect(six, 0)
    assert trace.ticks <= 2 * ecc + 1


def test_short_timeout_misses_edges(six):
    trace = detect(six, 0, timeout_ticks=2)
    assert trace.inferred_adjacency.sum() < six.sum()


def test_assign_scheme_three_node(three):
    adj = adjacency_from_edges(3, THREE_NODE_EDGES)
    cipher = RecordingCipher()
    dist = assign_scheme(detect(adj, 0, cipher=cipher), three.code, cipher)
    for i, v in enumerate(dist.workers):
        mat = dist.material[v]
        assert np.array_equal(mat.sde_row, three.code.a_sde[i])
        for j in range(3):
            b = three.code.B[j, i]
            assert mat.send_coeffs.get(j, 0.0) == b
        assert mat.expected_partitions == [l for l in range(3) if three.code.B[i, l] != 0]
    assert np.array_equal(dist.sde_matrix(), three.code.a_sde)
    assert cipher.cross_key_decryptions() == []


def test_each_node_decrypts_only_own_material(three):
    adj = adjacency_from_edges(3, THREE_NODE_EDGES)
    for cipher in (NullCipher(), RecordingCipher()):
        dist = assign_scheme(detect(adj, 0, cipher=cipher), three.code, cipher)
        decrypts = [e.node for e in dist.events if e.kind == "decrypt"]
        assert sorted(decrypts) == [0, 1, 2]


def test_assign_scheme_errors(five, three):
    tri = detect(adjacency_from_edges(3, THREE_NODE_EDGES), 0)
    with pytest.raises(InsufficientNodes):
        assign_scheme(tri, five.code)
    broken = adjacency_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    with pytest.raises(ThresholdUnmet):
        assign_scheme(detect(broken, 0), five.code)


def test_recording_cipher_wrong_key():
    c = RecordingCipher()
    sealed = c.encrypt(Key(1, "symmetric"), b"x")
    assert c.decrypt(Key(1, "symmetric"), sealed, actor=1) == b"x"
    with pytest.raises(MissingKey):
        c.decrypt(Key(2, "symmetric"), sealed, actor=2)
    pub = c.encrypt(Key(0, "public"), b"y")
    assert c.decrypt(Key(0, "private"), pub, actor=0) == b"y"
    with pytest.raises(MissingKey):
        c.decrypt(Key(0, "public"), pub, actor=3)
    assert len(c.log) == 4 and c.cross_key_decryptions() == []


def test_exchange_uncoded_stores_own_block():
    code = validate_code(np.ones((3, 3)), np.eye(3))
    p = generate_problem(30, 5, 3, seed=1)
    dist = assign_scheme(detect(adjacency_from_edges(3, THREE_NODE_EDGES), 0), code)
    stores = exchange_coded_data(dist, p)
    x = np.linspace(-1, 1, 5)
    for i in range(3):
        assert list(stores[i].secondary) == [i]
        assert np.allclose(stores[i].gradient(x), local_gradient(p, i, x), atol=1e-12)


@pytest.mark.parametrize("which", ["three", "five"])
def test_exchange_matches_coded_gradient(which, request, rng):
    pre = request.getfixturevalue(which)
    prob = generate_problem(pre.Q, pre.N, pre.code.m, seed=5)
    cipher = RecordingCipher()
    adj = adjacency_from_edges(pre.n, pre.edges)
    dist = assign_scheme(detect(adj, 0, cipher=cipher), pre.code, cipher)
    stores = exchange_coded_data(dist, prob, cipher)
    for _ in range(10):
        x = rng.normal(size=prob.N)
        for i in range(pre.n):
            direct = coded_gradient(pre.code, prob, i, x)
            assert np.max(np.abs(stores[i].gradient(x) - direct)) <= 1e-12 * (1 + np.abs(direct).max())
    assert cipher.cross_key_decryptions() == []


def test_exchange_routes_to_non_neighbors(five):
    # the 5-node coding matrix sends data beyond one hop on the 5-cycle
    prob = generate_problem(five.Q, five.N, 5, seed=0)
    dist = assign_scheme(detect(adjacency_from_edges(5, FIVE_NODE_EDGES), 0), five.code)
    exchange_coded_data(dist, prob)
    assert any(e.kind == "route" and len(e.path) > 2 for e in dist.events)


def test_dropped_transmission(three, three_problem):
    dist = assign_scheme(detect(adjacency_from_edges(3, THREE_NODE_EDGES), 0), three.code)
    stores = exchange_coded_data(dist, three_problem, drop=[(1, 0)])
    with pytest.raises(MissingAssignment):
        stores[0].gradient(np.zeros(three_problem.N))


def test_missing_peer_key(three, three_problem):
    dist = assign_scheme(detect(adjacency_from_edges(3, THREE_NODE_EDGES), 0), three.code)
    dist.material[1].peer_keys.pop(0)
    with pytest.raises(MissingKey):
        exchange_coded_data(dist, three_problem)


def test_end_to_end_transparent(six):
    cipher = RecordingCipher()
    trace = detect(six, 0, cipher=cipher)
    code = generate_graph_code(six, seed=3)
    prob = generate_problem(120, 20, 6, seed=4)
    dist = assign_scheme(trace, code, cipher)
    stores = exchange_coded_data(dist, prob, cipher)
    cg = coded_gradients_from_stores(dist, stores)
    ref = CodedGradients.from_code(code, prob)
    assert np.array_equal(cg.hess, ref.hess) and np.array_equal(cg.lin, ref.lin)
    cfg = RunConfig("codgrad-node", max_iters=200)
    a = run(cfg, CodedSystem.from_sde(dist.sde_matrix(), cg), x0=9)
    b = run(cfg, CodedSystem.from_code(code, prob), x0=9)
    assert np.max(np.abs(a.X - b.X)) <= 1e-12
    assert cipher.cross_key_decryptions() == []


def test_add_node_accepted():
    K5 = ~np.eye(5, dtype=bool)
    trace = detect(K5, 0, cipher=RecordingCipher())
    res = add_node(trace, 5, [0, 1, 2], seed=1)
    assert res.accepted and res.code.n == 6
    assert res.trace.members == tuple(range(6))
    assert check_min_degree(closed_neighborhoods(res.trace.inferred_adjacency)).satisfied
    for i, v in enumerate(res.distribution.workers):
        assert np.array_equal(res.distribution.material[v].sde_row, res.code.a_sde[i])
    assert any(e.node == 0 for e in res.notify_events)


def test_add_node_rejections(six):
    trace = detect(six, 0)
    iso = add_node(trace, 6, [])
    assert not iso.accepted and isinstance(iso.rejection, ThresholdUnmet)
    weak = add_node(trace, 6, [3, 5], straggler_threshold=4)
    assert not weak.accepted and weak.trace is trace
    with pytest.raises(ValueError):
        add_node(trace, 3, [0])


def test_trace_format(six):
    text = detect(six, 0).format()
    lines = text.splitlines()
    k = lines.index("adjacency")
    assert all(LINE.match(l) for l in lines[:k])
    block = np.array([[int(t) for t in l.split()] for l in lines[k + 1:]])
    assert np.array_equal(block.astype(bool), six)


def test_read_edge_list(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# demo\nnodes 4\n0 1\n1 2 # comment\n")
    assert read_edge_list(p) == (4, [(0, 1), (1, 2)])
