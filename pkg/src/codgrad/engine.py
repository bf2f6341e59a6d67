"""CoDGraD iteration (node and stacked matrix forms), DGD baselines and runs.

Iterates are stored as arrays of shape (n, N): row ``i`` is node ``i``'s
estimate.  The stacked form uses ``z = [x; x]`` of shape (2n, N).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import spectral
from .coding import GradientCode, neighbor_sets
from .errors import NonFinite, NotRowStochastic, NotSimple
from .objectives import CodedGradients, PartitionedQuadratic, StepSchedule

Algorithm = Literal["codgrad-node", "codgrad-matrix", "dgd-atc", "dgd-cta", "centralized"]
ALGORITHMS = ("codgrad-node", "codgrad-matrix", "dgd-atc", "dgd-cta", "centralized")

ReadHook = Callable[[int, int], None]


def _check_finite(arr, k):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(k)


# --- systems ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CodedSystem:
    """What a CoDGraD run needs: lifted weights and per-worker coded gradients."""

    a_sde: np.ndarray
    grads: CodedGradients
    a_vec: np.ndarray          # stationary vector of a_sde, length 2n
    gamma: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return self.grads.n

    @property
    def tilde_pos(self) -> np.ndarray:
        return self.a_sde[: self.n, : self.n]

    @property
    def tilde_neg(self) -> np.ndarray:
        return self.a_sde[: self.n, self.n:]

    @property
    def node_weights(self) -> np.ndarray:
        """Weight of ``x_i`` in the stationary average (both lifted copies)."""
        return self.a_vec[: self.n] + self.a_vec[self.n:]

    @property
    def signed_weights(self) -> np.ndarray:
        """Coefficient of ``grad g_i`` in ``a_sde^T h``."""
        return self.a_vec[: self.n] - self.a_vec[self.n:]

    @classmethod
    def from_sde(cls, a_sde, grads: CodedGradients) -> "CodedSystem":
        a_sde = np.asarray(a_sde, dtype=float)
        n = grads.n
        tilde = a_sde[:n, :n] - a_sde[:n, n:]
        sv = spectral.stationary_vector(a_sde)
        return cls(a_sde, grads, sv.a_sde, neighbor_sets(tilde, 0.0))

    @classmethod
    def from_code(cls, code: GradientCode, problem: PartitionedQuadratic) -> "CodedSystem":
        return cls.from_sde(code.a_sde, CodedGradients.from_code(code, problem))


@dataclass(frozen=True, eq=False)
class DGDSystem:
    W: np.ndarray
    grads: CodedGradients     # uncoded: grads.gradient(i, x) = grad f_i(x)
    pi: np.ndarray            # stationary vector of W

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        return neighbor_sets(self.W, 0.0)

    @classmethod
    def from_matrix(cls, W, problem: PartitionedQuadratic) -> "DGDSystem":
        W = np.asarray(W, dtype=float)
        _check_row_stochastic(W)
        if W.shape[0] != problem.m:
            raise ValueError(f"W is {W.shape[0]}x{W.shape[0]} but problem has {problem.m} blocks")
        try:
            pi = spectral.stationary_vector(W).a_sde
        except NotSimple:
            # disconnected W (e.g. the identity): no unique stationary mix
            pi = np.full(W.shape[0], 1.0 / W.shape[0])
        return cls(W, CodedGradients.uncoded(problem), pi)


def _check_row_stochastic(W, tol=1e-10):
    if np.any(W < -tol) or np.max(np.abs(W.sum(axis=1) - 1.0)) > tol:
        raise NotRowStochastic("consensus matrix must be nonnegative with unit row sums")


def metropolis_weights(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool) & ~np.eye(len(adjacency), dtype=bool)
    deg = adj.sum(axis=1)
    n = len(deg)
    W = np.zeros((n, n))
    for i in range(n):
        for j in np.flatnonzero(adj[i]):
            W[i, j] = 1.0 / (1 + max(deg[i], deg[j]))
        W[i, i] = 1.0 - W[i].sum()
    return W


# --- single steps -----------------------------------------------------------

def codgrad_node_step(system: CodedSystem, X, alpha: float,
                      on_read: ReadHook | None = None, k: int = -1) -> np.ndarray:
    """One synchronous round of the node-level update.

    Each node computes ``y+ = x - alpha * grad g_i(x)`` and ``y- = x + alpha * grad g_i(x)``
    from its own state; node ``i`` then mixes the ``y``'s of its neighbor set
    with the positive / negative parts of its normalized decoding row.
    ``on_read(i, j)`` is called whenever node ``i`` reads node ``j``'s output.
    """
    X = np.asarray(X, dtype=float)
    n = system.n
    V = np.empty_like(X)
    for i in range(n):
        V[i] = system.grads.gradient(i, X[i])
    Yp = X - alpha * V
    Ym = X + alpha * V
    pos, neg = system.tilde_pos, system.tilde_neg
    out = np.zeros_like(X)
    for i in range(n):
        for j in system.gamma[i]:
            if on_read is not None:
                on_read(i, j)
            if pos[i, j] != 0.0:
                out[i] += pos[i, j] * Yp[j]
            if neg[i, j] != 0.0:
                out[i] += neg[i, j] * Ym[j]
    _check_finite(out, k)
    return out


def lifted_gradients(system: CodedSystem, Z) -> np.ndarray:
    """``h(k)``: coded gradients on the top copy, negated ones on the bottom."""
    n = system.n
    h = np.empty_like(Z)
    h[:n] = system.grads.all_gradients(Z[:n])
    h[n:] = -system.grads.all_gradients(Z[n:])
    return h


def codgrad_matrix_step(system: CodedSystem, Z, alpha: float, k: int = -1) -> np.ndarray:
    """``z(k+1) = A_sde z(k) - alpha * A_sde h(k)``."""
    Z = np.asarray(Z, dtype=float)
    h = lifted_gradients(system, Z)
    out = system.a_sde @ Z - alpha * (system.a_sde @ h)
    _check_finite(out, k)
    return out


def dgd_step(mode: str, system: DGDSystem, X, alpha: float,
             on_read: ReadHook | None = None, k: int = -1) -> np.ndarray:
    """Adapt-then-combine (``"atc"``) or combine-then-adapt (``"cta"``) step."""
    X = np.asarray(X, dtype=float)
    W, g = system.W, system.grads
    nbrs = system.neighbors

    def combine(Y):
        out = np.zeros_like(Y)
        for i in range(system.n):
            for j in nbrs[i]:
                if on_read is not None:
                    on_read(i, j)
                out[i] += W[i, j] * Y[j]
        return out

    mode = mode.lower()
    if mode == "atc":
        Y = np.stack([X[i] - alpha * g.gradient(i, X[i]) for i in range(system.n)])
        out = combine(Y)
    elif mode == "cta":
        Y = combine(X)
        out = np.stack([Y[i] - alpha * g.gradient(i, Y[i]) for i in range(system.n)])
    else:
        raise ValueError(f"unknown DGD mode {mode!r}")
    _check_finite(out, k)
    return out


def centralized_gd(problem: PartitionedQuadratic, x0, schedule: StepSchedule,
                   iters: int) -> np.ndarray:
    """Fusion-center gradient descent with the averaged gradient; returns (iters+1, N)."""
    x = np.array(x0, dtype=float)
    H, c = problem.hessians, problem.linear_terms
    traj = np.empty((iters + 1, x.size))
    traj[0] = x
    for k in range(iters):
        g = 2.0 * (np.einsum("lij,j->li", H, x) - c).sum(axis=0)
        x = x - schedule(k) / problem.m * g
        _check_finite(x, k)
        traj[k + 1] = x
    return traj


# --- runs -------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    algorithm: Algorithm = "codgrad-node"
    schedule: StepSchedule = field(default_factory=lambda: StepSchedule(300.0, 0.75))
    max_iters: int = 2000
    epsilon: float = 0.0
    record_every: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True, eq=False)
class Trajectory:
    algorithm: str
    ks: np.ndarray               # recorded iteration indices
    X: np.ndarray                # (T, n, N) node iterates at ks
    bar_x: np.ndarray            # (T, N) stationary-weighted averages
    disagreement: np.ndarray     # (T,) max_i ||x_i - bar_x||
    alphas: np.ndarray           # (T,) step used to leave iteration ks[t]
    halted_at: np.ndarray        # (n,) first k with e_i(k) < eps, -1 if never
    iterations: int
    status: str                  # "converged" | "max_iters"

    @property
    def dense(self) -> bool:
        return len(self.ks) == self.iterations + 1

    def z(self, t: int) -> np.ndarray:
        return np.vstack([self.X[t], self.X[t]])


def initial_state(n: int, N: int, x0=None) -> np.ndarray:
    """Zero start by default; an int seeds a uniform [-1, 1] start."""
    if x0 is None:
        return np.zeros((n, N))
    if isinstance(x0, (int, np.integer)):
        return np.random.default_rng(int(x0)).uniform(-1.0, 1.0, (n, N))
    X = np.array(x0, dtype=float)
    if X.ndim == 1:
        X = np.tile(X, (n, 1))
    if X.shape != (n, N):
        raise ValueError(f"initial state must have shape {(n, N)}, got {X.shape}")
    return X


def run(config: RunConfig, system, x0=None, problem: PartitionedQuadratic | None = None) -> Trajectory:
    """Iterate until ``max_iters`` or until every node has halted.

    A node halts once ``||x_i(k+1) - x_i(k)|| < epsilon``; it keeps computing
    and sharing so its neighbors still receive values, but its flag is frozen.
    ``epsilon = 0`` therefore always runs ``max_iters`` iterations.
    """
    algo = config.algorithm
    sched = config.schedule
    if algo == "centralized":
        if problem is None:
            raise ValueError("centralized runs need the problem")
        x0c = np.zeros(problem.N) if x0 is None else np.asarray(x0, dtype=float).reshape(-1, problem.N)[0]
        path = centralized_gd(problem, x0c, sched, config.max_iters)
        ks = np.arange(0, config.max_iters + 1, config.record_every)
        if ks[-1] != config.max_iters:
            ks = np.append(ks, config.max_iters)
        X = path[ks][:, None, :]
        return Trajectory(algo, ks, X, X[:, 0, :].copy(), np.zeros(len(ks)),
                          sched.alphas(config.max_iters + 1)[ks], np.full(1, -1),
                          config.max_iters, "max_iters")

    if algo.startswith("codgrad"):
        if not isinstance(system, CodedSystem):
            raise TypeError("CoDGraD runs need a CodedSystem")
        avg = system.node_weights
    else:
        if not isinstance(system, DGDSystem):
            raise TypeError("DGD runs need a DGDSystem")
        avg = system.pi
        mode = algo.split("-")[1]

    n, N = system.n, system.grads.N
    X = initial_state(n, N, x0)
    Z = np.vstack([X, X]) if algo == "codgrad-matrix" else None

    rec_k, rec_X, rec_a = [], [], []

    def record(k, Xk):
        rec_k.append(k)
        rec_X.append(Xk.copy())
        rec_a.append(sched(k))

    eps = config.epsilon
    halted = np.zeros(n, dtype=bool)
    halted_at = np.full(n, -1)
    e = np.full(n, eps)
    k = 0
    record(0, X)
    # overflow surfaces as NonFinite from the step, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        while k < config.max_iters and not halted.all():
            alpha = sched(k)
            if algo == "codgrad-node":
                Xn = codgrad_node_step(system, X, alpha, k=k)
            elif algo == "codgrad-matrix":
                Z = codgrad_matrix_step(system, Z, alpha, k=k)
                Xn = Z[:n]
            else:
                Xn = dgd_step(mode, system, X, alpha, k=k)
            e = np.linalg.norm(Xn - X, axis=1)
            newly = ~halted & (e < eps)
            halted_at[newly] = k + 1
            halted |= newly
            X = Xn.copy()
            k += 1
            if k % config.record_every == 0:
                record(k, X)
    if rec_k[-1] != k:
        record(k, X)

    Xs = np.stack(rec_X)
    bar = np.einsum("i,tij->tj", avg, Xs)
    dis = np.linalg.norm(Xs - bar[:, None, :], axis=2).max(axis=1)
    status = "converged" if halted.all() else "max_iters"
    return Trajectory(algo, np.array(rec_k), Xs, bar, dis, np.array(rec_a),
                      halted_at, k, status)


# --- trajectory identities ---------------------------------------------------

def _require_dense(traj: Trajectory):
    if not traj.dense:
        raise ValueError("check needs a densely recorded trajectory (record_every=1)")


def weighted_gradient(system: CodedSystem, X) -> np.ndarray:
    """``a_sde^T h`` for the stacked state built from node iterates ``X``."""
    G = system.grads.all_gradients(X)
    return system.signed_weights @ G


def bar_x_recursion_check(traj: Trajectory, system: CodedSystem) -> float:
    """Max residual of ``bar_x(k+1) = bar_x(k) - alpha_k a_sde^T h(k)``."""
    _require_dense(traj)
    worst = 0.0
    for t in range(len(traj.ks) - 1):
        r = traj.bar_x[t + 1] - traj.bar_x[t] + traj.alphas[t] * weighted_gradient(system, traj.X[t])
        worst = max(worst, float(np.linalg.norm(r)))
    return worst


def disagreement_recursion_check(traj: Trajectory, system: CodedSystem, P) -> float:
    """Max residual of ``zt(k+1) = (A - P) zt(k) - alpha_k (A - P) h(k)``."""
    _require_dense(traj)
    D = system.a_sde - P
    worst = 0.0
    for t in range(len(traj.ks) - 1):
        Zk, Zn = traj.z(t), traj.z(t + 1)
        zt, zt_next = Zk - P @ Zk, Zn - P @ Zn
        pred = D @ zt - traj.alphas[t] * (D @ lifted_gradients(system, Zk))
        worst = max(worst, float(np.max(np.abs(zt_next - pred))))
    return worst


@dataclass(frozen=True)
class InexactGradientReport:
    lhs: np.ndarray
    bound: np.ndarray
    slack: float

    @property
    def margin(self) -> np.ndarray:
        return self.bound - self.lhs

    @property
    def violations(self) -> np.ndarray:
        return np.flatnonzero(self.lhs > self.bound + self.slack)

    @property
    def holds(self) -> bool:
        return self.violations.size == 0


def inexact_gradient_check(traj: Trajectory, system: CodedSystem, problem: PartitionedQuadratic,
                           L: float, tw: float, slack: float = 1e-8) -> InexactGradientReport:
    """Per-iteration ``||a^T h - tw grad f(bar_x)|| <= L ||a||_1 ||zt||_{2,inf}``."""
    a1 = float(np.abs(system.a_vec).sum())
    lhs = np.array([
        np.linalg.norm(weighted_gradient(system, traj.X[t]) - tw * problem.grad(traj.bar_x[t]))
        for t in range(len(traj.ks))
    ])
    return InexactGradientReport(lhs, L * a1 * traj.disagreement, slack)
