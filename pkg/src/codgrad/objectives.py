"""Partitioned least-squares problems and their coded gradients.

``f(x) = sum_l ||G_l x - y_l||^2`` with ``y = G x_o``; gradients keep the
factor 2 (no 1/2 in the objective).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    IndivisiblePartition,
    SingularNormalEquations,
    Underdetermined,
)


@dataclass(frozen=True, eq=False)
class PartitionedQuadratic:
    G: np.ndarray          # Q x N, blocks are consecutive row slices
    y: np.ndarray
    x_o: np.ndarray
    m: int
    seed: int | None = None

    @property
    def Q(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def rows_per_block(self) -> int:
        return self.Q // self.m

    def block(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= l < self.m:
            raise IndexOutOfRange(f"block index {l} outside 0..{self.m - 1}")
        q = self.rows_per_block
        return self.G[l * q:(l + 1) * q], self.y[l * q:(l + 1) * q]

    @property
    def blocks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.block(l) for l in range(self.m)]

    @cached_property
    def hessians(self) -> np.ndarray:
        """``G_l^T G_l`` for every block, shape (m, N, N)."""
        return np.stack([Gl.T @ Gl for Gl, _ in self.blocks])

    @cached_property
    def linear_terms(self) -> np.ndarray:
        """``G_l^T y_l`` for every block, shape (m, N)."""
        return np.stack([Gl.T @ yl for Gl, yl in self.blocks])

    def f(self, x) -> float:
        r = self.G @ np.asarray(x, dtype=float) - self.y
        return float(r @ r)

    def local_objective(self, l: int, x) -> float:
        Gl, yl = self.block(l)
        r = Gl @ np.asarray(x, dtype=float) - yl
        return float(r @ r)

    def grad(self, x) -> np.ndarray:
        return 2.0 * self.G.T @ (self.G @ np.asarray(x, dtype=float) - self.y)


def generate_problem(Q: int, N: int, n_blocks: int, seed: int,
                     scale: float | None = None, x_o=None) -> PartitionedQuadratic:
    """Random Gaussian least-squares instance split into equal row blocks.

    Entries of G are i.i.d. normal with standard deviation ``scale``
    (default ``1/sqrt(Q)``, i.e. columns of unit expected norm); ``x_o`` is
    uniform on [-1, 1]^N and ``y = G x_o``.  G is drawn before ``x_o`` from
    ``numpy.random.default_rng(seed)``.
    """
    if Q < N:
        raise Underdetermined(f"Q={Q} < N={N}: the system must be overdetermined")
    if n_blocks < 1 or Q % n_blocks:
        raise IndivisiblePartition(f"Q={Q} is not divisible into {n_blocks} equal blocks")
    rng = np.random.default_rng(seed)
    sd = 1.0 / np.sqrt(Q) if scale is None else float(scale)
    G = rng.standard_normal((Q, N)) * sd
    drawn = rng.uniform(-1.0, 1.0, N)
    x_o = drawn if x_o is None else np.asarray(x_o, dtype=float)
    y = G @ x_o
    return PartitionedQuadratic(G, y, x_o, n_blocks, seed)


def local_gradient(problem: PartitionedQuadratic, l: int, x) -> np.ndarray:
    Gl, yl = problem.block(l)
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.N,):
        raise DimensionMismatch(f"x must have length {problem.N}")
    return 2.0 * Gl.T @ (Gl @ x - yl)


def coded_gradient(code, problem: PartitionedQuadratic, i: int, x) -> np.ndarray:
    """``sum_l B[i, l] * grad f_l(x)`` evaluated block by block."""
    if not 0 <= i < code.n:
        raise IndexOutOfRange(f"worker index {i} outside 0..{code.n - 1}")
    if code.m != problem.m:
        raise DimensionMismatch(f"code has m={code.m}, problem has m={problem.m}")
    out = np.zeros(problem.N)
    for l in range(problem.m):
        b = code.B[i, l]
        if b != 0.0:
            out += b * local_gradient(problem, l, x)
    return out


@dataclass(frozen=True, eq=False)
class CodedGradients:
    """Per-worker quadratic data: ``grad g_i(x) = 2 (hess[i] @ x - lin[i])``."""

    hess: np.ndarray   # (n, N, N)
    lin: np.ndarray    # (n, N)

    @property
    def n(self) -> int:
        return self.hess.shape[0]

    @property
    def N(self) -> int:
        return self.hess.shape[1]

    def gradient(self, i: int, x) -> np.ndarray:
        return 2.0 * (self.hess[i] @ x - self.lin[i])

    def all_gradients(self, X) -> np.ndarray:
        """Row ``i`` of the result is ``grad g_i(X[i])``."""
        return 2.0 * (np.einsum("ijk,ik->ij", self.hess, X) - self.lin)

    @classmethod
    def from_code(cls, code, problem: PartitionedQuadratic) -> "CodedGradients":
        if code.m != problem.m:
            raise DimensionMismatch(f"code has m={code.m}, problem has m={problem.m}")
        H, c = problem.hessians, problem.linear_terms
        hess = np.zeros((code.n, problem.N, problem.N))
        lin = np.zeros((code.n, problem.N))
        # accumulate in partition order; formation.NodeStore does the same
        for i in range(code.n):
            for l in range(problem.m):
                b = code.B[i, l]
                if b != 0.0:
                    hess[i] += b * H[l]
                    lin[i] += b * c[l]
        return cls(hess, lin)

    @classmethod
    def uncoded(cls, problem: PartitionedQuadratic) -> "CodedGradients":
        return cls(problem.hessians.copy(), problem.linear_terms.copy())


def exact_solution(problem: PartitionedQuadratic) -> np.ndarray:
    """Least-squares minimizer of ``||G x - y||``."""
    GtG = problem.G.T @ problem.G
    if np.linalg.matrix_rank(GtG) < problem.N:
        raise SingularNormalEquations("G^T G is singular")
    x, *_ = np.linalg.lstsq(problem.G, problem.y, rcond=None)
    return x


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing steps ``alpha_k = (k + a) ** -theta``."""

    a: float
    theta: float

    def __post_init__(self):
        if self.a < 1:
            raise ValueError(f"need a >= 1, got {self.a}")
        if not 0.5 < self.theta <= 1.0:
            raise ValueError(f"need theta in (1/2, 1], got {self.theta}")

    def __call__(self, k) -> float:
        return step(self, k)

    def alphas(self, K: int) -> np.ndarray:
        """``alpha_0 .. alpha_{K-1}``."""
        return (np.arange(K) + self.a) ** (-self.theta)

    def square_sum(self, K: int) -> float:
        return float(np.sum(self.alphas(K) ** 2))

    def square_sum_bound(self) -> float:
        """Upper bound on the full series sum of ``alpha_k^2``."""
        p = 2.0 * self.theta
        return self.a ** (-p) + self.a ** (1.0 - p) / (p - 1.0)


def step(schedule: StepSchedule, k) -> float:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return (k + schedule.a) ** (-schedule.theta)


class ObjectiveConstants(NamedTuple):
    L: float
    A_strong: float
    M_traj: float
    radius: float


def _spectral_norm_sym(H) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(H))))


def constants(code, problem: PartitionedQuadratic,
              trajectory_radius: float | None = None) -> ObjectiveConstants:
    """Lipschitz, strong-convexity and ball-local gradient bounds.

    The gradient bound is taken over the ball of radius ``trajectory_radius``
    (default ``10 * ||x_o||``) around the minimizer, where every coded
    gradient vanishes because the data are consistent.
    """
    cg = CodedGradients.from_code(code, problem)
    lip = [2.0 * _spectral_norm_sym(h) for h in cg.hess]
    GtG = problem.G.T @ problem.G
    lam_min = float(np.linalg.eigvalsh(GtG)[0])
    if lam_min <= 0:
        raise SingularNormalEquations("G^T G is not positive definite")
    radius = 10.0 * float(np.linalg.norm(problem.x_o)) if trajectory_radius is None else float(trajectory_radius)
    L = max(lip)
    return ObjectiveConstants(L, 2.0 * lam_min, L * radius, radius)


# --- text format ------------------------------------------------------------
# header "Q N m seed", a line "x_o v_1 .. v_N", then Q lines "g_1 .. g_N y".

def format_problem(problem: PartitionedQuadratic) -> str:
    seed = -1 if problem.seed is None else problem.seed
    lines = [f"{problem.Q} {problem.N} {problem.m} {seed}",
             "x_o " + " ".join(repr(float(v)) for v in problem.x_o)]
    for row, yv in zip(problem.G, problem.y):
        lines.append(" ".join(repr(float(v)) for v in row) + " " + repr(float(yv)))
    return "\n".join(lines) + "\n"


def parse_problem_text(text: str) -> PartitionedQuadratic:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    Q, N, m, seed = (int(t) for t in rows[0])
    if rows[1][0] != "x_o" or len(rows[1]) != N + 1:
        raise DimensionMismatch("second line must be 'x_o' followed by N values")
    x_o = np.array([float(t) for t in rows[1][1:]])
    data = np.array([[float(t) for t in r] for r in rows[2:]])
    if data.shape != (Q, N + 1):
        raise DimensionMismatch(f"expected {Q} rows of {N + 1} values, got {data.shape}")
    if Q % m:
        raise IndivisiblePartition(f"Q={Q} is not divisible into {m} equal blocks")
    return PartitionedQuadratic(data[:, :N].copy(), data[:, N].copy(), x_o, m,
                                None if seed < 0 else seed)


def read_problem(path) -> PartitionedQuadratic:
    return parse_problem_text(Path(path).read_text())


def write_problem(problem: PartitionedQuadratic, path) -> None:
    Path(path).write_text(format_problem(problem))
