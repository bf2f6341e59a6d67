"""Gradient-coding matrix pairs (A, B) and the decoding matrices derived from A.

Indices are 0-based throughout.  A decoding matrix ``A`` (n x n) and a coding
matrix ``B`` (n x m) form a valid code when ``A @ B`` is the all-ones matrix:
worker ``i`` recovers the full gradient as ``sum_j A[i, j] * grad g_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    DecodeIdentityViolated,
    DimensionMismatch,
    EmptyRow,
    Infeasible,
    ZeroRow,
)

ZERO_THRESHOLD = 1e-12
DEFAULT_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GradientCode:
    """A validated decoding/coding pair.  Build with :func:`validate_code`."""

    A: np.ndarray
    B: np.ndarray
    zero_threshold: float = ZERO_THRESHOLD
    residual: float = field(default=0.0)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @cached_property
    def gamma(self) -> tuple[tuple[int, ...], ...]:
        return neighbor_sets(self.A, self.zero_threshold)

    @cached_property
    def row_stragglers(self) -> tuple[int, ...]:
        """Per-row count of workers outside the neighbor set (informational)."""
        return tuple(self.n - len(g) for g in self.gamma)

    @property
    def s(self) -> int:
        return min(self.row_stragglers)

    @cached_property
    def weights(self) -> np.ndarray:
        return _frozen(decode_weights(self.A, self.zero_threshold))

    @cached_property
    def tilde_a(self) -> np.ndarray:
        return _frozen(normalized_decoding(self.A, self.zero_threshold))

    @cached_property
    def abs_tilde_a(self) -> np.ndarray:
        return _frozen(np.abs(self.tilde_a))

    @cached_property
    def a_sde(self) -> np.ndarray:
        return _frozen(build_sde(self.A, self.zero_threshold))

    def edges(self) -> set[tuple[int, int]]:
        """Undirected off-diagonal edges implied by the support of A."""
        return {
            (min(i, j), max(i, j))
            for i, row in enumerate(self.gamma)
            for j in row
            if i != j
        }


def validate_code(A, B, tol: float = DEFAULT_TOL,
                  zero_threshold: float = ZERO_THRESHOLD) -> GradientCode:
    """Check ``A @ B == 1`` entrywise within ``tol`` and that no row of A vanishes."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise DimensionMismatch(
            f"B must have {A.shape[0]} rows, got shape {B.shape}")
    for i, row in enumerate(A):
        if not np.any(np.abs(row) > zero_threshold):
            raise ZeroRow(i)
    dev = np.abs(A @ B - 1.0)
    idx = np.unravel_index(int(np.argmax(dev)), dev.shape)
    worst = float(dev[idx])
    if not worst <= tol:
        raise DecodeIdentityViolated(worst, tuple(int(t) for t in idx))
    return GradientCode(_frozen(A), _frozen(B), zero_threshold, worst)


def neighbor_sets(A, zero_threshold: float = ZERO_THRESHOLD) -> tuple[tuple[int, ...], ...]:
    """Index sets ``{j : |A[i, j]| > zero_threshold}`` for each row ``i``."""
    if zero_threshold < 0:
        raise ValueError("zero_threshold must be nonnegative")
    A = np.asarray(A, dtype=float)
    out = []
    for i, row in enumerate(A):
        g = tuple(int(j) for j in np.flatnonzero(np.abs(row) > zero_threshold))
        if not g:
            raise EmptyRow(i)
        out.append(g)
    return tuple(out)


def _support(A, zero_threshold):
    A = np.asarray(A, dtype=float)
    neighbor_sets(A, zero_threshold)  # raises EmptyRow
    return np.where(np.abs(A) > zero_threshold, A, 0.0)


def decode_weights(A, zero_threshold: float = ZERO_THRESHOLD) -> np.ndarray:
    """Reciprocal l1 mass of each row of A over its neighbor set."""
    S = _support(A, zero_threshold)
    return 1.0 / np.abs(S).sum(axis=1)


def normalized_decoding(A, zero_threshold: float = ZERO_THRESHOLD) -> np.ndarray:
    S = _support(A, zero_threshold)
    return decode_weights(S, zero_threshold)[:, None] * S


def build_sde(A, zero_threshold: float = ZERO_THRESHOLD) -> np.ndarray:
    """Lift the normalized decoding matrix to the 2n x 2n row-stochastic matrix.

    Positive parts go to the left block columns and negative parts to the
    right ones; the top and bottom row blocks are identical.
    """
    T = normalized_decoding(A, zero_threshold)
    pos = np.maximum(T, 0.0)
    neg = np.maximum(-T, 0.0)
    top = np.hstack([pos, neg])
    return np.vstack([top, top])


# --- support patterns and generators ---------------------------------------

def cyclic_support(n: int, s: int) -> np.ndarray:
    """Boolean mask of the full cyclic assignment.

    In 1-based terms entry (i, j) is in the support when
    ``i <= j <= min(i + n - s, n)`` or ``j + s <= i``.
    """
    if n < 1 or not 0 <= s < n:
        raise ValueError(f"need n >= 1 and 0 <= s < n, got n={n}, s={s}")
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    return ((i <= j) & (j <= np.minimum(i + n - s, n))) | (j + s <= i)


def _sample_on(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mag = rng.uniform(0.5, 1.5, size=mask.shape)
    sign = np.where(rng.random(mask.shape) < 0.5, -1.0, 1.0)
    return np.where(mask, sign * mag, 0.0)


def code_from_decoding(A, m: int, tol: float = 1e-8) -> GradientCode:
    """Complete A with the minimum-Frobenius-norm B solving ``A @ B = 1``."""
    A = np.asarray(A, dtype=float)
    rhs = np.ones((A.shape[0], m))
    B, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return validate_code(A, B, tol=tol)


def _generate_on_mask(mask, m, seed, retries, what):
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(retries):
        A = _sample_on(mask, rng)
        try:
            return code_from_decoding(A, m)
        except DecodeIdentityViolated as exc:
            last = exc
    raise Infeasible(
        f"{what}: no decodable sample in {retries} draws (last residual {last.worst:.3e})")


def generate_cyclic_code(n: int, s: int, m: int, seed: int = 0,
                         retries: int = 20) -> GradientCode:
    """Random decoding matrix on the cyclic support plus its least-norm B.

    Support entries have magnitude in [0.5, 1.5] with a uniform random sign.
    """
    if m < n:
        raise ValueError(f"need m >= n, got m={m}, n={n}")
    mask = cyclic_support(n, s)
    return _generate_on_mask(mask, m, seed, retries, f"cyclic(n={n}, s={s})")


def closed_neighborhoods(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool)
    return adj | np.eye(adj.shape[0], dtype=bool)


def generate_graph_code(adjacency, m: int | None = None, seed: int = 0,
                        retries: int = 20) -> GradientCode:
    """Random decoding matrix supported on the closed neighborhoods of a graph.

    The result always passes :func:`check_topology_match` for that graph.
    """
    mask = closed_neighborhoods(adjacency)
    n = mask.shape[0]
    return _generate_on_mask(mask, n if m is None else m, seed, retries, "graph code")


# --- structural checks -----------------------------------------------------

def check_topology_match(A, edges: Iterable[tuple[int, int]],
                         zero_threshold: float = ZERO_THRESHOLD) -> list[tuple[int, int]]:
    """Off-diagonal nonzeros of A that are not edges of the undirected graph."""
    A = np.asarray(A, dtype=float)
    allowed = {(min(i, j), max(i, j)) for i, j in edges}
    bad = []
    for i, j in zip(*np.nonzero(np.abs(A) > zero_threshold)):
        i, j = int(i), int(j)
        if i != j and (min(i, j), max(i, j)) not in allowed:
            bad.append((i, j))
    return bad


class MinDegree(NamedTuple):
    delta_out: int
    delta_in: int
    satisfied: bool


def check_min_degree(A, zero_threshold: float = ZERO_THRESHOLD) -> MinDegree:
    nz = np.abs(np.asarray(A, dtype=float)) > zero_threshold
    n = nz.shape[0]
    d_out = int(nz.sum(axis=1).min())
    d_in = int(nz.sum(axis=0).min())
    return MinDegree(d_out, d_in, min(d_out, d_in) > n / 2)


def check_irreducible(M, zero_threshold: float = 0.0) -> bool:
    """Strong connectivity of the directed graph of nonzero entries."""
    adj = np.abs(np.asarray(M, dtype=float)) > zero_threshold
    n = adj.shape[0]
    if n == 0:
        return True

    def reach(graph):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            u = frontier.pop()
            for v in np.flatnonzero(graph[u] & ~seen):
                seen[v] = True
                frontier.append(int(v))
        return seen.all()

    return bool(reach(adj) and reach(adj.T))


# --- text format ----------------------------------------------------------
# first line "n m", then n rows of A, then n rows of B.  Tokens may be
# decimals or exact fractions such as 5/9.

def _parse_number(tok: str) -> float:
    return float(Fraction(tok)) if "/" in tok else float(tok)


def parse_code_text(text: str, tol: float = DEFAULT_TOL) -> GradientCode:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise DimensionMismatch("code file must start with a line 'n m'")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != 2 * n:
        raise DimensionMismatch(f"expected {2 * n} matrix rows, found {len(body)}")
    A = np.array([[_parse_number(t) for t in r] for r in body[:n]])
    B = np.array([[_parse_number(t) for t in r] for r in body[n:]])
    if A.shape != (n, n) or B.shape != (n, m):
        raise DimensionMismatch(f"matrix rows do not match header n={n} m={m}")
    return validate_code(A, B, tol=tol)


def format_code(code: GradientCode) -> str:
    lines = [f"{code.n} {code.m}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in code.A]
    lines += [" ".join(repr(float(v)) for v in row) for row in code.B]
    return "\n".join(lines) + "\n"


def read_code(path, tol: float = DEFAULT_TOL) -> GradientCode:
    return parse_code_text(Path(path).read_text(), tol=tol)


def write_code(code: GradientCode, path) -> None:
    Path(path).write_text(format_code(code))
