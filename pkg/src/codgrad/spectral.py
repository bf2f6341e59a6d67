"""Spectral certification of the lifted decoding matrix.

The consensus and convergence guarantees need the row-stochastic matrix to
have a simple unit eigenvalue with every other eigenvalue strictly inside the
unit disc.  This module checks that numerically and computes the stationary
vector, the projection onto consensus and a finite-horizon contraction
profile used by the bound checkers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundViolated, NoConvergence, NotRowStochastic, NotSimple

CLUSTER_TOL = 1e-8
NONZERO_TOL = 1e-6
EIG_SIZE_CAP = 2000


def eigen_spectrum(M, size_cap: int = EIG_SIZE_CAP) -> np.ndarray:
    """All eigenvalues of a dense real matrix, sorted by descending magnitude.

    Ties in magnitude are broken by real then imaginary part so the order is
    deterministic.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    if M.shape[0] > size_cap:
        raise ValueError(f"matrix size {M.shape[0]} exceeds cap {size_cap}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    ev = ev.astype(complex)
    order = np.lexsort((-ev.imag, -ev.real, -np.round(np.abs(ev), 12)))
    return ev[order]


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    simple_one: bool
    lambda2_mag: float
    tolerance: float

    @property
    def gap(self) -> float:
        return 1.0 - self.lambda2_mag


def _check_row_stochastic(M, tol):
    dev = np.max(np.abs(M.sum(axis=1) - 1.0))
    if dev > tol:
        raise NotRowStochastic(f"row sums deviate from 1 by {dev:.3e}")


def certify_sde(a_sde, tol: float = CLUSTER_TOL) -> SpectralReport:
    M = np.asarray(a_sde, dtype=float)
    _check_row_stochastic(M, max(tol, 1e-12))
    ev = eigen_spectrum(M)
    near_one = np.abs(ev - 1.0) <= tol
    rest = np.abs(ev[~near_one])
    lam2 = float(rest.max()) if rest.size else 0.0
    simple = bool(near_one.sum() == 1 and lam2 < 1.0 - tol)
    return SpectralReport(ev, simple, lam2, tol)


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    unmatched_sde: list
    unmatched_abs: list
    max_mismatch: float


def _match_multisets(a, b, tol):
    """Greedy nearest matching; returns leftovers of each side and worst pair."""
    b_left = list(b)
    unmatched_a = []
    worst = 0.0
    for x in sorted(a, key=lambda z: (-abs(z), -z.real, -z.imag)):
        if not b_left:
            unmatched_a.append(x)
            continue
        d = [abs(x - y) for y in b_left]
        k = int(np.argmin(d))
        if d[k] <= tol:
            worst = max(worst, d[k])
            b_left.pop(k)
        else:
            unmatched_a.append(x)
    return unmatched_a, b_left, worst


def multiplicity_equivalence(a_sde, abs_tilde_a, tol: float = CLUSTER_TOL,
                             nonzero_tol: float = NONZERO_TOL) -> EquivalenceReport:
    """Compare the nonzero eigenvalue multisets of the lifted and |normalized| matrices.

    ``nonzero_tol`` separates zero from nonzero eigenvalues; it is larger than
    ``tol`` because defective zero eigenvalues scatter to about sqrt(eps).
    """
    e1 = [z for z in eigen_spectrum(a_sde) if abs(z) > nonzero_tol]
    e2 = [z for z in eigen_spectrum(abs_tilde_a) if abs(z) > nonzero_tol]
    left1, left2, worst = _match_multisets(e1, e2, tol)
    return EquivalenceReport(not left1 and not left2, left1, left2, worst)


# --- stationary vector -----------------------------------------------------

def _left_eig_direct(M):
    ev, vl = np.linalg.eig(M.T)
    k = int(np.argmin(np.abs(ev - 1.0)))
    v = np.real(vl[:, k])
    return v / v.sum()


def _left_eig_inverse_iteration(M, shift=1.0 - 1e-7, iters=50, tol=1e-14):
    n = M.shape[0]
    K = M.T - shift * np.eye(n)
    v = np.full(n, 1.0 / n)
    for _ in range(iters):
        u = np.linalg.solve(K, v)
        u /= u.sum()
        if np.max(np.abs(u - v)) < tol:
            v = u
            break
        v = u
    return v


@dataclass(frozen=True)
class StationaryVector:
    a_sde: np.ndarray
    route_disagreement: float


def stationary_vector(a_sde, tol: float = CLUSTER_TOL) -> StationaryVector:
    """Left Perron vector normalized to sum one.

    Computed by a full eigendecomposition and by shifted inverse iteration on
    the transpose; the two must agree to 1e-9.  Round-off negatives above
    -1e-10 are clamped to zero and the vector renormalized.
    """
    M = np.asarray(a_sde, dtype=float)
    rep = certify_sde(M, tol)
    if not rep.simple_one:
        raise NotSimple("eigenvalue one is not simple")
    v1 = _left_eig_direct(M)
    v2 = _left_eig_inverse_iteration(M)
    disagreement = float(np.max(np.abs(v1 - v2)))
    if disagreement > 1e-9:
        raise NoConvergence(f"stationary-vector routes disagree by {disagreement:.3e}")
    v = v1
    if v.min() < -1e-10:
        raise BoundViolated(f"stationary vector has negative entry {v.min():.3e}")
    v = np.clip(v, 0.0, None)
    v = v / v.sum()
    v.setflags(write=False)
    return StationaryVector(v, disagreement)


def projection(a_vec) -> np.ndarray:
    a_vec = np.asarray(a_vec, dtype=float)
    return np.outer(np.ones_like(a_vec), a_vec)


def stacked_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.concatenate([w, w])


def tilde_w(a_vec, w) -> float:
    """Stationary-weighted decode weight; must lie in [min w, max w]."""
    a_vec = np.asarray(a_vec, dtype=float)
    w = np.asarray(w, dtype=float)
    ww = stacked_weights(w) if a_vec.size == 2 * w.size else w
    if ww.size != a_vec.size:
        raise ValueError("weight and stationary vector lengths are inconsistent")
    val = float(a_vec @ ww)
    lo, hi = float(w.min()), float(w.max())
    slack = 1e-12 * max(1.0, hi)
    if not (0 < lo and lo - slack <= val <= hi + slack):
        raise BoundViolated(f"tilde_w={val} outside [{lo}, {hi}]")
    return val


@dataclass(frozen=True)
class ContractionProfile:
    gamma: float
    c1_hat: float
    norms: np.ndarray  # norms[k-1] = ||(A_sde - P)^k||_inf for k = 1..K


def contraction_profile(a_sde, P, horizon: int = 200,
                        lambda2_mag: float | None = None) -> ContractionProfile:
    """Decay table of ``(A_sde - P)^k`` in the infinity operator norm.

    ``gamma = (1 + |lambda_2|) / 2`` and ``c1_hat`` is the smallest constant
    with ``||(A_sde - P)^k|| <= c1_hat * gamma^k`` for ``1 <= k <= horizon``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    M = np.asarray(a_sde, dtype=float)
    if lambda2_mag is None:
        lambda2_mag = certify_sde(M).lambda2_mag
    gamma = (1.0 + lambda2_mag) / 2.0
    D = M - np.asarray(P, dtype=float)
    norms = np.empty(horizon)
    Dk = np.eye(M.shape[0])
    for k in range(horizon):
        Dk = Dk @ D
        norms[k] = np.abs(Dk).sum(axis=1).max()
    ratios = norms / gamma ** np.arange(1, horizon + 1)
    return ContractionProfile(gamma, float(ratios.max()), norms)


@dataclass(frozen=True)
class SpectralSummary:
    """Everything the engine and harness need about one lifted matrix."""

    report: SpectralReport
    a_vec: np.ndarray
    P: np.ndarray
    tilde_w: float
    profile: ContractionProfile


def summarize(code, horizon: int = 200, tol: float = CLUSTER_TOL) -> SpectralSummary:
    rep = certify_sde(code.a_sde, tol)
    sv = stationary_vector(code.a_sde, tol)
    P = projection(sv.a_sde)
    tw = tilde_w(sv.a_sde, code.weights)
    prof = contraction_profile(code.a_sde, P, horizon, rep.lambda2_mag)
    return SpectralSummary(rep, sv.a_sde, P, tw, prof)
