"""Compiled-in experiment presets (exact rational matrices)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr

import numpy as np

from .coding import GradientCode, validate_code
from .objectives import StepSchedule
from .spectral import certify_sde

THREE_NODE_A = [
    [Fr(0), Fr(1), Fr(5, 9)],
    [Fr(1), Fr(9, 4), Fr(0)],
    [Fr(-4, 5), Fr(0), Fr(1)],
]
THREE_NODE_B = [
    [Fr(1), Fr(-5, 4), Fr(0)],
    [Fr(0), Fr(1), Fr(4, 9)],
    [Fr(9, 5), Fr(0), Fr(1)],
]

FIVE_NODE_A = [
    [Fr(1, 2), Fr(1, 4), Fr(0), Fr(0), Fr(1, 4)],
    [Fr(1), Fr(1), Fr(1), Fr(0), Fr(0)],
    [Fr(0), Fr(-1), Fr(-8, 5), Fr(1), Fr(0)],
    [Fr(0), Fr(0), Fr(-2, 5), Fr(-1), Fr(1)],
    [Fr(2), Fr(0), Fr(0), Fr(5), Fr(-3)],
]
FIVE_NODE_B = [
    [Fr(1), Fr(2), Fr(1, 2), Fr(0), Fr(0)],
    [Fr(0), Fr(-1), Fr(3), Fr(4), Fr(0)],
    [Fr(0), Fr(0), Fr(-5, 2), Fr(-3), Fr(1)],
    [Fr(1), Fr(0), Fr(0), Fr(1, 5), Fr(13, 5)],
    [Fr(2), Fr(1), Fr(0), Fr(0), Fr(4)],
]

# data-exchange graphs (0-based); each is the symmetrized support of A
THREE_NODE_EDGES = ((0, 1), (0, 2), (1, 2))
FIVE_NODE_EDGES = ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4))

# the 6-node network used to illustrate coordinated formation (coordinator 0)
SIX_NODE_EDGES = ((0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 5))


def rational_product(A, B):
    return [[sum((a * b for a, b in zip(row, col)), Fr(0)) for col in zip(*B)] for row in A]


def to_array(M) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in M])


@dataclass(frozen=True, eq=False)
class Preset:
    name: str
    code: GradientCode
    Q: int
    N: int
    schedules: tuple[StepSchedule, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return self.code.n


def _build(name, A, B, Q, N, schedules, edges) -> Preset:
    if any(v != 1 for row in rational_product(A, B) for v in row):
        raise AssertionError(f"{name}: A B != 1 in exact arithmetic")
    code = validate_code(to_array(A), to_array(B), tol=1e-12)
    if not certify_sde(code.a_sde).simple_one:
        raise AssertionError(f"{name}: lifted decoding matrix fails certification")
    return Preset(name, code, Q, N, tuple(StepSchedule(a, t) for a, t in schedules), edges)


_CACHE: dict[str, Preset] = {}


def preset(name: str) -> Preset:
    if name not in _CACHE:
        if name == "three-node":
            _CACHE[name] = _build(name, THREE_NODE_A, THREE_NODE_B, 225, 75,
                                  [(300, 0.75), (500, 0.85)], THREE_NODE_EDGES)
        elif name == "five-node":
            _CACHE[name] = _build(name, FIVE_NODE_A, FIVE_NODE_B, 250, 50,
                                  [(800, 0.90), (500, 0.95)], FIVE_NODE_EDGES)
        else:
            raise KeyError(f"unknown preset {name!r}; choose three-node or five-node")
    return _CACHE[name]


PRESET_NAMES = ("three-node", "five-node")
