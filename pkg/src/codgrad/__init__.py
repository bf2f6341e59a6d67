"""Coded distributed gradient descent: coding matrices, spectral certification,
the decentralized iteration, baselines, network formation and experiments."""

from .coding import GradientCode, generate_cyclic_code, generate_graph_code, validate_code
from .engine import CodedSystem, DGDSystem, RunConfig, Trajectory, run
from .objectives import PartitionedQuadratic, StepSchedule, generate_problem
from .presets import PRESET_NAMES, preset
from .spectral import certify_sde, stationary_vector, summarize

__version__ = "0.1.0"

__all__ = [
    "GradientCode", "generate_cyclic_code", "generate_graph_code", "validate_code",
    "CodedSystem", "DGDSystem", "RunConfig", "Trajectory", "run",
    "PartitionedQuadratic", "StepSchedule", "generate_problem",
    "PRESET_NAMES", "preset",
    "certify_sde", "stationary_vector", "summarize",
]
