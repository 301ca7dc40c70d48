"""Continuous-time STL planning for linear systems under zero-order hold."""
from .dynamics import LinearSystem, TimeGrid, interpolate, mode_decompose, step_matrices
from .errors import CtstlError
from .scenario import EncodingConfig, Scenario, load_scenario
from .stl import discrete_robustness, parse, to_nnf

__version__ = "0.1.0"

__all__ = [
    "LinearSystem", "TimeGrid", "interpolate", "mode_decompose", "step_matrices", "CtstlError",
    "EncodingConfig", "Scenario", "load_scenario", "discrete_robustness", "parse", "to_nnf",
]
