"""Energy-aware dynamic resource allocation in virtual sensor networks."""

from .checker import Allocation, Violation, check
from .engine import Simulator, run
from .metrics import RunMetrics, aggregate, emit_csv
from .model import IlpModel, ObjectivePolicy, PriorState, build_model
from .scenario import (
    Application,
    GeneratorConfig,
    RadioModel,
    Scenario,
    SensorNode,
    coverage_set,
    generate_instance,
    interference_range,
    link_viable,
    transmission_range,
)
from .solver import SolveResult, SolverConfig, lp_relax_solve, solve

__all__ = [
    "Allocation", "Application", "GeneratorConfig", "IlpModel", "ObjectivePolicy",
    "PriorState", "RadioModel", "RunMetrics", "Scenario", "SensorNode", "Simulator",
    "SolveResult", "SolverConfig", "Violation", "aggregate", "build_model", "check",
    "coverage_set", "emit_csv", "generate_instance", "interference_range", "link_viable",
    "lp_relax_solve", "run", "solve", "transmission_range",
]
