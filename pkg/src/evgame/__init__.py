"""Two-stage EV charging game: start-time selection under expected utility
or prospect theory, followed by a charging-energy subgame per start profile."""

from ._backend import BACKEND
from .inner_game import SolveOptions, SubgameSolution, solve_subgame
from .metrics import expected_outcome, savings_report, uncoordinated_baseline
from .outer_game import BehaviorModel, OuterSolution, iterate_to_equilibrium, prelec_weight
from .payoff_tensor import PayoffTensor, TensorOptions, build_tensor, cache_load
from .scenario import Scenario, generate_instance, paper_default

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BehaviorModel", "OuterSolution", "PayoffTensor", "Scenario", "SolveOptions",
    "SubgameSolution", "TensorOptions", "build_tensor", "cache_load", "expected_outcome",
    "generate_instance", "iterate_to_equilibrium", "paper_default", "prelec_weight",
    "savings_report", "solve_subgame", "uncoordinated_baseline",
]
