"""Risk-aware distributed resource allocation with side information."""

from .baselines import centralized_solve, desira_solve, greedy_fcfs, no_side_info_solve
from .coordinator import RiskInputs, SolveReport, run
from .domain import (AdmmConfig, Agent, AllocationState, CostModel, ProblemInstance, RiskConfig,
                     Station, total_cost, validate)
from .harness import evaluate
from .scenario import ScenarioConfig, generate_constellation, generate_urban

__all__ = [
    "AdmmConfig", "Agent", "AllocationState", "CostModel", "ProblemInstance", "RiskConfig",
    "RiskInputs", "ScenarioConfig", "SolveReport", "Station", "centralized_solve", "desira_solve",
    "evaluate", "generate_constellation", "generate_urban", "greedy_fcfs", "no_side_info_solve",
    "run", "total_cost", "validate",
]
__version__ = "0.1.0"
