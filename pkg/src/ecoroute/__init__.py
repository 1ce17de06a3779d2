"""Joint eco-driving, battery thermal management and charging optimization."""

from .pareto import ParetoFront, ParetoPoint, preconditioning_study, sweep
from .plan import PlanOutcome, plan_trip
from .scenario import (BatteryParams, Boundary, Charger, CostWeights,
                       RoadProfile, Scenario, ScenarioError, ThermalParams,
                       VehicleParams, load_scenario, packaged_scenario,
                       save_scenario)
from .solver import NlpResult, SolverOptions, solve
from .transcription import NlpProblem, TripSolution, build_nlp, extract_solution
from .validator import SimTrace, ValidationReport, simulate_time_domain, validate

__version__ = "0.1.0"

__all__ = [
    "BatteryParams", "Boundary", "Charger", "CostWeights", "NlpProblem",
    "NlpResult", "ParetoFront", "ParetoPoint", "PlanOutcome", "RoadProfile",
    "Scenario", "ScenarioError", "SimTrace", "SolverOptions", "ThermalParams",
    "TripSolution", "ValidationReport", "VehicleParams", "build_nlp",
    "extract_solution", "load_scenario", "packaged_scenario", "plan_trip",
    "preconditioning_study", "save_scenario", "simulate_time_domain", "solve",
    "sweep", "validate",
]
