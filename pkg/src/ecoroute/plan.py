"""One-call trip planning: transcribe, solve, extract and cross-check."""

from __future__ import annotations

from dataclasses import dataclass

from .scenario import CostWeights, Scenario
from .solver import NlpResult, SolverOptions, solve
from .transcription import NlpProblem, TripSolution, build_nlp, extract_solution
from .validator import ValidationReport, validate


@dataclass
class PlanOutcome:
    problem: NlpProblem
    result: NlpResult
    solution: TripSolution
    report: ValidationReport | None

    @property
    def ok(self) -> bool:
        good = self.result.status == "optimal"
        if self.report is not None:
            good = good and self.report.ok()
        return good


def plan_trip(scn: Scenario, *, ds_m: float = 2000.0, n_tau: int = 20,
              weights: CostWeights | None = None,
              options: SolverOptions | None = None, btm: bool = True,
              check: bool = True, sim_dt: float = 0.1,
              warm_start=None, lam0=None, mu0=None, log_fn=None) -> PlanOutcome:
    """Plan a trip and, by default, replay it through the time-domain model.

    ``warm_start`` takes a physical decision vector (for example from a
    previous solve with slightly different weights).
    """
    problem = build_nlp(scn, ds_m=ds_m, n_tau=n_tau, weights=weights, btm=btm)
    z0 = problem.scale_in(warm_start) if warm_start is not None else None
    result = solve(problem, options, z0=z0, lam0=lam0, mu0=mu0, log_fn=log_fn)
    solution = extract_solution(problem, result.z)
    solution.diagnostics = result.stats()
    report = validate(scn, solution, sim_dt) if check else None
    return PlanOutcome(problem=problem, result=result, solution=solution,
                       report=report)
