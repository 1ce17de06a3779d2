"""Trip-time / energy-cost trade-off sweeps and the preheating comparison."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .plan import PlanOutcome, plan_trip
from .scenario import CostWeights, Scenario
from .solver import SolverOptions


@dataclass
class ParetoPoint:
    time_weight_sek_per_s: float
    trip_time_s: float
    charge_time_s: float
    energy_cost_sek: float
    total_cost_sek: float
    status: str
    kkt: float
    wall_time_s: float


@dataclass
class ParetoFront:
    points: list[ParetoPoint]

    def optimal_front(self) -> "ParetoFront":
        """Frontier restricted to points the solver certified as optimal.

        Non-optimal points stay in ``points`` (flagged by status); trade-off
        consistency is only claimed across the certified subset.
        """
        return ParetoFront([p for p in self.points if p.status == "optimal"])

    def monotone_violations(self, tol: float = 1e-3) -> tuple[int, int]:
        """(trip-time increases, energy-cost decreases) along rising weight.

        ``tol`` (seconds and cost units) absorbs solver noise between points
        that are trade-off ties; real frontier movement is far larger.
        """
        pts = sorted(self.points, key=lambda p: p.time_weight_sek_per_s)
        t_up = sum(1 for a, b in zip(pts, pts[1:])
                   if b.trip_time_s > a.trip_time_s + tol)
        e_dn = sum(1 for a, b in zip(pts, pts[1:])
                   if b.energy_cost_sek < a.energy_cost_sek - tol)
        return t_up, e_dn

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c_t_trip", "trip_time_s", "chg_time_s", "energy_cost",
                        "status"])
            for p in sorted(self.points, key=lambda q: q.time_weight_sek_per_s):
                w.writerow([p.time_weight_sek_per_s, f"{p.trip_time_s:.3f}",
                            f"{p.charge_time_s:.3f}", f"{p.energy_cost_sek:.4f}",
                            p.status])


def _point(w: float, out: PlanOutcome) -> ParetoPoint:
    sol, res = out.solution, out.result
    return ParetoPoint(time_weight_sek_per_s=w, trip_time_s=sol.trip_time_s,
                       charge_time_s=sol.charge_time_s,
                       energy_cost_sek=sol.cost_energy_sek,
                       total_cost_sek=sol.cost_total_sek, status=res.status,
                       kkt=res.kkt, wall_time_s=res.wall_time_s)


def _solve_cold(args):
    scn, w, kw = args
    out = plan_trip(scn, weights=replace(scn.costs, time_sek_per_s=w),
                    check=False, **kw)
    return _point(w, out)


def sweep(scn: Scenario, weights, *, ds_m: float = 2000.0, n_tau: int = 20,
          options: SolverOptions | None = None, jobs: int = 1,
          log_fn=None) -> ParetoFront:
    """Solve the trip for each time weight.

    Sequential sweeps run in ascending weight order and warm-start each solve
    from the previous optimum (decision vector and multipliers), which keeps
    the family of solutions on one branch; ``jobs > 1`` solves cold in
    parallel processes instead.
    """
    ws = sorted(float(w) for w in weights)
    if ws and ws[0] < 0.0:
        # admitted, but the time term is then a reward bounded only by the
        # speed limits; flag it rather than refuse
        warnings.warn("negative time weight: objective bounded only by the "
                      "variable box", stacklevel=2)
    kw = dict(ds_m=ds_m, n_tau=n_tau, options=options)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            pts = list(ex.map(_solve_cold, [(scn, w, kw) for w in ws]))
        return ParetoFront(points=pts)
    pts = []
    z = lam = mu = None
    for w in ws:
        out = plan_trip(scn, weights=replace(scn.costs, time_sek_per_s=w),
                        check=False, warm_start=z, lam0=lam, mu0=mu,
                        log_fn=log_fn, **kw)
        pts.append(_point(w, out))
        z = out.problem.scale_out(out.result.z)
        lam, mu = out.result.lam, out.result.mu
    return ParetoFront(points=pts)


@dataclass
class PreconditioningStudy:
    with_btm: PlanOutcome
    without_btm: PlanOutcome

    @property
    def charge_time_ratio(self) -> float:
        return (self.without_btm.solution.charge_time_s /
                max(self.with_btm.solution.charge_time_s, 1e-9))

    def summary(self) -> str:
        a, b = self.with_btm.solution, self.without_btm.solution
        return (f"battery conditioning on:  {a.summary()}\n"
                f"battery conditioning off: {b.summary()}\n"
                f"charging time ratio (off/on): {self.charge_time_ratio:.2f}")


def preconditioning_study(scn: Scenario, *, ds_m: float = 2000.0,
                          n_tau: int = 20, options: SolverOptions | None = None,
                          check: bool = True, log_fn=None) -> PreconditioningStudy:
    """Same trip with and without battery-directed heating/cooling.

    The cabin load is untouched; only the battery heater and chiller are
    disabled in the second case, so the difference isolates what thermal
    preconditioning buys at the charging stop.
    """
    on = plan_trip(scn, ds_m=ds_m, n_tau=n_tau, options=options, check=check,
                   log_fn=log_fn)
    off = plan_trip(scn, ds_m=ds_m, n_tau=n_tau, options=options, check=check,
                    btm=False, log_fn=log_fn)
    return PreconditioningStudy(with_btm=on, without_btm=off)
