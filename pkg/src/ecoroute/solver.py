"""Bound-constrained augmented Lagrangian solver.

Equalities and inequalities enter a Powell-Hestenes-Rockafellar augmented
Lagrangian; the box-constrained inner subproblems go to L-BFGS-B.  Multipliers
update by the first-order rule (lam += rho*c, mu = max(0, mu + rho*g)) every
outer iteration; the penalty grows only when the constraint violation fails to
shrink enough, so well-scaled problems converge with a moderate penalty.
Everything is deterministic: no randomization, and the optional wall clock
limit only truncates the outer loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, minimize


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 2000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    lbfgs_mem: int = 20
    multiplier_max: float = 1e10
    time_limit_s: float | None = None


@dataclass
class NlpResult:
    z: np.ndarray
    f: float                 # physical objective value
    kkt: float
    ceq_norm: float          # scaled infinity norms
    cineq_norm: float
    lam: np.ndarray
    mu: np.ndarray
    status: str              # optimal | max_outer | time_limit | stalled
    n_outer: int
    n_inner: int
    n_evals: int
    penalty: float
    wall_time_s: float
    log: list[str] = field(default_factory=list)

    def stats(self) -> dict:
        return {"status": self.status, "objective_sek": self.f, "kkt": self.kkt,
                "eq_violation": self.ceq_norm, "ineq_violation": self.cineq_norm,
                "outer_iterations": self.n_outer, "inner_iterations": self.n_inner,
                "evaluations": self.n_evals, "penalty": self.penalty,
                "wall_time_s": self.wall_time_s}


def gradients(problem, z):
    """Objective gradient and constraint Jacobians at a scaled point."""
    f, g = problem.objective(z, grad=True)
    ceq, cin, jeq, jin = problem.constraints(z, jac=True)
    return f, g, ceq, cin, jeq, jin


def kkt_residual(problem, z, lam, mu):
    """First-order optimality residual at (z, lam, mu).

    Maximum over the projected Lagrangian gradient, the equality violation,
    the inequality violation and the complementarity measure min(mu, -g).
    """
    _, g, ceq, cin, jeq, jin = gradients(problem, z)
    grad_l = g
    if ceq.size:
        grad_l = grad_l + jeq.T @ lam
    if cin.size:
        grad_l = grad_l + jin.T @ mu
    pg = z - np.clip(z - grad_l, problem.lb, problem.ub)
    stat = float(np.max(np.abs(pg))) if pg.size else 0.0
    v_eq = float(np.max(np.abs(ceq))) if ceq.size else 0.0
    v_in = float(np.max(np.maximum(cin, 0.0))) if cin.size else 0.0
    comp = float(np.max(np.minimum(mu, np.maximum(-cin, 0.0)))) if cin.size else 0.0
    return max(stat, v_eq, v_in, comp)


class _AugLag:
    """Augmented Lagrangian value/gradient with an evaluation counter."""

    def __init__(self, problem, lam, mu, rho):
        self.p = problem
        self.lam, self.mu, self.rho = lam, mu, rho
        self.n_evals = 0
        self.last = None  # (z, grad, ceq, cin) from the latest evaluation

    def __call__(self, z):
        self.n_evals += 1
        f, g = self.p.objective(z, grad=True)
        ceq, cin, jeq, jin = self.p.constraints(z, jac=True)
        act = np.maximum(0.0, self.mu + self.rho * cin)
        val = f
        grad = g
        if ceq.size:
            val += self.lam @ ceq + 0.5 * self.rho * (ceq @ ceq)
            grad = grad + jeq.T @ (self.lam + self.rho * ceq)
        if cin.size:
            val += (act @ act - self.mu @ self.mu) / (2.0 * self.rho)
            grad = grad + jin.T @ act
        self.last = (z.copy(), grad, ceq, cin)
        return val, grad


def solve(problem, options: SolverOptions | None = None, z0=None, lam0=None,
          mu0=None, log_fn=None) -> NlpResult:
    """Solve the NLP; supports warm starts for the point and multipliers."""
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    deadline = t0 + opts.time_limit_s if opts.time_limit_s else None
    lb, ub = problem.lb, problem.ub
    bounds = Bounds(lb, ub)
    z = np.clip(np.array(problem.z0 if z0 is None else z0, dtype=float), lb, ub)
    lam = np.zeros(problem.m_eq) if lam0 is None else np.array(lam0, dtype=float)
    mu = np.zeros(problem.m_ineq) if mu0 is None else np.array(mu0, dtype=float)
    mu = np.maximum(mu, 0.0)
    rho = opts.penalty_init
    omega = 1e-2            # inner stationarity target, tightens per iteration
    lines = []
    n_inner_total = 0
    n_evals = 0
    status = "max_outer"
    kkt = np.inf
    v_eq = v_in = np.inf
    f_phys = np.nan
    n_outer = 0
    viol_prev = np.inf
    kkt_best = np.inf
    no_progress = 0
    for k in range(opts.max_outer):
        n_outer = k + 1
        aug = _AugLag(problem, lam, mu, rho)
        res = minimize(aug, z, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_inner, "maxcor": opts.lbfgs_mem,
                                "ftol": 1e-16, "gtol": omega, "maxls": 60})
        z = np.clip(res.x, lb, ub)
        if aug.last is not None and np.array_equal(aug.last[0], z):
            _, grad, ceq, cin = aug.last
        else:
            _, grad = aug(z)
            _, _, ceq, cin = aug.last
        n_inner_total += res.nit
        n_evals += aug.n_evals
        lam_hat = lam + rho * ceq
        mu_hat = np.maximum(0.0, mu + rho * cin)
        # the inner gradient equals the Lagrangian gradient at the shifted
        # multipliers, so its projection measures stationarity directly
        pg = z - np.clip(z - grad, lb, ub)
        stat = float(np.max(np.abs(pg))) if pg.size else 0.0
        v_eq = float(np.max(np.abs(ceq))) if ceq.size else 0.0
        v_in = float(np.max(np.maximum(cin, 0.0))) if cin.size else 0.0
        comp = float(np.max(np.minimum(mu_hat, np.maximum(-cin, 0.0)))) \
            if cin.size else 0.0
        kkt = max(stat, v_eq, v_in, comp)
        f_phys = problem.objective(z)[0] / problem.obj_scale
        line = (f"{k:3d}  f={f_phys: .6e}  ceq={v_eq:.3e}  cineq={v_in:.3e}  "
                f"kkt={kkt:.3e}  rho={rho:.1e}  inner={res.nit}")
        lines.append(line)
        if log_fn:
            log_fn(line)
        if kkt <= opts.kkt_tol:
            status = "optimal"
            lam, mu = lam_hat, mu_hat
            break
        if deadline is not None and time.perf_counter() > deadline:
            status = "time_limit"
            break
        lam = np.clip(lam_hat, -opts.multiplier_max, opts.multiplier_max)
        mu = np.clip(mu_hat, 0.0, opts.multiplier_max)
        viol = max(v_eq, v_in)
        if viol <= opts.feas_tol:
            # multipliers carry the constraints now; relax the penalty so the
            # inner problem conditioning allows a tight stationarity push
            rho = max(opts.penalty_init, 0.25 * rho)
        elif viol > 10.0 * opts.feas_tol and viol > 0.5 * viol_prev:
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
        viol_prev = viol
        # floor the inner target at what double precision supports: the
        # achievable projected gradient scales like sqrt(rho * eps)
        omega = max(0.1 * opts.kkt_tol, 3e-9 * np.sqrt(rho), 0.2 * omega)
        if kkt < 0.9 * kkt_best:
            kkt_best = kkt
            no_progress = 0
        else:
            no_progress += 1
            if no_progress >= 8:
                status = "stalled"
                break
    return NlpResult(z=z, f=f_phys, kkt=kkt, ceq_norm=v_eq, cineq_norm=v_in,
                     lam=lam, mu=mu, status=status, n_outer=n_outer,
                     n_inner=n_inner_total, n_evals=n_evals, penalty=rho,
                     wall_time_s=time.perf_counter() - t0, log=lines)
