"""Augmented Lagrangian solver on hand-checked problems."""

import numpy as np
import pytest

from ecoroute.solver import SolverOptions, gradients, kkt_residual, solve


class QuadraticProblem:
    """min z'Az + b'z with optional single linear equality / inequality."""

    def __init__(self, a_diag, b, lb, ub, eq=None, ineq=None):
        self.a = np.asarray(a_diag, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)
        self.eq = eq      # (coeffs, rhs) meaning coeffs @ z - rhs = 0
        self.ineq = ineq  # (coeffs, rhs) meaning coeffs @ z - rhs <= 0
        self.n = self.b.size
        self.m_eq = 0 if eq is None else 1
        self.m_ineq = 0 if ineq is None else 1
        self.z0 = np.zeros(self.n)
        self.obj_scale = 1.0

    def objective(self, z, grad=False):
        f = float(z @ (self.a * z) + self.b @ z)
        return (f, 2.0 * self.a * z + self.b)

    def constraints(self, z, jac=False):
        ceq = np.empty(0)
        jeq = np.empty((0, self.n))
        cin = np.empty(0)
        jin = np.empty((0, self.n))
        if self.eq is not None:
            c, r = self.eq
            ceq = np.array([c @ z - r])
            jeq = np.asarray(c, dtype=float)[None, :]
        if self.ineq is not None:
            c, r = self.ineq
            cin = np.array([c @ z - r])
            jin = np.asarray(c, dtype=float)[None, :]
        return ceq, cin, jeq, jin


def equality_example():
    # min (z1-1)^2 + (z2-2)^2  s.t.  z1 + z2 = 1
    return QuadraticProblem([1.0, 1.0], [-2.0, -4.0], [-10, -10], [10, 10],
                            eq=(np.array([1.0, 1.0]), 1.0))


class TestHandSolvedProblems:
    def test_equality_constrained_minimum(self):
        """Stationarity 2(z-target) + lam*[1,1] = 0 gives z*=(0,1), lam=2."""
        res = solve(equality_example(), SolverOptions(kkt_tol=1e-9))
        assert res.status == "optimal"
        np.testing.assert_allclose(res.z, [0.0, 1.0], atol=1e-7)
        np.testing.assert_allclose(res.lam, [2.0], atol=1e-6)

    def test_kkt_zero_at_analytic_solution(self):
        p = equality_example()
        r = kkt_residual(p, np.array([0.0, 1.0]), np.array([2.0]), np.empty(0))
        assert r <= 1e-12

    def test_inequality_active_at_minimum(self):
        # same target through g = z1 + z2 - 1 <= 0; constraint binds, mu = 2
        p = QuadraticProblem([1.0, 1.0], [-2.0, -4.0], [-10, -10], [10, 10],
                             ineq=(np.array([1.0, 1.0]), 1.0))
        res = solve(p, SolverOptions(kkt_tol=1e-9))
        assert res.status == "optimal"
        np.testing.assert_allclose(res.z, [0.0, 1.0], atol=1e-7)
        np.testing.assert_allclose(res.mu, [2.0], atol=1e-6)

    def test_inactive_inequality_has_zero_multiplier(self):
        p = QuadraticProblem([1.0, 1.0], [-2.0, -4.0], [-10, -10], [10, 10],
                             ineq=(np.array([1.0, 1.0]), 100.0))
        res = solve(p, SolverOptions(kkt_tol=1e-9))
        np.testing.assert_allclose(res.z, [1.0, 2.0], atol=1e-7)
        np.testing.assert_allclose(res.mu, [0.0], atol=1e-9)

    def test_box_only_clips_separable_optimum(self):
        # unconstrained minimum (3, -4) clipped to the box
        p = QuadraticProblem([1.0, 1.0], [-6.0, 8.0], [0.0, -1.0], [2.0, 1.0])
        res = solve(p, SolverOptions(kkt_tol=1e-9))
        assert res.status == "optimal"
        np.testing.assert_allclose(res.z, [2.0, -1.0], atol=1e-8)

    def test_unconstrained_quadratic_kkt_zero_at_minimum(self):
        p = QuadraticProblem([1.0, 2.0], [-2.0, -8.0], [-10, -10], [10, 10])
        r = kkt_residual(p, np.array([1.0, 2.0]), np.empty(0), np.empty(0))
        assert r == 0.0


class TestGradientsHelper:
    def test_matches_closed_form(self):
        p = equality_example()
        rng = np.random.default_rng(5)
        z = rng.uniform(-3, 3, 2)
        _, g, ceq, cin, jeq, jin = gradients(p, z)
        np.testing.assert_allclose(g, 2.0 * z + p.b, rtol=0, atol=1e-14)
        np.testing.assert_allclose(jeq, [[1.0, 1.0]])


class TestSolveBehavior:
    def test_deterministic(self):
        a = solve(equality_example(), SolverOptions())
        b = solve(equality_example(), SolverOptions())
        assert np.array_equal(a.z, b.z)
        assert a.n_inner == b.n_inner
        assert a.log == b.log

    def test_warm_start_returns_immediately(self):
        # restart from a tighter optimum: the first outer check passes as-is
        p = equality_example()
        first = solve(p, SolverOptions())
        second = solve(p, SolverOptions(kkt_tol=1e-5), z0=first.z,
                       lam0=first.lam, mu0=first.mu)
        assert second.status == "optimal"
        assert second.n_outer == 1
        assert second.n_inner == 0
        np.testing.assert_allclose(second.z, first.z, atol=1e-9)

    def test_result_invariants(self):
        res = solve(equality_example(), SolverOptions())
        assert res.status == "optimal"
        assert res.kkt <= 1e-6
        assert np.all(res.z >= -10.0) and np.all(res.z <= 10.0)
        assert res.wall_time_s >= 0.0

    def test_log_line_format(self):
        lines = []
        solve(equality_example(), SolverOptions(), log_fn=lines.append)
        assert lines
        for line in lines:
            assert "f=" in line and "ceq=" in line and "kkt=" in line \
                and "rho=" in line

    def test_time_limit_status(self):
        # microscopic budget: the loop stops after the first outer iteration
        p = QuadraticProblem([1.0, 1.0], [-2.0, -4.0], [-10, -10], [10, 10],
                             eq=(np.array([1.0, 3.0]), 2.0))
        res = solve(p, SolverOptions(kkt_tol=1e-14, time_limit_s=1e-9))
        assert res.status == "time_limit"
        assert res.n_outer == 1

    def test_stats_keys(self):
        res = solve(equality_example(), SolverOptions())
        stats = res.stats()
        for key in ("status", "kkt", "inner_iterations", "wall_time_s"):
            assert key in stats
