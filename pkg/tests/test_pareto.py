"""Weight sweeps, frontier monotonicity and the conditioning comparison."""

from dataclasses import replace

import numpy as np
import pytest

from ecoroute.pareto import (ParetoFront, ParetoPoint, preconditioning_study,
                             sweep)
from ecoroute.plan import plan_trip
from ecoroute.scenario import Boundary, ThermalParams
from ecoroute.solver import SolverOptions

from conftest import toy_cold_scenario


def point(w, trip, energy, status="optimal"):
    return ParetoPoint(time_weight_sek_per_s=w, trip_time_s=trip,
                       charge_time_s=0.0, energy_cost_sek=energy,
                       total_cost_sek=0.0, status=status, kkt=1e-7,
                       wall_time_s=0.1)


class TestFrontBookkeeping:
    def test_monotone_counts_reversals(self):
        front = ParetoFront(points=[point(0.01, 900.0, 40.0),
                                    point(0.02, 950.0, 39.0),
                                    point(0.03, 940.0, 41.0)])
        # 0.01 -> 0.02 raises trip time and drops energy: one of each
        assert front.monotone_violations() == (1, 1)

    def test_monotone_accepts_ties(self):
        front = ParetoFront(points=[point(0.01, 900.0, 40.0),
                                    point(0.02, 900.0, 40.0)])
        assert front.monotone_violations() == (0, 0)

    def test_optimal_front_filters_flagged_points(self):
        front = ParetoFront(points=[point(0.01, 950.0, 40.0),
                                    point(0.02, 990.0, 38.0, status="stalled"),
                                    point(0.03, 900.0, 41.0)])
        good = front.optimal_front()
        assert [p.time_weight_sek_per_s for p in good.points] == [0.01, 0.03]
        assert good.monotone_violations() == (0, 0)
        assert len(front.points) == 3   # flagged point kept on the original

    def test_csv_format(self, tmp_path):
        front = ParetoFront(points=[point(0.02, 950.0, 39.0),
                                    point(0.01, 900.0, 40.0)])
        path = tmp_path / "front.csv"
        front.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "c_t_trip,trip_time_s,chg_time_s,energy_cost,status"
        assert len(lines) == 3
        assert lines[1].startswith("0.01,")   # rows sorted by weight


class TestSweep:
    def test_single_weight_equals_direct_solve(self, cruise_scn):
        w = cruise_scn.costs.time_sek_per_s
        front = sweep(cruise_scn, [w], ds_m=1000.0, n_tau=12)
        direct = plan_trip(cruise_scn, ds_m=1000.0, n_tau=12, check=False)
        assert len(front.points) == 1
        p = front.points[0]
        assert p.status == "optimal"
        np.testing.assert_allclose(p.trip_time_s, direct.solution.trip_time_s,
                                   rtol=1e-6)
        np.testing.assert_allclose(p.total_cost_sek,
                                   direct.solution.cost_total_sek, rtol=1e-6)

    def test_warm_continuation_monotone(self, cruise_scn):
        front = sweep(cruise_scn, [0.02, 0.03, 0.04], ds_m=1000.0, n_tau=12)
        assert all(p.status == "optimal" for p in front.points)
        assert front.monotone_violations() == (0, 0)

    def test_negative_weight_flagged(self, cruise_scn):
        with pytest.warns(UserWarning, match="negative time weight"):
            front = sweep(cruise_scn, [-0.01], ds_m=1000.0, n_tau=12,
                          options=SolverOptions(kkt_tol=1e-4))
        # slower is rewarded: the cruise pins to the lower speed band
        # (short of the fixed fast launch speed at the first node)
        trip = front.points[0].trip_time_s
        slow = cruise_scn.road.length_m / float(cruise_scn.road.vmin_mps[0])
        np.testing.assert_allclose(trip, slow, rtol=0.02)


class TestPreconditioningStudy:
    def test_warm_plateau_ratio_near_one(self):
        """Above the cold knee, battery heating buys no charging speed."""
        scn = toy_cold_scenario(occupancy_sek_per_s=0.0)
        scn.thermal = ThermalParams(t_amb_c=30.0)
        scn.boundary = Boundary(v0_mps=20.0, soc0=0.40, temp0_c=30.0,
                                soc_final_min=0.62)
        study = preconditioning_study(scn, ds_m=1500.0, n_tau=8,
                                      options=SolverOptions(kkt_tol=3e-5,
                                                            feas_tol=3e-6),
                                      check=False)
        assert study.with_btm.result.status == "optimal"
        assert study.without_btm.result.status == "optimal"
        assert 0.9 <= study.charge_time_ratio <= 1.1
        assert "ratio" in study.summary()
