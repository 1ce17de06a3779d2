"""Time-domain replay oracle: simulation, constraint families, accounting."""

from dataclasses import replace

import numpy as np
import pytest

from ecoroute import models
from ecoroute.scenario import BatteryParams, ThermalParams, VehicleParams
from ecoroute.transcription import ChargeStopSol, DriveSegmentSol, TripSolution
from ecoroute.validator import (algebraic_battery_power, check_constraints,
                                cost_accounting, simulate_time_domain,
                                time_rhs_charging, time_rhs_driving, validate)

from conftest import toy_cold_scenario


def hand_solution(scn, v, n_nodes=21):
    """Constant-speed open-loop plan on a flat road; controls only matter."""
    veh = scn.vehicle
    s = np.linspace(0.0, scn.road.length_m, n_nodes)
    e = v ** 2 / 2
    at = float(models.accel_air(np.array(v), veh) +
               models.accel_grade_roll(0.0, veh))
    zeros = np.zeros(n_nodes)
    seg = DriveSegmentSol(s_m=s, v_mps=np.full(n_nodes, float(v)),
                          soc=np.full(n_nodes, scn.boundary.soc0),
                          temp_c=np.full(n_nodes, scn.boundary.temp0_c),
                          p_hvch_w=zeros, p_hvac_w=zeros,
                          a_t_mps2=np.full(n_nodes, at), p_b_w=zeros)
    t = scn.road.length_m / v
    return TripSolution(segments=[seg], stops=[], ds_m=s[1] - s[0],
                        n_tau=2, time_weight_sek_per_s=scn.costs.time_sek_per_s,
                        drive_time_s=t, charge_time_s=0.0, trip_time_s=t,
                        cost_time_sek=0.03 * t, cost_energy_sek=0.0,
                        cost_occupancy_sek=0.0, cost_total_sek=0.03 * t)


class TestTimeRhs:
    def test_parked_equilibrium(self, cruise_scn):
        # no actuation, no load, battery at ambient: nothing moves
        veh = replace(cruise_scn.vehicle, p_aux_w=0.0)
        bat, th = cruise_scn.battery, cruise_scn.thermal
        dsoc, dt_b = time_rhs_charging(0.6, th.t_amb_c, 0.0, 0.0, 0.0,
                                       veh, bat, th)
        assert dsoc == 0.0
        assert dt_b == 0.0

    def test_driving_acceleration_identity(self, cruise_scn):
        # dv/dt = a_t - drag - rolling on flat ground
        veh, bat, th = (cruise_scn.vehicle, cruise_scn.battery,
                        cruise_scn.thermal)
        v = 24.0
        dv, _, _ = time_rhs_driving(v, 0.6, 10.0, 0.0, 0.0, 1.1, 20e3, 0.0,
                                    veh, bat, th)
        expect = 1.1 - float(models.accel_air(np.array(v), veh)) \
            - float(models.accel_grade_roll(0.0, veh))
        np.testing.assert_allclose(dv, expect)

    def test_discharge_depletes_charge_replenishes(self, cruise_scn):
        veh, bat, th = (cruise_scn.vehicle, cruise_scn.battery,
                        cruise_scn.thermal)
        _, d_dis, _ = time_rhs_driving(20.0, 0.5, 0.0, 0.0, 0.0, 0.0, 30e3,
                                       0.0, veh, bat, th)
        d_chg, _ = time_rhs_charging(0.5, 0.0, 0.0, 0.0, -30e3, veh, bat, th)
        assert d_dis < 0.0 < d_chg

    def test_algebraic_power_solves_balance(self, cruise_scn):
        bat = cruise_scn.battery
        load, soc, t_b = 40e3, 0.45, -3.0
        pb = algebraic_battery_power(load, soc, t_b, bat)
        u = models.u_oc(soc, bat)
        r = float(models.internal_resistance(np.array(t_b), bat))
        np.testing.assert_allclose(pb - r * pb ** 2 / u ** 2, load, rtol=1e-12)


class TestSimulate:
    def test_constant_speed_steady_state(self, cruise_scn):
        sol = hand_solution(cruise_scn, v=25.0)
        trace = simulate_time_domain(cruise_scn, sol, dt=0.1)
        ph = trace.phases[0]
        assert np.max(np.abs(ph.v_mps - 25.0)) < 1e-6
        np.testing.assert_allclose(trace.trip_time_s,
                                   cruise_scn.road.length_m / 25.0, rtol=1e-9)

    def test_node_landings_exact(self, cruise_scn):
        # every control-interval boundary appears as a sample position
        sol = hand_solution(cruise_scn, v=22.0, n_nodes=11)
        trace = simulate_time_domain(cruise_scn, sol, dt=0.1)
        s = trace.phases[0].s_m
        for node in sol.segments[0].s_m:
            assert np.min(np.abs(s - node)) < 1e-8

    def test_dt_convergence(self, cruise_solved):
        scn, out = cruise_solved
        t1 = simulate_time_domain(scn, out.solution, dt=0.2).trip_time_s
        t2 = simulate_time_domain(scn, out.solution, dt=0.1).trip_time_s
        assert abs(t1 - t2) / t2 < 1e-4

    def test_monotone_time_and_position(self, cruise_solved):
        scn, out = cruise_solved
        trace = simulate_time_domain(scn, out.solution, dt=0.1)
        for ph in trace.phases:
            assert np.all(np.diff(ph.t_s) > 0.0)
            assert np.all(np.diff(ph.s_m) >= 0.0)

    def test_trace_csv_header(self, cruise_solved, tmp_path):
        scn, out = cruise_solved
        trace = simulate_time_domain(scn, out.solution, dt=0.5)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        head = path.read_text().splitlines()[0]
        assert head.startswith("t_s,s_m,v_mps,soc,T_b_C,P_b_W,P_grid_W,mode")


class TestCheckConstraints:
    def test_clean_solution_passes(self, cruise_solved):
        scn, out = cruise_solved
        report = validate(scn, out.solution, dt=0.1)
        assert report.ok(1e-3)
        assert report.family_violation["speed"] <= 1e-3

    def test_planted_speed_violation_flagged(self, cruise_solved):
        scn, out = cruise_solved
        trace = simulate_time_domain(scn, out.solution, dt=0.1)
        vmax = float(scn.road.vmax_mps[0])
        vmin = float(scn.road.vmin_mps[0])
        trace.phases[0].v_mps[7] = vmax + 1.0
        report = check_constraints(scn, out.solution, trace)
        np.testing.assert_allclose(report.family_violation["speed"],
                                   1.0 / (vmax - vmin), rtol=1e-9)

    def test_energy_closure_tight(self, cruise_solved):
        scn, out = cruise_solved
        report = validate(scn, out.solution, dt=0.1)
        assert report.energy_closure_rel < 1e-3

    def test_report_round_trips_to_json(self, cruise_solved, tmp_path):
        scn, out = cruise_solved
        report = validate(scn, out.solution, dt=0.5)
        path = tmp_path / "report.json"
        report.save(path)
        import json
        doc = json.loads(path.read_text())
        assert doc["max_violation"] == report.max_violation
        assert "speed" in doc["family_violation"]


class TestCostAccounting:
    def fake_stop(self, t_chg, p_grid, n_tau=5):
        tau = np.linspace(0.0, 1.0, n_tau)
        const = np.full(n_tau, p_grid)
        zeros = np.zeros(n_tau)
        return ChargeStopSol(position_m=9000.0, t_chg_s=t_chg,
                             sigma_s=0.0, tau=tau, soc=np.full(n_tau, 0.5),
                             temp_c=zeros, p_hvch_w=zeros, p_hvac_w=zeros,
                             p_grid_w=const, p_b_w=zeros, grid_energy_j=0.0,
                             energy_cost_sek=0.0, occupancy_cost_sek=0.0)

    def charging_case(self, occupancy):
        scn = toy_cold_scenario(occupancy_sek_per_s=occupancy,
                                free_time_s=600.0)
        sol = hand_solution(scn, v=20.0)
        sol.stops = [self.fake_stop(600.0, 150e3)]
        trace = simulate_time_domain(scn, hand_solution(scn, v=20.0), dt=1.0)
        return scn, sol, trace

    def test_grid_energy_price_example(self):
        # 150 kW held for 600 s at 5 SEK/kWh: 150*600/3600*5 = 125 SEK
        scn, sol, trace = self.charging_case(occupancy=0.0)
        cost = cost_accounting(scn, sol, trace)
        np.testing.assert_allclose(cost["energy_sek"], 125.0, rtol=1e-12)

    def test_zero_occupancy_weight_means_zero_fee(self):
        scn, sol, trace = self.charging_case(occupancy=0.0)
        assert cost_accounting(scn, sol, trace)["occupancy_sek"] == 0.0

    def test_fee_applies_beyond_free_window(self):
        scn, sol, trace = self.charging_case(occupancy=0.5)
        sol.stops[0].t_chg_s = 900.0
        cost = cost_accounting(scn, sol, trace)
        np.testing.assert_allclose(cost["occupancy_sek"], 0.5 * 300.0)

    def test_nlp_and_oracle_costs_agree(self, cruise_solved):
        scn, out = cruise_solved
        report = validate(scn, out.solution, dt=0.1)
        assert abs(report.cost_sim_sek - report.cost_nlp_sek) \
            / report.cost_nlp_sek < 0.01
