"""Independent time-domain replay of a planned trip.

The planner works in space (driving) and normalized stop time (charging);
this module re-integrates the planned controls in plain time with RK4 and
checks the result against the declared bounds.  Controls are zero-order-hold:
while driving the active control interval is looked up by position, at a stop
by normalized time.  Battery power is not taken from the plan; it is
recomputed at every integration stage from the power balance, so the replay
only trusts the plan's controls, never its states.

The integrator lands exactly on every control boundary (Newton on the step
length while driving, plain arithmetic at a stop), which keeps the hold
pattern exact and the accuracy at the full RK4 order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .autodiff import value
from .scenario import BatteryParams, Scenario, ThermalParams, VehicleParams, resample_road
from .transcription import TripSolution


def time_rhs_driving(v, soc, t_b, p_hvch, p_hvac, a_t, p_b, alpha,
                     veh: VehicleParams, bat: BatteryParams, th: ThermalParams):
    """Time-domain derivatives (dv/dt, dsoc/dt, dT/dt) while driving."""
    dv = a_t - models.accel_air(v, veh) - models.accel_grade_roll(alpha, veh)
    u = models.u_oc(soc, bat)
    dsoc = -p_b / (bat.capacity_c * u)
    p_loss = models.drivetrain_loss(veh.mass_kg * a_t, v, veh)
    q_pass, q_act, q_exh = models.heat_rates(p_b, p_loss, v, t_b, p_hvch, p_hvac,
                                             soc, veh, bat, th)
    dt_b = (q_pass + q_act + q_exh) / bat.cp_mb_j_per_k
    return dv, dsoc, dt_b


def time_rhs_charging(soc, t_b, p_hvch, p_hvac, p_b,
                      veh: VehicleParams, bat: BatteryParams, th: ThermalParams):
    """Time-domain derivatives (dsoc/dt, dT/dt) while parked at a charger."""
    u = models.u_oc(soc, bat)
    dsoc = -p_b / (bat.capacity_c * u)
    q_pass, q_act, q_exh = models.heat_rates(p_b, 0.0, 0.0, t_b, p_hvch, p_hvac,
                                             soc, veh, bat, th)
    return dsoc, (q_pass + q_act + q_exh) / bat.cp_mb_j_per_k


def algebraic_battery_power(load, soc, t_b, bat: BatteryParams) -> float:
    """Battery power on the stable branch for a given terminal load."""
    u = models.u_oc(soc, bat)
    r_b = value(models.internal_resistance(np.asarray(t_b, dtype=float), bat))
    return float(models.battery_power_root(load, u, r_b))


@dataclass
class SimPhase:
    kind: str                   # "drive" or "charge"
    t_s: np.ndarray             # trip-global time
    s_m: np.ndarray             # position (constant while charging)
    v_mps: np.ndarray
    soc: np.ndarray
    temp_c: np.ndarray
    p_b_w: np.ndarray
    p_hvch_w: np.ndarray
    p_hvac_w: np.ndarray
    p_grid_w: np.ndarray
    a_t_mps2: np.ndarray


@dataclass
class SimTrace:
    phases: list[SimPhase]
    drive_time_s: float
    charge_time_s: float
    trip_time_s: float
    terminal_soc: float
    terminal_temp_c: float
    grid_energy_j: float
    battery_energy_j: float     # integral of battery power over the trip

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "s_m", "v_mps", "soc", "T_b_C", "P_b_W",
                        "P_grid_W", "mode", "P_hvch_W", "P_hvac_W", "a_t_mps2"])
            for ph in self.phases:
                for j in range(ph.t_s.size):
                    w.writerow([ph.t_s[j], ph.s_m[j], ph.v_mps[j], ph.soc[j],
                                ph.temp_c[j], ph.p_b_w[j], ph.p_grid_w[j],
                                ph.kind, ph.p_hvch_w[j], ph.p_hvac_w[j],
                                ph.a_t_mps2[j]])


def _rk4_drive(state, u, alpha, h, veh, bat, th):
    """One driving RK4 step on (s, v, soc, T); battery power from the balance
    at every stage."""
    p_hvch, p_hvac, a_t = u

    def f(x):
        s, v, soc, t_b = x
        load = veh.mass_kg * a_t * v + models.drivetrain_loss(
            veh.mass_kg * a_t, v, veh) + p_hvch + p_hvac + veh.p_cabin_w + veh.p_aux_w
        p_b = algebraic_battery_power(load, soc, t_b, bat)
        dv, dsoc, dt_b = time_rhs_driving(v, soc, t_b, p_hvch, p_hvac, a_t, p_b,
                                          alpha, veh, bat, th)
        return np.array([v, dv, dsoc, dt_b]), p_b

    x = np.asarray(state, dtype=float)
    k1, pb = f(x)
    k2, _ = f(x + 0.5 * h * k1)
    k3, _ = f(x + 0.5 * h * k2)
    k4, _ = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), pb


def _rk4_charge(state, u, h, veh, bat, th):
    p_hvch, p_hvac, p_grid = u

    def f(x):
        soc, t_b = x
        load = p_hvch + p_hvac + veh.p_aux_w - p_grid
        p_b = algebraic_battery_power(load, soc, t_b, bat)
        dsoc, dt_b = time_rhs_charging(soc, t_b, p_hvch, p_hvac, p_b, veh, bat, th)
        return np.array([dsoc, dt_b]), p_b

    x = np.asarray(state, dtype=float)
    k1, pb = f(x)
    k2, _ = f(x + 0.5 * h * k1)
    k3, _ = f(x + 0.5 * h * k2)
    k4, _ = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), pb


def simulate_time_domain(scn: Scenario, sol: TripSolution, dt: float = 0.1) -> SimTrace:
    """Replay the planned controls through the time-domain model."""
    veh, bat, th = scn.vehicle, scn.battery, scn.thermal
    grid = resample_road(scn.road, sol.ds_m)
    phases = []
    t_glob = 0.0
    drive_time = 0.0
    charge_time = 0.0
    soc = float(scn.boundary.soc0)
    t_b = float(scn.boundary.temp0_c)
    e_batt = 0.0
    e_grid = 0.0

    def grade_at(s):
        k = min(int(s / grid.ds_m), grid.grade_rad.size - 1)
        return grid.grade_rad[k]

    for si, seg in enumerate(sol.segments):
        s, v = float(seg.s_m[0]), float(seg.v_mps[0])
        rows = [(t_glob, s, v, soc, t_b)]
        us = []
        n_int = seg.s_m.size - 1
        for k in range(n_int):
            target = float(seg.s_m[k + 1])
            u = (float(seg.p_hvch_w[k]), float(seg.p_hvac_w[k]),
                 float(seg.a_t_mps2[k]))
            while s < target - 1e-9:
                x = np.array([s, v, soc, t_b])
                alpha = grade_at(s + 1e-9)
                pb0 = _drive_pb(v, soc, t_b, u, veh, bat)
                x_new, _ = _rk4_drive(x, u, alpha, dt, veh, bat, th)
                if x_new[0] > target + 1e-9:
                    # Newton on the step length to land on the node exactly
                    h = (target - s) / max(v, 1e-6)
                    for _ in range(6):
                        x_new, _ = _rk4_drive(x, u, alpha, h, veh, bat, th)
                        err = x_new[0] - target
                        if abs(err) <= 1e-10 * max(1.0, target):
                            break
                        h -= err / max(x_new[1], 1e-6)
                    x_new[0] = target
                    step = h
                else:
                    step = dt
                s, v, soc, t_b = x_new
                e_batt += 0.5 * step * (pb0 + _drive_pb(v, soc, t_b, u, veh, bat))
                t_glob += step
                rows.append((t_glob, s, v, soc, t_b))
                us.append(u)
        arr = np.array(rows)
        node_pb = np.array([_drive_pb(r[2], r[3], r[4], us[min(i, len(us) - 1)],
                                      veh, bat) for i, r in enumerate(rows)])
        u_arr = np.array(us + [us[-1]]) if us else np.zeros((1, 3))
        phases.append(SimPhase(
            kind="drive", t_s=arr[:, 0], s_m=arr[:, 1], v_mps=arr[:, 2],
            soc=arr[:, 3], temp_c=arr[:, 4], p_b_w=node_pb,
            p_hvch_w=u_arr[:, 0], p_hvac_w=u_arr[:, 1],
            p_grid_w=np.zeros(arr.shape[0]), a_t_mps2=u_arr[:, 2]))
        drive_time += arr[-1, 0] - arr[0, 0]
        soc, t_b = float(arr[-1, 3]), float(arr[-1, 4])
        if si < len(sol.stops):
            st = sol.stops[si]
            t_chg = float(st.t_chg_s)
            n_tau = st.tau.size
            h_int = t_chg / (n_tau - 1)
            rows = [(t_glob, soc, t_b)]
            us = []
            for j in range(n_tau - 1):
                u = (float(st.p_hvch_w[j]), float(st.p_hvac_w[j]),
                     float(st.p_grid_w[j]))
                e_grid += u[2] * h_int
                remaining = h_int
                while remaining > 1e-12:
                    step = min(dt, remaining)
                    x = np.array([soc, t_b])
                    pb0 = _charge_pb(soc, t_b, u, veh, bat)
                    x_new, _ = _rk4_charge(x, u, step, veh, bat, th)
                    soc, t_b = x_new
                    e_batt += 0.5 * step * (pb0 + _charge_pb(soc, t_b, u, veh, bat))
                    t_glob += step
                    remaining -= step
                    rows.append((t_glob, soc, t_b))
                    us.append(u)
            arr = np.array(rows)
            node_pb = np.array([_charge_pb(r[1], r[2], us[min(i, len(us) - 1)],
                                           veh, bat) for i, r in enumerate(rows)])
            u_arr = np.array(us + [us[-1]]) if us else np.zeros((1, 3))
            phases.append(SimPhase(
                kind="charge", t_s=arr[:, 0],
                s_m=np.full(arr.shape[0], st.position_m),
                v_mps=np.zeros(arr.shape[0]), soc=arr[:, 1], temp_c=arr[:, 2],
                p_b_w=node_pb, p_hvch_w=u_arr[:, 0], p_hvac_w=u_arr[:, 1],
                p_grid_w=u_arr[:, 2], a_t_mps2=np.zeros(arr.shape[0])))
            charge_time += t_chg
            soc, t_b = float(arr[-1, 1]), float(arr[-1, 2])
    return SimTrace(phases=phases, drive_time_s=drive_time,
                    charge_time_s=charge_time,
                    trip_time_s=drive_time + charge_time,
                    terminal_soc=soc, terminal_temp_c=t_b,
                    grid_energy_j=e_grid, battery_energy_j=e_batt)


def _drive_pb(v, soc, t_b, u, veh, bat):
    p_hvch, p_hvac, a_t = u
    load = veh.mass_kg * a_t * v + models.drivetrain_loss(veh.mass_kg * a_t, v, veh) \
        + p_hvch + p_hvac + veh.p_cabin_w + veh.p_aux_w
    return algebraic_battery_power(load, soc, t_b, bat)


def _charge_pb(soc, t_b, u, veh, bat):
    p_hvch, p_hvac, p_grid = u
    load = p_hvch + p_hvac + veh.p_aux_w - p_grid
    return algebraic_battery_power(load, soc, t_b, bat)


@dataclass
class ValidationReport:
    family_violation: dict[str, float]
    max_violation: float
    trip_time_nlp_s: float
    trip_time_sim_s: float
    trip_time_rel_err: float
    terminal_soc_nlp: float
    terminal_soc_sim: float
    terminal_soc_rel_err: float
    terminal_temp_nlp_c: float
    terminal_temp_sim_c: float
    terminal_temp_rel_err: float
    cost_nlp_sek: float
    cost_sim_sek: float
    energy_closure_rel: float
    details: dict = field(default_factory=dict)

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_violation <= tol

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["family_violation"] = dict(self.family_violation)
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def check_constraints(scn: Scenario, sol: TripSolution, trace: SimTrace) -> ValidationReport:
    """Scaled constraint-family violations of the replayed trajectory.

    Each violation is normalized by its family's bound range, so a value of
    1e-3 means 0.1 percent of the admissible span regardless of units.
    """
    veh, bat, th = scn.vehicle, scn.battery, scn.thermal
    grid = resample_road(scn.road, sol.ds_m)
    chargers = sorted(scn.chargers, key=lambda c: c.position_m)
    fam = {k: 0.0 for k in ("speed", "soc_box", "temp_box", "batt_power",
                            "accel", "hvch", "hvac", "grid_power", "stop_time",
                            "terminal")}

    def bump(key, viol):
        fam[key] = max(fam[key], float(viol))

    for ph in trace.phases:
        soc, t_b = ph.soc, ph.temp_c
        span_soc = bat.soc_max - bat.soc_min
        bump("soc_box", np.max((soc - bat.soc_max) / span_soc))
        bump("soc_box", np.max((bat.soc_min - soc) / span_soc))
        span_t = th.t_max_c - th.t_min_c
        bump("temp_box", np.max((t_b - th.t_max_c) / span_t))
        bump("temp_box", np.max((th.t_min_c - t_b) / span_t))
        lo = models.p_chg_limit(soc, t_b, bat)
        hi = models.p_dchg_limit(soc, t_b, bat)
        span_p = np.maximum(hi - lo, 1.0)
        bump("batt_power", np.max((ph.p_b_w - hi) / span_p))
        bump("batt_power", np.max((lo - ph.p_b_w) / span_p))
        if ph.kind == "drive":
            frac = np.clip(ph.s_m / grid.ds_m, 0.0, grid.n_nodes - 1)
            i0 = np.clip(frac.astype(int), 0, grid.n_nodes - 2)
            w = frac - i0
            vmax = grid.vmax_mps[i0] * (1 - w) + grid.vmax_mps[i0 + 1] * w
            vmin = grid.vmin_mps[i0] * (1 - w) + grid.vmin_mps[i0 + 1] * w
            span_v = np.maximum(vmax - vmin, 0.1)
            bump("speed", np.max((ph.v_mps - vmax) / span_v))
            bump("speed", np.max((vmin - ph.v_mps) / span_v))
            _, amax = models.accel_limits(ph.v_mps, veh)
            bump("accel", np.max((np.abs(ph.a_t_mps2) - amax) / (2 * veh.a_cap_mps2)))
            cap = max(veh.p_hvch_max_w - veh.p_cabin_w, 1.0)
            bump("hvch", np.max((ph.p_hvch_w - cap) / veh.p_hvch_max_w))
        else:
            bump("hvch", np.max((ph.p_hvch_w - veh.p_hvch_max_w) / veh.p_hvch_max_w))
        bump("hvch", np.max(-ph.p_hvch_w / veh.p_hvch_max_w))
        bump("hvac", np.max((ph.p_hvac_w - veh.p_hvac_max_w) / veh.p_hvac_max_w))
        bump("hvac", np.max(-ph.p_hvac_w / veh.p_hvac_max_w))
    for st, c in zip(sol.stops, chargers):
        bump("grid_power", np.max((st.p_grid_w - c.p_max_w) / c.p_max_w))
        bump("grid_power", np.max(-st.p_grid_w / c.p_max_w))
        bump("stop_time", (st.t_chg_s - c.t_chg_max_s) / c.t_chg_max_s)
        bump("stop_time", -st.t_chg_s / c.t_chg_max_s)
    bd = scn.boundary
    bump("terminal", bd.soc_final_min - trace.terminal_soc)
    if bd.temp_final_min_c is not None:
        bump("terminal", (bd.temp_final_min_c - trace.terminal_temp_c) /
             (th.t_max_c - th.t_min_c))

    nlp_term_soc = sol.stops[-1].soc[-1] if (sol.stops and
                                             len(sol.stops) == len(sol.segments)) \
        else sol.segments[-1].soc[-1]
    nlp_term_temp = sol.stops[-1].temp_c[-1] if (sol.stops and
                                                 len(sol.stops) == len(sol.segments)) \
        else sol.segments[-1].temp_c[-1]
    # energy closure: battery energy integral must match the open-circuit
    # energy released by the state-of-charge swing (exact for linear u_oc)
    soc0 = bd.soc0
    socf = trace.terminal_soc
    e_chem = bat.capacity_c * (bat.u0_v * (soc0 - socf) +
                               0.5 * bat.u1_v * (soc0 ** 2 - socf ** 2))
    scale_e = max(abs(trace.battery_energy_j), abs(e_chem),
                  bat.capacity_c * bat.u0_v * 0.01)
    closure = abs(trace.battery_energy_j - e_chem) / scale_e
    cost_sim = cost_accounting(scn, sol, trace)["total_sek"]
    rel = lambda a, b: abs(a - b) / max(abs(b), 1.0)
    report = ValidationReport(
        family_violation=fam, max_violation=max(fam.values()),
        trip_time_nlp_s=sol.trip_time_s, trip_time_sim_s=trace.trip_time_s,
        trip_time_rel_err=rel(trace.trip_time_s, sol.trip_time_s),
        terminal_soc_nlp=float(nlp_term_soc), terminal_soc_sim=trace.terminal_soc,
        terminal_soc_rel_err=abs(trace.terminal_soc - nlp_term_soc) /
        max(abs(nlp_term_soc), 1e-2),
        terminal_temp_nlp_c=float(nlp_term_temp),
        terminal_temp_sim_c=trace.terminal_temp_c,
        terminal_temp_rel_err=abs(trace.terminal_temp_c - nlp_term_temp) /
        max(abs(nlp_term_temp), 1.0),
        cost_nlp_sek=sol.cost_total_sek, cost_sim_sek=cost_sim,
        energy_closure_rel=closure,
        details={"grid_energy_j": trace.grid_energy_j,
                 "battery_energy_j": trace.battery_energy_j})
    return report


def cost_accounting(scn: Scenario, sol: TripSolution, trace: SimTrace) -> dict:
    """Trip cost recomputed from the replayed trajectory.

    Time cost uses the simulated trip time; charging energy integrates the
    held grid power over each stop (exact for piecewise-constant power);
    occupancy applies the fee to time beyond the free window, independent of
    the solver's slack variables.
    """
    chargers = sorted(scn.chargers, key=lambda c: c.position_m)
    time_sek = sol.time_weight_sek_per_s * trace.trip_time_s
    energy_sek = sum(c.energy_price_sek_per_j * float(st.p_grid_w[:-1].sum()) *
                     st.t_chg_s / (st.tau.size - 1)
                     for st, c in zip(sol.stops, chargers))
    occupancy_sek = sum(c.occupancy_sek_per_s * max(0.0, st.t_chg_s - c.free_time_s)
                        for st, c in zip(sol.stops, chargers))
    return {"time_sek": time_sek, "energy_sek": energy_sek,
            "occupancy_sek": occupancy_sek,
            "total_sek": time_sek + energy_sek + occupancy_sek}


def validate(scn: Scenario, sol: TripSolution, dt: float = 0.1) -> ValidationReport:
    """Simulate and check in one call."""
    return check_constraints(scn, sol, simulate_time_domain(scn, sol, dt))
