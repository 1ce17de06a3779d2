"""Transcription of the hybrid trip problem into a finite NLP.

Driving segments (between charging stops) are discretized over distance with
one node per grid point; each node carries state (E, soc, T_b) and controls
(P_hvch_b, P_hvac_b, a_t) plus the algebraic battery power P_b.  Charging
stops are discretized over normalized stop time tau in [0, 1] with the stop
duration t_chg a scalar decision variable.  Dynamics enter as RK4 defect
equalities with controls held constant over the interval and several RK4
substeps per interval; inside the defect integrand the battery power is
eliminated through the power balance (stable root), so the integrated path
is exactly the one a time-domain replay of the same controls produces.  The
nodal P_b variables are tied to the states by a balance equality at every
node and carry the battery power limit constraints.  Driving time is a
composite Simpson integral of inverse speed over the substep points of the
same integration, not a node quadrature, which keeps the objective's time
accounting consistent with the integrated dynamics.  Path limits that depend
on the state are imposed on each control against both endpoint states of its
interval, which bounds the excursion a zero-order-hold control can make
between nodes.

All decision variables are scaled by powers of two (exact in binary) and all
constraint rows carry fixed family scales, so the solver sees an O(1)
problem; evaluators unscale internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dynamics, models
from .autodiff import value
from .scenario import (Charger, CostWeights, ResampledRoad, Scenario, ScenarioError,
                       resample_road, snap_chargers)


def rk4_step(rhs, x, u, h):
    """One classical RK4 step; controls held constant over the step.

    ``x`` is a tuple of state components (arrays or duals); ``rhs(x, u)``
    returns the matching tuple of derivatives.
    """
    def axpy(a, ks):
        return tuple(xi + a * ki for xi, ki in zip(x, ks))

    k1 = rhs(x, u)
    k2 = rhs(axpy(h / 2, k1), u)
    k3 = rhs(axpy(h / 2, k2), u)
    k4 = rhs(axpy(h, k3), u)
    return tuple(xi + (h / 6) * (a + 2 * b + 2 * c + d)
                 for xi, a, b, c, d in zip(x, k1, k2, k3, k4))


def reduced_driving_rhs(e, soc, t_b, p_hvch, p_hvac, a_t, alpha,
                        veh, bat, th):
    """Space-domain driving derivatives with P_b eliminated via the balance."""
    load = dynamics.battery_load_driving(e, t_b, p_hvch, p_hvac, a_t, veh)
    u = models.u_oc(soc, bat)
    r_b = models.internal_resistance(t_b, bat)
    p_b = models.battery_power_root(load, u, r_b)
    return dynamics.driving_rhs(e, soc, t_b, p_hvch, p_hvac, a_t, p_b,
                                alpha, veh, bat, th)


def reduced_charging_rhs(soc, t_b, p_hvch, p_hvac, p_grid, t_chg,
                         veh, bat, th):
    """Tau-domain charging derivatives with P_b eliminated via the balance."""
    load = dynamics.battery_load_charging(p_hvch, p_hvac, p_grid, veh)
    u = models.u_oc(soc, bat)
    r_b = models.internal_resistance(t_b, bat)
    p_b = models.battery_power_root(load, u, r_b)
    return dynamics.charging_rhs(soc, t_b, p_hvch, p_hvac, p_b, t_chg,
                                 veh, bat, th)


def integrate_drive_interval(e, soc, t_b, p_hvch, p_hvac, a_t, alpha, ds,
                             veh, bat, th, n_sub=4):
    """Integrate one driving interval with ``n_sub`` RK4 substeps.

    Returns the end state (E, soc, T_b) and the travel time of the interval,
    a composite Simpson integral of 1/v over the substep points.  ``n_sub``
    must be even for the Simpson weights.
    """
    h = ds / n_sub
    w = np.full(n_sub + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w *= h / 3.0

    def rhs(x, _):
        return reduced_driving_rhs(x[0], x[1], x[2], p_hvch, p_hvac, a_t,
                                   alpha, veh, bat, th)

    x = (e, soc, t_b)
    t_iv = w[0] / dynamics.speed_from_energy(e, veh)
    for i in range(n_sub):
        x = rk4_step(rhs, x, None, h)
        t_iv = t_iv + w[i + 1] / dynamics.speed_from_energy(x[0], veh)
    return x[0], x[1], x[2], t_iv


def integrate_charge_interval(soc, t_b, p_hvch, p_hvac, p_grid, t_chg, h_tau,
                              veh, bat, th, n_sub=2):
    """Integrate one charging interval of width ``h_tau`` in normalized time."""
    h = h_tau / n_sub

    def rhs(x, _):
        return reduced_charging_rhs(x[0], x[1], p_hvch, p_hvac, p_grid, t_chg,
                                    veh, bat, th)

    x = (soc, t_b)
    for _ in range(n_sub):
        x = rk4_step(rhs, x, None, h)
    return x


# -- decision vector layout -------------------------------------------------

DRV_FIELDS = ("e", "soc", "temp", "hvch", "hvac", "at", "pb")
CHG_FIELDS = ("soc", "temp", "hvch", "hvac", "grid", "pb")


@dataclass
class SegmentBlock:
    node_off: int   # offset into the driving-node arrays
    n_nodes: int
    grid_lo: int    # first road-grid node covered by this segment


@dataclass
class ChargerBlock:
    spec: Charger
    n_tau: int
    arrival: int          # global driving-node index feeding the stop
    departure: int | None  # driving node resuming after the stop (None at route end)
    t_idx: int            # z-index of t_chg
    sig_idx: int          # z-index of the occupancy slack
    off: dict[str, int] = field(default_factory=dict)  # per-field z offsets

    def idx(self, name, j):
        return self.off[name] + j


@dataclass
class DecisionLayout:
    n: int
    n_drv: int
    ds_m: float
    grid: ResampledRoad
    segments: list[SegmentBlock]
    chargers: list[ChargerBlock]
    drv_off: dict[str, int]

    def drv(self, name: str, nodes=None):
        off = self.drv_off[name]
        if nodes is None:
            return off + np.arange(self.n_drv)
        return off + np.asarray(nodes)


def build_layout(grid: ResampledRoad, chargers: list[Charger], n_tau: int) -> DecisionLayout:
    if n_tau < 2:
        raise ScenarioError("n_tau must be at least 2")
    last = grid.n_nodes - 1
    interior = [c for c in chargers if c.node < last]
    final = [c for c in chargers if c.node == last]
    bounds = [0] + [c.node for c in interior] + [last]
    segments, off = [], 0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise ScenarioError("charger spacing produced an empty driving segment")
        segments.append(SegmentBlock(node_off=off, n_nodes=hi - lo + 1, grid_lo=lo))
        off += hi - lo + 1
    n_drv = off
    drv_off = {name: i * n_drv for i, name in enumerate(DRV_FIELDS)}
    pos = len(DRV_FIELDS) * n_drv
    blocks = []
    for i, c in enumerate(interior + final):
        if c.node == last:
            arrival = segments[-1].node_off + segments[-1].n_nodes - 1
            departure = None
        else:
            arrival = segments[i].node_off + segments[i].n_nodes - 1
            departure = segments[i + 1].node_off
        blk = ChargerBlock(spec=c, n_tau=n_tau, arrival=arrival, departure=departure,
                           t_idx=pos, sig_idx=pos + 1)
        pos += 2
        for name in CHG_FIELDS:
            blk.off[name] = pos
            pos += n_tau
        blocks.append(blk)
    return DecisionLayout(n=pos, n_drv=n_drv, ds_m=grid.ds_m, grid=grid,
                          segments=segments, chargers=blocks, drv_off=drv_off)


def _pow2(x: float) -> float:
    """Nearest power of two (exact binary scale factor)."""
    return float(2.0 ** round(np.log2(max(x, 1e-12))))


class NlpProblem:
    """Finite NLP: scaled decision vector, objective, constraints, bounds.

    Equality order: driving defects (E, soc, T), driving power balances,
    charging defects (soc, T), charging power balances, transitions.
    Inequality order (g <= 0): driving battery-power pairs (lo, hi), driving
    acceleration pairs (hi, lo), charging battery-power pairs, occupancy
    slack links, terminal state conditions.
    """

    def __init__(self, scn: Scenario, layout: DecisionLayout, weights: CostWeights,
                 drv_substeps: int = 2, chg_substeps: int = 2, btm: bool = True):
        if drv_substeps < 2 or drv_substeps % 2:
            raise ValueError("drv_substeps must be even (Simpson time weights)")
        self.scn = scn
        self.layout = layout
        self.weights = weights
        self.n = layout.n
        self.drv_substeps = int(drv_substeps)
        self.chg_substeps = int(chg_substeps)
        self.btm = bool(btm)  # battery-directed thermal actuators available
        self._core = None
        self._index_arrays()
        self._bounds()
        self._equilibrate()
        z0p = self.initial_guess_physical()
        self.lb = self.lb_phys / self.var_scale
        self.ub = self.ub_phys / self.var_scale
        self.z0 = self.scale_in(z0p)
        f0 = abs(self._objective_physical(z0p, grad=False)[0])
        self.obj_scale = 1.0 / _pow2(max(1.0, f0))
        self._patterns = None

    # -- structure ----------------------------------------------------------

    def _index_arrays(self):
        lay, grid = self.layout, self.layout.grid
        drv = lay.drv
        # driving intervals: left node per interval, grade per interval
        iv_l, alpha, node_grid = [], [], np.empty(lay.n_drv, dtype=int)
        for seg in lay.segments:
            ks = seg.node_off + np.arange(seg.n_nodes - 1)
            iv_l.append(ks)
            alpha.append(grid.grade_rad[seg.grid_lo:seg.grid_lo + seg.n_nodes - 1])
            node_grid[seg.node_off:seg.node_off + seg.n_nodes] = \
                seg.grid_lo + np.arange(seg.n_nodes)
        self.iv_l = np.concatenate(iv_l)
        self.iv_alpha = np.concatenate(alpha)
        self.node_grid = node_grid
        self.n_iv = self.iv_l.size
        # state/control pairing for path limits: every control against its own
        # node state, plus each interval control against the right endpoint
        self.pair_u = np.concatenate([np.arange(lay.n_drv), self.iv_l])
        self.pair_x = np.concatenate([np.arange(lay.n_drv), self.iv_l + 1])
        self.n_pair = self.pair_u.size
        # charging node index arrays, flattened across chargers
        cz = {name: [] for name in CHG_FIELDS}
        civ_l, civ_chg = [], []
        off = 0
        for bi, b in enumerate(lay.chargers):
            for name in CHG_FIELDS:
                cz[name].append(b.off[name] + np.arange(b.n_tau))
            civ_l.append(off + np.arange(b.n_tau - 1))
            civ_chg.append(np.full(b.n_tau - 1, bi))
            off += b.n_tau
        self.n_cn = off
        if off:
            self.cz = {k: np.concatenate(v) for k, v in cz.items()}
            self.civ_l = np.concatenate(civ_l)
            self.civ_chg = np.concatenate(civ_chg)
        else:
            self.cz = {k: np.empty(0, dtype=int) for k in CHG_FIELDS}
            self.civ_l = np.empty(0, dtype=int)
            self.civ_chg = np.empty(0, dtype=int)
        self.n_civ = self.civ_l.size
        self.cpair_u = np.concatenate([np.arange(self.n_cn), self.civ_l]) \
            if self.n_cn else np.empty(0, dtype=int)
        self.cpair_x = np.concatenate([np.arange(self.n_cn), self.civ_l + 1]) \
            if self.n_cn else np.empty(0, dtype=int)
        self.n_cpair = self.cpair_u.size
        # constraint family row offsets
        m = 0
        self.r_defect = m
        m += 3 * self.n_iv
        self.r_balance = m
        m += lay.n_drv
        self.r_cdefect = m
        m += 2 * self.n_civ
        self.r_cbalance = m
        m += self.n_cn
        self.r_trans = m
        m += sum(2 if b.departure is None else 4 for b in lay.chargers)
        self.m_eq = m
        g = 0
        self.g_pb = g
        g += 2 * self.n_pair
        self.g_at = g
        g += 2 * self.n_pair
        self.g_cpb = g
        g += self.n_cpair
        self.g_occ = g
        g += len(lay.chargers)
        self.g_term = g
        self.term_temp = self.scn.boundary.temp_final_min_c is not None
        g += 1 + (1 if self.term_temp else 0)
        self.m_ineq = g
        # terminal state indices: last charging node if a stop sits at the
        # destination, else the last driving node
        lay_last = lay.n_drv - 1
        if lay.chargers and lay.chargers[-1].departure is None:
            b = lay.chargers[-1]
            self.term_soc_idx = b.idx("soc", b.n_tau - 1)
            self.term_temp_idx = b.idx("temp", b.n_tau - 1)
        else:
            self.term_soc_idx = int(lay.drv("soc", lay_last))
            self.term_temp_idx = int(lay.drv("temp", lay_last))

    def _bounds(self):
        lay, scn = self.layout, self.scn
        veh, bat, th, bd = scn.vehicle, scn.battery, scn.thermal, scn.boundary
        grid = lay.grid
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        d = lay.drv
        vmin = grid.vmin_mps[self.node_grid]
        vmax = grid.vmax_mps[self.node_grid]
        lb[d("e")], ub[d("e")] = vmin ** 2 / 2, vmax ** 2 / 2
        lb[d("soc")], ub[d("soc")] = bat.soc_min, bat.soc_max
        lb[d("temp")], ub[d("temp")] = th.t_min_c, th.t_max_c
        # battery-directed heater/cooler; cabin climate is a separate fixed load
        hvch_cap = max(0.0, veh.p_hvch_max_w - veh.p_cabin_w) if self.btm else 0.0
        hvac_cap = veh.p_hvac_max_w if self.btm else 0.0
        lb[d("hvch")], ub[d("hvch")] = 0.0, hvch_cap
        lb[d("hvac")], ub[d("hvac")] = 0.0, hvac_cap
        lb[d("at")], ub[d("at")] = -veh.a_cap_mps2, veh.a_cap_mps2
        pb_cap = 0.9 * bat.u0_v ** 2 / (2 * bat.r_floor_ohm)  # physical root branch
        lb[d("pb")], ub[d("pb")] = -pb_cap, pb_cap
        # initial conditions by bound clamping
        e0 = bd.v0_mps ** 2 / 2
        first = lay.segments[0].node_off
        if not lb[d("e", first)] - 1e-9 <= e0 <= ub[d("e", first)] + 1e-9:
            raise ScenarioError(f"initial speed {bd.v0_mps} m/s outside the speed band at s=0")
        lb[d("e", first)] = ub[d("e", first)] = e0
        lb[d("soc", first)] = ub[d("soc", first)] = bd.soc0
        lb[d("temp", first)] = ub[d("temp", first)] = bd.temp0_c
        for b in lay.chargers:
            c = b.spec
            lb[b.t_idx], ub[b.t_idx] = 1.0, c.t_chg_max_s
            lb[b.sig_idx], ub[b.sig_idx] = 0.0, c.t_chg_max_s
            sl = {"soc": (bat.soc_min, bat.soc_max),
                  "temp": (th.t_min_c, th.t_max_c),
                  "hvch": (0.0, veh.p_hvch_max_w if self.btm else 0.0),
                  "hvac": (0.0, veh.p_hvac_max_w if self.btm else 0.0),
                  "grid": (0.0, c.p_max_w),
                  "pb": (-pb_cap, 0.0)}
            for name, (lo, hi) in sl.items():
                rng = slice(b.off[name], b.off[name] + b.n_tau)
                lb[rng], ub[rng] = lo, hi
        self.lb_phys, self.ub_phys = lb, ub

    def _family_rows(self):
        """Named row index blocks per constraint family, for row scaling."""
        a = np.arange
        eq = [("defect_e", self.r_defect + a(self.n_iv)),
              ("defect_soc", self.r_defect + self.n_iv + a(self.n_iv)),
              ("defect_temp", self.r_defect + 2 * self.n_iv + a(self.n_iv)),
              ("balance", self.r_balance + a(self.layout.n_drv)),
              ("chg_defect_soc", self.r_cdefect + a(self.n_civ)),
              ("chg_defect_temp", self.r_cdefect + self.n_civ + a(self.n_civ)),
              ("chg_balance", self.r_cbalance + a(self.n_cn))]
        tr_soc, tr_temp, r = [], [], self.r_trans
        for b in self.layout.chargers:
            n_rows = 2 if b.departure is None else 4
            for k in range(n_rows):
                (tr_soc if k % 2 == 0 else tr_temp).append(r + k)
            r += n_rows
        eq += [("trans_soc", np.array(tr_soc, dtype=int)),
               ("trans_temp", np.array(tr_temp, dtype=int))]
        ineq = [("pb_lo", self.g_pb + a(self.n_pair)),
                ("pb_hi", self.g_pb + self.n_pair + a(self.n_pair)),
                ("at_hi", self.g_at + a(self.n_pair)),
                ("at_lo", self.g_at + self.n_pair + a(self.n_pair)),
                ("chg_pb_lo", self.g_cpb + a(self.n_cpair)),
                ("occupancy", self.g_occ + a(len(self.layout.chargers))),
                ("terminal_soc", np.array([self.g_term], dtype=int))]
        if self.term_temp:
            ineq.append(("terminal_temp", np.array([self.g_term + 1], dtype=int)))
        return eq, ineq

    def _equilibrate(self):
        """Pick power-of-two variable and family row scales from the raw
        Jacobian at the initial guess, Ruiz style, so the scaled problem has
        O(1) rows and columns."""
        d = self.layout.drv
        sca = np.ones(self.n)
        sca[d("e")] = 256.0
        sca[d("temp")] = 32.0
        sca[d("hvch")] = 4096.0
        sca[d("hvac")] = 4096.0
        sca[d("at")] = 2.0
        sca[d("pb")] = 32768.0
        for b in self.layout.chargers:
            sca[b.t_idx] = sca[b.sig_idx] = 2048.0
            for name, s in (("temp", 32.0), ("hvch", 4096.0), ("hvac", 4096.0),
                            ("grid", 65536.0), ("pb", 32768.0)):
                sca[b.off[name]:b.off[name] + b.n_tau] = s
        self.var_scale = np.ones(self.n)
        self.row_scale_eq = np.ones(self.m_eq)
        self.row_scale_in = np.ones(self.m_ineq)
        z0p = self.initial_guess_physical()
        _, _, jeq, jin = self.constraints(z0p, jac=True)  # raw physical Jacobians
        fams_eq, fams_in = self._family_rows()
        sca0 = sca.copy()

        def row_pass():
            for fams, jmat, rs in ((fams_eq, jeq, self.row_scale_eq),
                                   (fams_in, jin, self.row_scale_in)):
                for _name, rows in fams:
                    if rows.size == 0:
                        continue
                    peak = np.max(np.abs(jmat[rows]) * sca[None, :])
                    rs[rows] = 1.0 / _pow2(max(peak, 1e-9))

        for _ in range(3):
            row_pass()
            col = np.max(np.abs(jeq) * self.row_scale_eq[:, None], axis=0) \
                if self.m_eq else np.zeros(self.n)
            if self.m_ineq:
                col = np.maximum(col, np.max(np.abs(jin) * self.row_scale_in[:, None],
                                             axis=0))
            target = np.where(col > 0, 1.0 / np.maximum(col, 1e-12), sca0)
            sca = 2.0 ** np.round(np.log2(np.clip(target, sca0 / 64.0, sca0 * 64.0)))
        row_pass()
        self.var_scale = sca

    # -- scaling ------------------------------------------------------------

    def scale_in(self, z_phys):
        return z_phys / self.var_scale

    def scale_out(self, z):
        return z * self.var_scale

    # -- initial guess ------------------------------------------------------

    def initial_guess_physical(self) -> np.ndarray:
        """Forward-simulated seed: mid-band speed, heater on when cold, stop
        durations sized from the state-of-charge deficit.  Integrating the
        actual interval dynamics keeps the initial defect and balance
        residuals small, which saves the solver its basin hunt."""
        lay, scn = self.layout, self.scn
        veh, bat, th, bd = scn.vehicle, scn.battery, scn.thermal, scn.boundary
        grid = lay.grid
        z = np.zeros(self.n)
        d = lay.drv
        cold = (bd.temp0_c < 10.0 or th.t_amb_c < 10.0) and self.btm
        hot = th.t_amb_c > 35.0 and self.btm
        hvch_drv = max(0.0, veh.p_hvch_max_w - veh.p_cabin_w) if cold else 0.0
        hvac_drv = 0.5 * veh.p_hvac_max_w if hot else 0.0

        def pb_root(load, soc_k, t_k):
            u = models.u_oc(soc_k, bat)
            r_b = value(models.internal_resistance(np.asarray(t_k, dtype=float), bat))
            return float(models.battery_power_root(load, u, r_b))

        vmid = 0.5 * (grid.vmin_mps + grid.vmax_mps)[self.node_grid]
        e_nodes = vmid ** 2 / 2
        e_nodes[lay.segments[0].node_off] = bd.v0_mps ** 2 / 2
        soc_k, t_k = bd.soc0, bd.temp0_c
        c_a = models.drag_coeff_per_energy(veh)
        for si, seg in enumerate(lay.segments):
            ids = seg.node_off + np.arange(seg.n_nodes)
            z[d("e", ids)] = e_nodes[ids]
            for k in range(seg.n_nodes):
                node = seg.node_off + k
                grade = self.iv_alpha[np.searchsorted(self.iv_l, node)] \
                    if k < seg.n_nodes - 1 else self.iv_alpha[
                        np.searchsorted(self.iv_l, node - 1)]
                e_k = e_nodes[node]
                if k < seg.n_nodes - 1:
                    e_next = e_nodes[node + 1]
                    at = (e_next - e_k) / lay.ds_m + c_a * e_k + \
                        models.accel_grade_roll(grade, veh)
                else:
                    at = c_a * e_k + models.accel_grade_roll(grade, veh)
                at = float(np.clip(at, -veh.a_cap_mps2, veh.a_cap_mps2))
                load = dynamics.battery_load_driving(e_k, t_k, hvch_drv, hvac_drv,
                                                     at, veh)
                pb = pb_root(load, soc_k, t_k)
                z[d("soc", node)] = soc_k
                z[d("temp", node)] = t_k
                z[d("at", node)] = at
                z[d("hvch", node)] = hvch_drv
                z[d("hvac", node)] = hvac_drv
                z[d("pb", node)] = pb
                if k < seg.n_nodes - 1:
                    e_k, soc_k, t_k, _ = integrate_drive_interval(
                        e_k, soc_k, t_k, hvch_drv, hvac_drv, at, grade,
                        lay.ds_m, veh, bat, th, self.drv_substeps)
                    soc_k = float(np.clip(soc_k, bat.soc_min + 0.01, bat.soc_max))
                    t_k = float(np.clip(t_k, th.t_min_c + 1.0, th.t_max_c - 1.0))
            if si < len(lay.segments) - 1 or (lay.chargers and
                                              lay.chargers[-1].departure is None):
                b = lay.chargers[si]
                c = b.spec
                hvch_chg = veh.p_hvch_max_w if (t_k < 15.0 and self.btm) else 0.0
                grid_g = 0.5 * c.p_max_w
                load = dynamics.battery_load_charging(hvch_chg, 0.0, grid_g, veh)
                # remaining consumption at roughly the driving rate seen so far
                s_here = grid.s_m[c.node]
                used = max(bd.soc0 - soc_k, 0.05)
                need = bd.soc_final_min + used * (grid.s_m[-1] - s_here) / \
                    max(s_here, 1.0) + 0.02
                dsoc = max(need - soc_k, 0.02)
                rate = -pb_root(load, soc_k, t_k) / (bat.capacity_c *
                                                     models.u_oc(soc_k, bat))
                t_g = float(np.clip(dsoc / max(rate, 1e-6), 60.0,
                                    0.95 * c.t_chg_max_s))
                z[b.t_idx] = t_g
                z[b.sig_idx] = max(0.0, t_g - c.free_time_s)
                h_tau = 1.0 / (b.n_tau - 1)
                for j in range(b.n_tau):
                    load = dynamics.battery_load_charging(hvch_chg, 0.0, grid_g, veh)
                    pb = pb_root(load, soc_k, t_k)
                    z[b.idx("soc", j)] = soc_k
                    z[b.idx("temp", j)] = t_k
                    z[b.idx("hvch", j)] = hvch_chg
                    z[b.idx("grid", j)] = grid_g
                    z[b.idx("pb", j)] = min(pb, 0.0)
                    if j < b.n_tau - 1:
                        soc_k, t_k = integrate_charge_interval(
                            soc_k, t_k, hvch_chg, 0.0, grid_g, t_g, h_tau,
                            veh, bat, th, self.chg_substeps)
                        soc_k = float(np.clip(soc_k, bat.soc_min, bat.soc_max - 0.01))
                        t_k = float(np.clip(t_k, th.t_min_c + 1.0, th.t_max_c - 1.0))
                    hvch_chg = veh.p_hvch_max_w if (t_k < 15.0 and self.btm) else 0.0
        return np.clip(z, self.lb_phys, self.ub_phys)

    # -- shared interval integration ----------------------------------------

    def _eval_core(self, zp, jac: bool):
        """Integrate all defect intervals once per point; cached.

        The driving pass also yields the per-interval Simpson travel times,
        so the objective and the defect constraints share one integration.
        """
        key = zp.tobytes()
        if self._core is not None and self._core[0] == key and \
                (self._core[1] or not jac):
            return self._core[2]
        lay = self.layout
        veh, bat, th = self.scn.vehicle, self.scn.battery, self.scn.thermal
        d = lay.drv
        il = self.iv_l
        dcols = [d("e", il), d("soc", il), d("temp", il),
                 d("hvch", il), d("hvac", il), d("at", il)]
        vals = [zp[c] for c in dcols]
        if jac:
            vals = ad.seed(vals)
        out = integrate_drive_interval(*vals, self.iv_alpha, lay.ds_m,
                                       veh, bat, th, self.drv_substeps)
        core = {"dcols": dcols,
                "drv": tuple(value(o) for o in out),
                "drv_dot": tuple(o.dot for o in out) if jac else None}
        if self.n_civ:
            jl = self.civ_l
            t_z = np.array([lay.chargers[i].t_idx for i in self.civ_chg])
            ccols = [self.cz["soc"][jl], self.cz["temp"][jl],
                     self.cz["hvch"][jl], self.cz["hvac"][jl],
                     self.cz["grid"][jl], t_z]
            vals = [zp[c] for c in ccols]
            if jac:
                vals = ad.seed(vals)
            h_tau = 1.0 / (lay.chargers[0].n_tau - 1)
            out = integrate_charge_interval(*vals, h_tau, veh, bat, th,
                                            self.chg_substeps)
            core["ccols"] = ccols
            core["chg"] = tuple(value(o) for o in out)
            core["chg_dot"] = tuple(o.dot for o in out) if jac else None
        self._core = (key, jac, core)
        return core

    # -- objective ----------------------------------------------------------

    def _objective_physical(self, z, grad: bool):
        lay, w = self.layout, self.weights
        f = 0.0
        g = np.zeros(self.n) if grad else None
        # driving time: Simpson over the defect integration's substep speeds
        core = self._eval_core(z, grad)
        t_iv = core["drv"][3]
        f += w.time_sek_per_s * float(np.sum(t_iv))
        if grad:
            dot = core["drv_dot"][3]
            for ci, col in enumerate(core["dcols"]):
                g[col] += w.time_sek_per_s * dot[:, ci]
        for b in lay.chargers:
            c = b.spec
            h = 1.0 / (b.n_tau - 1)
            t_chg = z[b.t_idx]
            pg = z[b.off["grid"]:b.off["grid"] + b.n_tau - 1]  # left endpoints (ZOH)
            ce = c.energy_price_sek_per_j
            rate = w.time_sek_per_s * (b.n_tau - 1) * h + ce * h * float(pg.sum())
            f += t_chg * rate + c.occupancy_sek_per_s * z[b.sig_idx]
            if grad:
                g[b.t_idx] += rate
                g[b.off["grid"]:b.off["grid"] + b.n_tau - 1] += t_chg * ce * h
                g[b.sig_idx] += c.occupancy_sek_per_s
        return f, g

    def objective(self, z, grad: bool = False):
        f, g = self._objective_physical(self.scale_out(z), grad)
        f *= self.obj_scale
        if grad:
            g = g * self.var_scale * self.obj_scale
        return (f, g) if grad else (f, None)

    # -- constraints ---------------------------------------------------------

    def constraints(self, z, jac: bool = False):
        zp = self.scale_out(z)
        scn, lay = self.scn, self.layout
        veh, bat, th = scn.vehicle, scn.battery, scn.thermal
        d = lay.drv
        ceq = np.zeros(self.m_eq)
        cin = np.zeros(self.m_ineq)
        Jeq = np.zeros((self.m_eq, self.n)) if jac else None
        Jin = np.zeros((self.m_ineq, self.n)) if jac else None

        # driving defects ---------------------------------------------------
        core = self._eval_core(zp, jac)
        ir = self.iv_l + 1
        rows3 = [self.r_defect + k * self.n_iv + np.arange(self.n_iv) for k in range(3)]
        right = [d("e", ir), d("soc", ir), d("temp", ir)]
        for k in range(3):
            ceq[rows3[k]] = zp[right[k]] - core["drv"][k]
            if jac:
                Jeq[rows3[k], right[k]] = 1.0
                for ci, col in enumerate(core["dcols"]):
                    Jeq[rows3[k], col] = -core["drv_dot"][k][:, ci]

        # driving power balances --------------------------------------------
        nodes = np.arange(lay.n_drv)
        cols = [d(f, nodes) for f in DRV_FIELDS]
        vals = [zp[c] for c in cols]
        if jac:
            vals = ad.seed(vals)
        res = dynamics.power_balance_driving(*vals, veh, bat)
        rows = self.r_balance + nodes
        ceq[rows] = value(res)
        if jac:
            for ci, col in enumerate(cols):
                Jeq[rows, col] = res.dot[:, ci]

        # charging defects --------------------------------------------------
        if self.n_civ:
            jr = self.civ_l + 1
            right = [self.cz["soc"][jr], self.cz["temp"][jr]]
            rows2 = [self.r_cdefect + k * self.n_civ + np.arange(self.n_civ)
                     for k in range(2)]
            for k in range(2):
                ceq[rows2[k]] = zp[right[k]] - core["chg"][k]
                if jac:
                    Jeq[rows2[k], right[k]] = 1.0
                    for ci, col in enumerate(core["ccols"]):
                        Jeq[rows2[k], col] = -core["chg_dot"][k][:, ci]

        # charging power balances -------------------------------------------
        if self.n_cn:
            cols = [self.cz[f] for f in CHG_FIELDS]
            vals = [zp[c] for c in cols]
            if jac:
                vals = ad.seed(vals)
            res = dynamics.power_balance_charging(*vals, veh, bat)
            rows = self.r_cbalance + np.arange(self.n_cn)
            ceq[rows] = value(res)
            if jac:
                for ci, col in enumerate(cols):
                    Jeq[rows, col] = res.dot[:, ci]

        # transitions (linear): stop inherits arrival state, departure inherits
        # the stop's terminal state; E restarts free
        r = self.r_trans
        for b in lay.chargers:
            pairs = [(b.idx("soc", 0), int(d("soc", b.arrival))),
                     (b.idx("temp", 0), int(d("temp", b.arrival)))]
            if b.departure is not None:
                pairs += [(int(d("soc", b.departure)), b.idx("soc", b.n_tau - 1)),
                          (int(d("temp", b.departure)), b.idx("temp", b.n_tau - 1))]
            for a_i, b_i in pairs:
                ceq[r] = zp[a_i] - zp[b_i]
                if jac:
                    Jeq[r, a_i] = 1.0
                    Jeq[r, b_i] = -1.0
                r += 1

        # driving battery power limits (pairwise) ---------------------------
        px, pu = self.pair_x, self.pair_u
        cols = [d("soc", px), d("temp", px)]
        vals = [zp[c] for c in cols]
        if jac:
            vals = ad.seed(vals)
        lo = models.p_chg_limit(vals[0], vals[1], bat)
        hi = models.p_dchg_limit(vals[0], vals[1], bat)
        pb_u = zp[d("pb", pu)]
        rows_lo = self.g_pb + np.arange(self.n_pair)
        rows_hi = rows_lo + self.n_pair
        cin[rows_lo] = value(lo) - pb_u
        cin[rows_hi] = pb_u - value(hi)
        if jac:
            for ci, col in enumerate(cols):
                Jin[rows_lo, col] = lo.dot[:, ci]
                Jin[rows_hi, col] = -hi.dot[:, ci]
            Jin[rows_lo, d("pb", pu)] = -1.0
            Jin[rows_hi, d("pb", pu)] = 1.0

        # driving acceleration limits (pairwise, symmetric) -----------------
        e_x = zp[d("e", px)]
        if jac:
            (e_x,) = ad.seed([e_x])
        v = dynamics.speed_from_energy(e_x, veh)
        _, amax = models.accel_limits(v, veh)
        at_u = zp[d("at", pu)]
        rows_hi = self.g_at + np.arange(self.n_pair)
        rows_lo = rows_hi + self.n_pair
        cin[rows_hi] = at_u - value(amax)
        cin[rows_lo] = -at_u - value(amax)
        if jac:
            Jin[rows_hi, d("e", px)] = -amax.dot[:, 0]
            Jin[rows_lo, d("e", px)] = -amax.dot[:, 0]
            Jin[rows_hi, d("at", pu)] = 1.0
            Jin[rows_lo, d("at", pu)] = -1.0

        # charging battery power lower limits (upper bound 0 is a box bound)
        if self.n_cpair:
            cx, cu = self.cpair_x, self.cpair_u
            cols = [self.cz["soc"][cx], self.cz["temp"][cx]]
            vals = [zp[c] for c in cols]
            if jac:
                vals = ad.seed(vals)
            lo = models.p_chg_limit(vals[0], vals[1], bat)
            pb_u = zp[self.cz["pb"][cu]]
            rows = self.g_cpb + np.arange(self.n_cpair)
            cin[rows] = value(lo) - pb_u
            if jac:
                for ci, col in enumerate(cols):
                    Jin[rows, col] = lo.dot[:, ci]
                Jin[rows, self.cz["pb"][cu]] = -1.0

        # occupancy slack links: t_chg - sigma <= T_free
        for i, b in enumerate(lay.chargers):
            r = self.g_occ + i
            cin[r] = zp[b.t_idx] - zp[b.sig_idx] - b.spec.free_time_s
            if jac:
                Jin[r, b.t_idx] = 1.0
                Jin[r, b.sig_idx] = -1.0

        # terminal conditions: soc_f >= soc_f_min, optional T_f >= T_f_min
        bd = scn.boundary
        r = self.g_term
        cin[r] = bd.soc_final_min - zp[self.term_soc_idx]
        if jac:
            Jin[r, self.term_soc_idx] = -1.0
        if self.term_temp:
            cin[r + 1] = bd.temp_final_min_c - zp[self.term_temp_idx]
            if jac:
                Jin[r + 1, self.term_temp_idx] = -1.0

        # apply family row scales and the variable scale chain rule
        ceq *= self.row_scale_eq
        cin *= self.row_scale_in
        if jac:
            Jeq *= self.row_scale_eq[:, None]
            Jeq *= self.var_scale[None, :]
            Jin *= self.row_scale_in[:, None]
            Jin *= self.var_scale[None, :]
        return ceq, cin, Jeq, Jin

    def patterns(self):
        """Structural Jacobian sparsity as (rows, cols) index arrays.

        Built from the coupling structure, not from numeric probing, so
        entries sitting on flat regions of the power-limit maps stay
        declared.
        """
        if self._patterns is not None:
            return self._patterns
        lay, d = self.layout, self.layout.drv
        il, ir = self.iv_l, self.iv_l + 1
        eq_r, eq_c = [], []

        def add(rows_c, rows, *col_sets):
            for cols in col_sets:
                rows_c[0].append(np.broadcast_to(rows, np.shape(cols)).ravel())
                rows_c[1].append(np.asarray(cols).ravel())

        eq = (eq_r, eq_c)
        left_cols = [d(f, il) for f in DRV_FIELDS if f != "pb"]
        right3 = [d("e", ir), d("soc", ir), d("temp", ir)]
        for k in range(3):
            rows = self.r_defect + k * self.n_iv + np.arange(self.n_iv)
            add(eq, rows, *left_cols, right3[k])
        rows = self.r_balance + np.arange(lay.n_drv)
        add(eq, rows, *[d(f) for f in DRV_FIELDS])
        if self.n_civ:
            jl, jr = self.civ_l, self.civ_l + 1
            t_z = np.array([lay.chargers[i].t_idx for i in self.civ_chg])
            lcols = [self.cz[f][jl] for f in ("soc", "temp", "hvch", "hvac", "grid")]
            rcols = [self.cz["soc"][jr], self.cz["temp"][jr]]
            for k in range(2):
                rows = self.r_cdefect + k * self.n_civ + np.arange(self.n_civ)
                add(eq, rows, *lcols, t_z, rcols[k])
        if self.n_cn:
            rows = self.r_cbalance + np.arange(self.n_cn)
            add(eq, rows, *[self.cz[f] for f in CHG_FIELDS])
        r = self.r_trans
        for b in lay.chargers:
            pairs = [(b.idx("soc", 0), int(d("soc", b.arrival))),
                     (b.idx("temp", 0), int(d("temp", b.arrival)))]
            if b.departure is not None:
                pairs += [(int(d("soc", b.departure)), b.idx("soc", b.n_tau - 1)),
                          (int(d("temp", b.departure)), b.idx("temp", b.n_tau - 1))]
            for a_i, b_i in pairs:
                add(eq, np.array([r]), np.array([a_i]), np.array([b_i]))
                r += 1

        in_r, in_c = [], []
        ineq = (in_r, in_c)
        px, pu = self.pair_x, self.pair_u
        rows_lo = self.g_pb + np.arange(self.n_pair)
        add(ineq, rows_lo, d("soc", px), d("temp", px), d("pb", pu))
        add(ineq, rows_lo + self.n_pair, d("soc", px), d("temp", px), d("pb", pu))
        rows_hi = self.g_at + np.arange(self.n_pair)
        add(ineq, rows_hi, d("e", px), d("at", pu))
        add(ineq, rows_hi + self.n_pair, d("e", px), d("at", pu))
        if self.n_cpair:
            cx, cu = self.cpair_x, self.cpair_u
            rows = self.g_cpb + np.arange(self.n_cpair)
            add(ineq, rows, self.cz["soc"][cx], self.cz["temp"][cx], self.cz["pb"][cu])
        for i, b in enumerate(lay.chargers):
            add(ineq, np.array([self.g_occ + i]),
                np.array([b.t_idx]), np.array([b.sig_idx]))
        add(ineq, np.array([self.g_term]), np.array([self.term_soc_idx]))
        if self.term_temp:
            add(ineq, np.array([self.g_term + 1]), np.array([self.term_temp_idx]))

        def pack(rows, cols):
            r = np.concatenate(rows) if rows else np.empty(0, dtype=int)
            c = np.concatenate(cols) if cols else np.empty(0, dtype=int)
            order = np.lexsort((c, r))
            return r[order], c[order]

        self._patterns = (pack(eq_r, eq_c), pack(in_r, in_c))
        return self._patterns


def build_nlp(scn: Scenario, ds_m: float = 2000.0, n_tau: int = 20,
              weights: CostWeights | None = None, drv_substeps: int = 2,
              chg_substeps: int = 2, btm: bool = True) -> NlpProblem:
    """Resample the road, snap chargers and assemble the scaled NLP."""
    grid = resample_road(scn.road, ds_m)
    snap_chargers(scn, grid)
    layout = build_layout(grid, scn.chargers, n_tau)
    return NlpProblem(scn, layout, weights or scn.costs,
                      drv_substeps=drv_substeps, chg_substeps=chg_substeps, btm=btm)


# -- solution extraction ----------------------------------------------------


@dataclass
class DriveSegmentSol:
    s_m: np.ndarray
    v_mps: np.ndarray
    soc: np.ndarray
    temp_c: np.ndarray
    p_hvch_w: np.ndarray
    p_hvac_w: np.ndarray
    a_t_mps2: np.ndarray
    p_b_w: np.ndarray


@dataclass
class ChargeStopSol:
    position_m: float
    t_chg_s: float
    sigma_s: float
    tau: np.ndarray
    soc: np.ndarray
    temp_c: np.ndarray
    p_hvch_w: np.ndarray
    p_hvac_w: np.ndarray
    p_grid_w: np.ndarray
    p_b_w: np.ndarray
    grid_energy_j: float
    energy_cost_sek: float
    occupancy_cost_sek: float


@dataclass
class TripSolution:
    segments: list[DriveSegmentSol]
    stops: list[ChargeStopSol]
    ds_m: float
    n_tau: int
    time_weight_sek_per_s: float
    drive_time_s: float
    charge_time_s: float
    trip_time_s: float
    cost_time_sek: float
    cost_energy_sek: float
    cost_occupancy_sek: float
    cost_total_sek: float
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> str:
        chg_cost = self.cost_energy_sek + self.cost_occupancy_sek
        return (f"{self.trip_time_s / 60:.1f} ({self.charge_time_s / 60:.1f}) min, "
                f"{chg_cost:.2f} SEK charging, {self.cost_total_sek:.2f} SEK total")

    def to_dict(self) -> dict:
        def arr(obj):
            out = {}
            for k, v in obj.__dict__.items():
                out[k] = v.tolist() if isinstance(v, np.ndarray) else v
            return out

        return {"format": "ecoroute-solution", "version": 1,
                "segments": [arr(s) for s in self.segments],
                "stops": [arr(s) for s in self.stops],
                **{k: getattr(self, k) for k in
                   ("ds_m", "n_tau", "time_weight_sek_per_s", "drive_time_s",
                    "charge_time_s", "trip_time_s", "cost_time_sek",
                    "cost_energy_sek", "cost_occupancy_sek", "cost_total_sek")},
                "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, doc: dict) -> "TripSolution":
        segs = [DriveSegmentSol(**{k: np.asarray(v, dtype=float) for k, v in s.items()})
                for s in doc["segments"]]
        stops = []
        for s in doc["stops"]:
            kw = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v)
                  for k, v in s.items()}
            stops.append(ChargeStopSol(**kw))
        keys = ("ds_m", "n_tau", "time_weight_sek_per_s", "drive_time_s",
                "charge_time_s", "trip_time_s", "cost_time_sek", "cost_energy_sek",
                "cost_occupancy_sek", "cost_total_sek")
        return cls(segments=segs, stops=stops, **{k: doc[k] for k in keys},
                   diagnostics=doc.get("diagnostics", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TripSolution":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def export_csv(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        head = "v_mps,soc,T_b_C,P_b_W,P_hvch_W,P_hvac_W,P_grid_W,a_t_mps2"
        for i, seg in enumerate(self.segments):
            p = out_dir / f"drive_{i}.csv"
            rows = np.column_stack([seg.s_m, seg.v_mps, seg.soc, seg.temp_c, seg.p_b_w,
                                    seg.p_hvch_w, seg.p_hvac_w, np.zeros(seg.s_m.size),
                                    seg.a_t_mps2])
            np.savetxt(p, rows, delimiter=",", header="s_m," + head, comments="")
            paths.append(p)
        for i, st in enumerate(self.stops):
            p = out_dir / f"charge_{i}.csv"
            rows = np.column_stack([st.tau, np.zeros(st.tau.size), st.soc, st.temp_c,
                                    st.p_b_w, st.p_hvch_w, st.p_hvac_w, st.p_grid_w,
                                    np.zeros(st.tau.size)])
            np.savetxt(p, rows, delimiter=",", header="tau," + head, comments="")
            paths.append(p)
        return paths


def extract_solution(problem: NlpProblem, z) -> TripSolution:
    """Unpack a (scaled) decision vector into physical trajectories and costs.

    The occupancy slack is polished to its analytic optimum
    max(0, t_chg - T_free), which is feasible and never increases the
    objective; the solver only reaches it to within its tolerance.
    """
    lay, w = problem.layout, problem.weights
    zp = problem.scale_out(np.asarray(z, dtype=float))
    d = lay.drv
    grid = lay.grid
    # per-interval Simpson travel times, same accounting as the objective
    t_iv = problem._eval_core(zp, jac=False)["drv"][3]
    segments = []
    drive_time = 0.0
    iv0 = 0
    for seg in lay.segments:
        ids = seg.node_off + np.arange(seg.n_nodes)
        e = zp[d("e", ids)]
        v = np.sqrt(2 * e)
        segments.append(DriveSegmentSol(
            s_m=grid.s_m[seg.grid_lo:seg.grid_lo + seg.n_nodes].copy(),
            v_mps=v, soc=zp[d("soc", ids)], temp_c=zp[d("temp", ids)],
            p_hvch_w=zp[d("hvch", ids)], p_hvac_w=zp[d("hvac", ids)],
            a_t_mps2=zp[d("at", ids)], p_b_w=zp[d("pb", ids)]))
        drive_time += float(np.sum(t_iv[iv0:iv0 + seg.n_nodes - 1]))
        iv0 += seg.n_nodes - 1
    stops = []
    charge_time = 0.0
    cost_energy = 0.0
    cost_occ = 0.0
    for b in lay.chargers:
        c = b.spec
        t_chg = float(zp[b.t_idx])
        sigma = max(0.0, t_chg - c.free_time_s)
        h = 1.0 / (b.n_tau - 1)
        pg = zp[b.off["grid"]:b.off["grid"] + b.n_tau]
        energy = t_chg * h * float(pg[:-1].sum())
        e_cost = c.energy_price_sek_per_j * energy
        o_cost = c.occupancy_sek_per_s * sigma
        stops.append(ChargeStopSol(
            position_m=c.node * lay.ds_m, t_chg_s=t_chg, sigma_s=sigma,
            tau=np.linspace(0.0, 1.0, b.n_tau),
            soc=zp[b.off["soc"]:b.off["soc"] + b.n_tau],
            temp_c=zp[b.off["temp"]:b.off["temp"] + b.n_tau],
            p_hvch_w=zp[b.off["hvch"]:b.off["hvch"] + b.n_tau],
            p_hvac_w=zp[b.off["hvac"]:b.off["hvac"] + b.n_tau],
            p_grid_w=pg, p_b_w=zp[b.off["pb"]:b.off["pb"] + b.n_tau],
            grid_energy_j=energy, energy_cost_sek=e_cost, occupancy_cost_sek=o_cost))
        charge_time += t_chg
        cost_energy += e_cost
        cost_occ += o_cost
    trip_time = drive_time + charge_time
    cost_time = w.time_sek_per_s * trip_time
    return TripSolution(
        segments=segments, stops=stops, ds_m=lay.ds_m,
        n_tau=lay.chargers[0].n_tau if lay.chargers else 0,
        time_weight_sek_per_s=w.time_sek_per_s,
        drive_time_s=drive_time, charge_time_s=charge_time, trip_time_s=trip_time,
        cost_time_sek=cost_time, cost_energy_sek=cost_energy,
        cost_occupancy_sek=cost_occ,
        cost_total_sek=cost_time + cost_energy + cost_occ)
