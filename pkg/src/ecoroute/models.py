"""Longitudinal, electrical and thermal component models.

Every function here is written against the :mod:`ecoroute.autodiff` primitive
set, so it evaluates with plain ndarrays and propagates exact derivatives
when handed duals.  Units are SI, temperatures in degrees C, state of charge
dimensionless in [0, 1].  Battery power ``p_b`` is the internal chemical
power: positive discharging, negative charging.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .scenario import BatteryParams, ThermalParams, VehicleParams


def accel_air(v, veh: VehicleParams):
    """Aerodynamic drag deceleration, rho c_d A_f v^2 / (2 m)."""
    return (veh.rho_air * veh.c_d * veh.a_f_m2 / (2.0 * veh.mass_kg)) * v ** 2


def accel_grade_roll(alpha, veh: VehicleParams):
    """Grade plus rolling resistance deceleration, g (sin a + c_r cos a)."""
    return veh.g * (ad.sin(alpha) + veh.c_r * ad.cos(alpha))


def drag_coeff_per_energy(veh: VehicleParams) -> float:
    """Drag deceleration per unit kinetic energy E = v^2/2."""
    return veh.rho_air * veh.c_d * veh.a_f_m2 / veh.mass_kg


def drivetrain_loss(f_trac, v, veh: VehicleParams):
    """Electric-drive loss map: offset + quadratic in wheel power + speed term."""
    p_wheel = f_trac * v
    return veh.k0_w + (veh.k1 / veh.p_base_w) * p_wheel ** 2 + veh.k2 * v ** 2


def propulsion_power(a_t, v, veh: VehicleParams):
    """Electrical propulsion power: wheel power plus drivetrain losses."""
    f_trac = veh.mass_kg * a_t
    p_loss = drivetrain_loss(f_trac, v, veh)
    return f_trac * v + p_loss, p_loss


def u_oc(soc, bat: BatteryParams):
    """Open-circuit voltage, affine in state of charge."""
    return bat.u0_v + bat.u1_v * soc


def internal_resistance(t_b, bat: BatteryParams):
    """Cell resistance grows exponentially as the pack cools; clamped."""
    r = bat.r_ref_ohm * ad.exp(bat.k_r_per_k * (bat.t_ref_c - t_b))
    return ad.clip(r, bat.r_floor_ohm, bat.r_cap_ohm)


def bilinear(gx: np.ndarray, gy: np.ndarray, table: np.ndarray, x, y):
    """Bilinear table lookup, saturating outside the grid.

    Cell selection uses values only, so dual inputs get the derivative of
    the active cell (zero outside the grid).
    """
    i = np.clip(np.searchsorted(gx, value(x), side="right") - 1, 0, gx.size - 2)
    j = np.clip(np.searchsorted(gy, value(y), side="right") - 1, 0, gy.size - 2)
    tx = ad.clip((x - gx[i]) / (gx[i + 1] - gx[i]), 0.0, 1.0)
    ty = ad.clip((y - gy[j]) / (gy[j + 1] - gy[j]), 0.0, 1.0)
    f00, f10 = table[i, j], table[i + 1, j]
    f01, f11 = table[i, j + 1], table[i + 1, j + 1]
    return (f00 * (1 - tx) * (1 - ty) + f10 * tx * (1 - ty)
            + f01 * (1 - tx) * ty + f11 * tx * ty)


def p_dchg_limit(soc, t_b, bat: BatteryParams):
    """Maximum discharge power (W, >= 0) at the given soc and temperature."""
    return bilinear(bat.soc_grid, bat.temp_grid_c, bat.p_dchg_max_w, soc, t_b)


def p_chg_limit(soc, t_b, bat: BatteryParams):
    """Maximum charge power (W, <= 0, more negative = faster)."""
    return bilinear(bat.soc_grid, bat.temp_grid_c, bat.p_chg_max_w, soc, t_b)


def heat_rates(p_b, p_loss_ed, v, t_b, p_hvch_b, p_hvac_b,
               soc, veh: VehicleParams, bat: BatteryParams, th: ThermalParams):
    """Battery heat flows (W): passive, active and exchange with ambient."""
    r_b = internal_resistance(t_b, bat)
    u = u_oc(soc, bat)
    q_pass = r_b * p_b ** 2 / u ** 2 + veh.eps_ed * p_loss_ed
    q_act = veh.eta_hvch * p_hvch_b - veh.eta_hvac * p_hvac_b
    q_exh = (th.gamma0_w_per_k + th.gamma1_ws_per_mk * v) * (th.t_amb_c - t_b)
    return q_pass, q_act, q_exh


def accel_limits(v, veh: VehicleParams):
    """Traction acceleration box from the machine power and comfort caps."""
    a_machine = veh.p_em_max_w / (veh.mass_kg * ad.maximum(v, veh.v_eps_mps))
    a_max = ad.minimum(veh.a_cap_mps2, a_machine)
    return -a_max, a_max


def battery_power_root(load, u, r):
    """Internal battery power solving p_b = load + r p_b^2 / u^2.

    Returns the stable (low-loss) root; the load is clamped to the physical
    branch, which tops out at u^2 / (4 r).
    """
    a = r / u ** 2
    # strictly positive floor: the clamped branch has zero slope, and the
    # sqrt derivative must stay finite for that zero to propagate
    disc = ad.maximum(1.0 - 4.0 * a * load, 1e-12)
    return 2.0 * load / (1.0 + ad.sqrt(disc))
