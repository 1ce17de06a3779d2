"""Mode dynamics and power-balance residuals.

Driving is posed over distance with states (E, soc, t_b) where E = v^2/2 is
specific kinetic energy; charging is posed over normalized stop time
tau in [0, 1] with states (soc, t_b) and the stop duration as a free scalar.
Battery power stays an explicit algebraic variable; the power balance is an
equality residual rather than being eliminated, which keeps every equation
rational and lets the solver treat the loss term implicitly.
"""

from __future__ import annotations

from . import autodiff as ad
from . import models
from .scenario import BatteryParams, ThermalParams, VehicleParams


def speed_from_energy(e_kin, veh: VehicleParams):
    """v = sqrt(2 E), floored away from zero so 1/v terms stay bounded."""
    return ad.sqrt(2.0 * ad.maximum(e_kin, 0.5 * veh.v_eps_mps ** 2))


def driving_rhs(e_kin, soc, t_b, p_hvch, p_hvac, a_t, p_b, alpha,
                veh: VehicleParams, bat: BatteryParams, th: ThermalParams):
    """Space-domain derivatives (dE/ds, dsoc/ds, dT/ds) while driving."""
    v = speed_from_energy(e_kin, veh)
    de_ds = a_t - models.drag_coeff_per_energy(veh) * e_kin - models.accel_grade_roll(alpha, veh)
    u = models.u_oc(soc, bat)
    dsoc_ds = -p_b / (bat.capacity_c * u * v)
    p_loss = models.drivetrain_loss(veh.mass_kg * a_t, v, veh)
    q_pass, q_act, q_exh = models.heat_rates(p_b, p_loss, v, t_b, p_hvch, p_hvac,
                                             soc, veh, bat, th)
    dt_ds = (q_pass + q_act + q_exh) / (bat.cp_mb_j_per_k * v)
    return de_ds, dsoc_ds, dt_ds


def charging_rhs(soc, t_b, p_hvch, p_hvac, p_b, t_chg,
                 veh: VehicleParams, bat: BatteryParams, th: ThermalParams):
    """Normalized-time derivatives (dsoc/dtau, dT/dtau) at a charging stop."""
    u = models.u_oc(soc, bat)
    dsoc_dtau = -t_chg * p_b / (bat.capacity_c * u)
    # vehicle parked: no drivetrain losses, no speed-dependent convection
    q_pass, q_act, q_exh = models.heat_rates(p_b, 0.0, 0.0, t_b, p_hvch, p_hvac,
                                             soc, veh, bat, th)
    dt_dtau = t_chg * (q_pass + q_act + q_exh) / bat.cp_mb_j_per_k
    return dsoc_dtau, dt_dtau


def power_balance_driving(e_kin, soc, t_b, p_hvch, p_hvac, a_t, p_b,
                          veh: VehicleParams, bat: BatteryParams):
    """Driving node power balance residual (zero when consistent).

    Joule loss + propulsion + thermal actuators + cabin + auxiliaries
    must equal the battery draw.
    """
    v = speed_from_energy(e_kin, veh)
    u = models.u_oc(soc, bat)
    r_b = models.internal_resistance(t_b, bat)
    p_prop, _ = models.propulsion_power(a_t, v, veh)
    joule = r_b * p_b ** 2 / u ** 2
    return joule + p_prop + p_hvch + p_hvac + veh.p_cabin_w + veh.p_aux_w - p_b


def power_balance_charging(soc, t_b, p_hvch, p_hvac, p_grid, p_b,
                           veh: VehicleParams, bat: BatteryParams):
    """Charging node power balance residual; cabin demand is off while parked."""
    u = models.u_oc(soc, bat)
    r_b = models.internal_resistance(t_b, bat)
    joule = r_b * p_b ** 2 / u ** 2
    return joule + p_hvch + p_hvac + veh.p_aux_w - p_grid - p_b


def battery_load_driving(e_kin, t_b, p_hvch, p_hvac, a_t, veh: VehicleParams):
    """Terminal load seen by the battery while driving (no Joule term)."""
    v = speed_from_energy(e_kin, veh)
    p_prop, _ = models.propulsion_power(a_t, v, veh)
    return p_prop + p_hvch + p_hvac + veh.p_cabin_w + veh.p_aux_w


def battery_load_charging(p_hvch, p_hvac, p_grid, veh: VehicleParams):
    """Terminal load seen by the battery at a stop (negative when charging)."""
    return p_hvch + p_hvac + veh.p_aux_w - p_grid
