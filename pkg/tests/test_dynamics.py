"""Mode dynamics and power balances."""

import numpy as np
import pytest

from ecoroute import autodiff as ad
from ecoroute import dynamics, models
from ecoroute.autodiff import value
from ecoroute.scenario import BatteryParams, ThermalParams, VehicleParams


@pytest.fixture
def params():
    return VehicleParams(), BatteryParams(), ThermalParams()


class TestDrivingRhs:
    def test_reference_point(self, params):
        veh, bat, th = params
        de, dsoc, dt = dynamics.driving_rhs(200.0, 0.8, -10.0, 5000.0, 0.0,
                                            0.5, 30e3, 0.0, veh, bat, th)
        np.testing.assert_allclose(de, 0.2767754545454545)
        np.testing.assert_allclose(dsoc, -5.482456140350877e-06)
        np.testing.assert_allclose(dt, 0.0006751672685467881)

    def test_energy_rate_decomposition(self, params):
        veh, bat, th = params
        # dE/ds = a_t - drag - grade/roll, term by term
        e, a_t, alpha = 450.0, 1.2, 0.02
        de, _, _ = dynamics.driving_rhs(e, 0.5, 0.0, 0.0, 0.0, a_t, 0.0, alpha,
                                        veh, bat, th)
        expect = a_t - models.drag_coeff_per_energy(veh) * e \
            - models.accel_grade_roll(alpha, veh)
        np.testing.assert_allclose(de, expect)

    def test_soc_rate_scales_inverse_speed(self, params):
        veh, bat, th = params
        # halving speed doubles depletion per metre at fixed battery power
        _, d1, _ = dynamics.driving_rhs(800.0, 0.6, 20.0, 0.0, 0.0, 0.0, 20e3,
                                        0.0, veh, bat, th)
        _, d2, _ = dynamics.driving_rhs(200.0, 0.6, 20.0, 0.0, 0.0, 0.0, 20e3,
                                        0.0, veh, bat, th)
        np.testing.assert_allclose(d2, 2.0 * d1)

    def test_heater_warms_cooler_cools(self, params):
        veh, bat, th = params
        args = (200.0, 0.8, -10.0)
        _, _, dt_heat = dynamics.driving_rhs(*args, 6000.0, 0.0, 0.0, 0.0, 0.0,
                                             veh, bat, th)
        _, _, dt_cool = dynamics.driving_rhs(*args, 0.0, 4000.0, 0.0, 0.0, 0.0,
                                             veh, bat, th)
        assert dt_heat > 0.0
        assert dt_cool < 0.0

    def test_speed_floor_guard(self, params):
        veh, bat, th = params
        # degenerate kinetic energy must not produce NaNs
        out = dynamics.driving_rhs(0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1e3, 0.0,
                                   veh, bat, th)
        assert np.all(np.isfinite([value(x) for x in out]))


class TestChargingRhs:
    def test_reference_point(self, params):
        veh, bat, th = params
        dsoc, dt = dynamics.charging_rhs(1.0, -10.0, 0.0, 0.0, -50e3, 2520.0,
                                         veh, bat, th)
        np.testing.assert_allclose(dsoc, 0.4375)
        np.testing.assert_allclose(dt, 10.572201714220002)

    def test_rates_linear_in_duration(self, params):
        veh, bat, th = params
        a = dynamics.charging_rhs(0.5, -5.0, 3000.0, 0.0, -40e3, 600.0, veh, bat, th)
        b = dynamics.charging_rhs(0.5, -5.0, 3000.0, 0.0, -40e3, 1800.0, veh, bat, th)
        np.testing.assert_allclose([3 * a[0], 3 * a[1]], b)

    def test_parked_convection_uses_zero_speed(self, params):
        veh, bat, th = params
        # only gamma0 acts at a stop
        _, dt = dynamics.charging_rhs(0.5, 20.0, 0.0, 0.0, 0.0, 1000.0, veh, bat, th)
        expect = 1000.0 * th.gamma0_w_per_k * (th.t_amb_c - 20.0) / bat.cp_mb_j_per_k
        np.testing.assert_allclose(dt, expect)


class TestPowerBalance:
    def test_driving_residual_zero_at_root(self, params):
        veh, bat, th = params
        e, soc, t_b = 312.5, 0.7, -5.0
        load = dynamics.battery_load_driving(e, t_b, 2000.0, 0.0, 0.8, veh)
        u = models.u_oc(soc, bat)
        r_b = value(models.internal_resistance(np.array(t_b), bat))
        pb = models.battery_power_root(np.array(load), u, r_b)
        res = dynamics.power_balance_driving(e, soc, t_b, 2000.0, 0.0, 0.8, pb,
                                             veh, bat)
        np.testing.assert_allclose(res, 0.0, atol=1e-9)

    def test_charging_residual_zero_at_root(self, params):
        veh, bat, th = params
        soc, t_b = 0.4, -8.0
        load = dynamics.battery_load_charging(5000.0, 0.0, 100e3, veh)
        u = models.u_oc(soc, bat)
        r_b = value(models.internal_resistance(np.array(t_b), bat))
        pb = models.battery_power_root(np.array(load), u, r_b)
        res = dynamics.power_balance_charging(soc, t_b, 5000.0, 0.0, 100e3, pb,
                                              veh, bat)
        np.testing.assert_allclose(res, 0.0, atol=1e-9)
        assert pb < 0.0

    def test_residual_slope_in_p_b(self, params):
        veh, bat, th = params
        # d res / d p_b = 2 r p_b / u^2 - 1, checked via duals
        (pb,) = ad.seed([np.array([25e3])])
        res = dynamics.power_balance_driving(288.0, 0.6, 0.0, 0.0, 0.0, 0.3, pb,
                                             veh, bat)
        u = models.u_oc(0.6, bat)
        r_b = value(models.internal_resistance(np.array(0.0), bat))
        np.testing.assert_allclose(res.dot[0, 0], 2 * r_b * 25e3 / u ** 2 - 1.0)

    def test_gradients_match_finite_differences(self, params):
        veh, bat, th = params
        rng = np.random.default_rng(17)
        names = "e soc t_b hvch hvac a_t p_b".split()
        for _ in range(10):
            pt = np.array([rng.uniform(220.0, 1500.0), rng.uniform(0.1, 0.9),
                           rng.uniform(-18.0, 40.0), rng.uniform(0.0, 7e3),
                           rng.uniform(0.0, 5e3), rng.uniform(-2.0, 2.0),
                           rng.uniform(-50e3, 80e3)])
            duals = ad.seed([np.array([c]) for c in pt])
            res = dynamics.power_balance_driving(*duals, veh, bat)
            h = 1e-4
            for i in range(7):
                hi, lo = pt.copy(), pt.copy()
                hi[i] += h
                lo[i] -= h
                num = (value(dynamics.power_balance_driving(*hi, veh, bat))
                       - value(dynamics.power_balance_driving(*lo, veh, bat))) / (2 * h)
                np.testing.assert_allclose(res.dot[0, i], num, rtol=5e-5, atol=5e-4,
                                           err_msg=f"d/d{names[i]}")
