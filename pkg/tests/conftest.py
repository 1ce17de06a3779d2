"""Shared fixtures: packaged scenarios and one small solved instance."""

import numpy as np
import pytest

from ecoroute.plan import plan_trip
from ecoroute.scenario import (BatteryParams, Boundary, Charger, CostWeights,
                               RoadProfile, Scenario, ThermalParams,
                               VehicleParams, packaged_scenario)


def flat_road(length_m, vmin=15.0, vmax=30.0):
    return RoadProfile(s_m=np.array([0.0, length_m]),
                       alt_m=np.array([0.0, 0.0]),
                       vmin_mps=np.array([vmin, vmin]),
                       vmax_mps=np.array([vmax, vmax]))


def toy_cold_scenario(occupancy_sek_per_s=0.02, free_time_s=120.0):
    """18 km cold trip, one mid-route charger, loose but binding soc target."""
    chg = Charger(position_m=9000.0, p_max_w=150e3,
                  energy_price_sek_per_kwh=5.0,
                  occupancy_sek_per_s=occupancy_sek_per_s,
                  free_time_s=free_time_s, t_chg_max_s=3600.0)
    return Scenario(road=flat_road(18000.0), chargers=[chg],
                    vehicle=VehicleParams(), battery=BatteryParams(),
                    thermal=ThermalParams(t_amb_c=-5.0),
                    costs=CostWeights(time_sek_per_s=0.03),
                    boundary=Boundary(v0_mps=20.0, soc0=0.52, temp0_c=-5.0,
                                      soc_final_min=0.58),
                    name="toy_cold")


@pytest.fixture(scope="session")
def cruise_scn():
    return packaged_scenario("cruise_warm")


@pytest.fixture(scope="session")
def ref_scn():
    return packaged_scenario("reference_cold")


@pytest.fixture(scope="session")
def cruise_solved():
    """Solved warm cruise: cheap, reused wherever a real optimum is needed."""
    scn = packaged_scenario("cruise_warm")
    out = plan_trip(scn, ds_m=1000.0, n_tau=12)
    assert out.result.status == "optimal"
    return scn, out
