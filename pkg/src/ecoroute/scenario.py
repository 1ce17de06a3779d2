"""Scenario definition: road, chargers, vehicle, battery, thermal and cost data.

A scenario file is YAML with explicit unit suffixes on every field.  The road
profile is either inline (parallel lists) or a CSV sidecar with columns
``s_m,alt_m,vmin_mps,vmax_mps``.  Internally everything is SI except
temperatures (degrees C, only differences and map lookups use them) and
charger energy prices (SEK/kWh, converted at the point of use).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Default charge/discharge power limit tables (W, positive discharge).  The
# product form rate * soc-factor * temperature-factor keeps each table
# monotone in both axes, and bilinear interpolation preserves that.
SOC_GRID = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
TEMP_GRID_C = np.array([-20.0, 0.0, 25.0, 45.0, 60.0])
P_DCHG_MAX_W = 250e3 * np.outer(np.array([0.3, 0.9, 1.0, 1.0, 1.0]),
                                np.array([0.15, 0.4, 1.0, 1.0, 1.0]))
P_CHG_MAX_W = -160e3 * np.outer(np.array([1.0, 1.0, 0.85, 0.45, 0.0]),
                                np.array([0.05, 0.25, 1.0, 1.0, 1.0]))


class ScenarioError(ValueError):
    pass


@dataclass
class RoadProfile:
    """Piecewise-linear altitude and speed limits over distance."""

    s_m: np.ndarray
    alt_m: np.ndarray
    vmin_mps: np.ndarray
    vmax_mps: np.ndarray

    @property
    def length_m(self) -> float:
        return float(self.s_m[-1])


@dataclass
class Charger:
    position_m: float
    p_max_w: float = 150e3
    energy_price_sek_per_kwh: float = 5.0
    occupancy_sek_per_s: float = 0.0  # fee per second beyond the free window
    free_time_s: float = 600.0
    t_chg_max_s: float = 3600.0
    node: int = -1  # filled by snap_chargers

    @property
    def energy_price_sek_per_j(self) -> float:
        return self.energy_price_sek_per_kwh / 3.6e6


@dataclass
class VehicleParams:
    mass_kg: float = 2200.0
    c_d: float = 0.6
    a_f_m2: float = 1.36
    c_r: float = 0.013
    rho_air: float = 1.29
    g: float = 9.81
    p_aux_w: float = 500.0
    p_cabin_w: float = 1500.0
    eta_hvch: float = 0.87
    eta_hvac: float = 0.87
    p_hvch_max_w: float = 7000.0
    p_hvac_max_w: float = 5000.0
    a_cap_mps2: float = 3.0
    p_em_max_w: float = 220e3
    v_eps_mps: float = 1.0
    # drivetrain loss map: p_loss = k0 + k1 * (F v)^2 / p_base + k2 * v^2
    k0_w: float = 500.0
    k1: float = 0.05
    p_base_w: float = 1e5
    k2: float = 0.3
    eps_ed: float = 0.1


@dataclass
class BatteryParams:
    capacity_ah: float = 200.0
    u0_v: float = 300.0
    u1_v: float = 100.0  # u_oc = u0 + u1 * soc
    r_ref_ohm: float = 0.05
    t_ref_c: float = 25.0
    k_r_per_k: float = 0.02
    r_floor_ohm: float = 0.02
    r_cap_ohm: float = 0.15
    cp_mb_j_per_k: float = 375e3
    soc_min: float = 0.05
    soc_max: float = 0.95
    soc_grid: np.ndarray = field(default_factory=lambda: SOC_GRID.copy())
    temp_grid_c: np.ndarray = field(default_factory=lambda: TEMP_GRID_C.copy())
    p_dchg_max_w: np.ndarray = field(default_factory=lambda: P_DCHG_MAX_W.copy())
    p_chg_max_w: np.ndarray = field(default_factory=lambda: P_CHG_MAX_W.copy())

    @property
    def capacity_c(self) -> float:
        return self.capacity_ah * 3600.0


@dataclass
class ThermalParams:
    t_amb_c: float = -10.0
    gamma0_w_per_k: float = 15.0
    gamma1_ws_per_mk: float = 1.0
    t_min_c: float = -25.0
    t_max_c: float = 55.0


@dataclass
class CostWeights:
    # negative values are admitted for frontier exploration
    time_sek_per_s: float = 0.03


@dataclass
class Boundary:
    v0_mps: float = 25.0
    soc0: float = 0.8
    temp0_c: float = -10.0
    soc_final_min: float = 0.8
    temp_final_min_c: float | None = None


@dataclass
class Scenario:
    road: RoadProfile
    chargers: list[Charger]
    vehicle: VehicleParams
    battery: BatteryParams
    thermal: ThermalParams
    costs: CostWeights
    boundary: Boundary
    name: str = "scenario"


@dataclass
class ResampledRoad:
    """Road on a uniform grid: nodes carry speed boxes, intervals carry grade."""

    ds_m: float
    s_m: np.ndarray          # n_nodes
    alt_m: np.ndarray        # n_nodes
    grade_rad: np.ndarray    # n_nodes - 1, per interval
    vmin_mps: np.ndarray     # n_nodes
    vmax_mps: np.ndarray     # n_nodes

    @property
    def n_nodes(self) -> int:
        return self.s_m.size


_ARRAY_FIELDS = {"soc_grid", "temp_grid_c", "p_dchg_max_w", "p_chg_max_w"}


def _build(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(data) - known
    if bad:
        raise ScenarioError(f"{where}: unknown keys {sorted(bad)}")
    kw = {}
    for k, v in data.items():
        kw[k] = np.asarray(v, dtype=float) if k in _ARRAY_FIELDS else v
    return cls(**kw)


def _load_road(data: dict, base_dir: Path) -> RoadProfile:
    if "csv" in data:
        path = base_dir / data["csv"]
        cols: dict[str, list[float]] = {"s_m": [], "alt_m": [], "vmin_mps": [], "vmax_mps": []}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                for k in cols:
                    cols[k].append(float(row[k]))
        data = cols
    try:
        return RoadProfile(*(np.asarray(data[k], dtype=float)
                             for k in ("s_m", "alt_m", "vmin_mps", "vmax_mps")))
    except KeyError as exc:
        raise ScenarioError(f"road: missing column {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a YAML scenario file."""
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: not a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{path}: schema_version {version!r}, expected {SCHEMA_VERSION}")
    if "road" not in raw:
        raise ScenarioError(f"{path}: missing road section")
    scn = Scenario(
        road=_load_road(raw["road"], path.parent),
        chargers=[_build(Charger, c, "chargers") for c in raw.get("chargers", [])],
        vehicle=_build(VehicleParams, raw.get("vehicle", {}), "vehicle"),
        battery=_build(BatteryParams, raw.get("battery", {}), "battery"),
        thermal=_build(ThermalParams, raw.get("thermal", {}), "thermal"),
        costs=_build(CostWeights, raw.get("costs", {}), "costs"),
        boundary=_build(Boundary, raw.get("boundary", {}), "boundary"),
        name=raw.get("name", path.stem),
    )
    validate_scenario(scn)
    return scn


def packaged_scenario(name: str) -> Scenario:
    """Load one of the scenarios shipped with the package by name."""
    return load_scenario(Path(__file__).parent / "data" / f"{name}.scn")


def save_scenario(scn: Scenario, path: str | Path) -> None:
    """Write a scenario back to YAML (road inline, arrays as lists)."""
    def plain(obj):
        out = {}
        for f in dataclasses.fields(obj):
            if f.name == "node":
                continue
            v = getattr(obj, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": scn.name,
        "road": plain(scn.road),
        "chargers": [plain(c) for c in scn.chargers],
        "vehicle": plain(scn.vehicle),
        "battery": plain(scn.battery),
        "thermal": plain(scn.thermal),
        "costs": plain(scn.costs),
        "boundary": plain(scn.boundary),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def validate_scenario(scn: Scenario) -> None:
    """Raise ScenarioError listing every consistency problem found."""
    errs = []
    r = scn.road
    if r.s_m.size < 2:
        errs.append("road: need at least two breakpoints")
    else:
        if r.s_m[0] != 0.0:
            errs.append("road: s_m must start at 0")
        if np.any(np.diff(r.s_m) <= 0):
            errs.append("road: s_m must be strictly increasing")
    for name in ("alt_m", "vmin_mps", "vmax_mps"):
        if getattr(r, name).shape != r.s_m.shape:
            errs.append(f"road: {name} length mismatch")
    if np.any(r.vmin_mps <= 0):
        errs.append("road: vmin_mps must be positive")
    if np.any(r.vmax_mps < r.vmin_mps):
        errs.append("road: vmax_mps below vmin_mps")
    for i, c in enumerate(scn.chargers):
        if not 0.0 < c.position_m <= r.length_m:
            errs.append(f"chargers[{i}]: position outside the route")
        if c.p_max_w <= 0:
            errs.append(f"chargers[{i}]: p_max_w must be positive")
        if c.energy_price_sek_per_kwh < 0 or c.occupancy_sek_per_s < 0:
            errs.append(f"chargers[{i}]: negative price")
        if c.free_time_s < 0 or c.t_chg_max_s <= 0:
            errs.append(f"chargers[{i}]: negative time limit")
    b = scn.battery
    for gname, g in (("soc_grid", b.soc_grid), ("temp_grid_c", b.temp_grid_c)):
        if np.any(np.diff(g) <= 0):
            errs.append(f"battery: {gname} must be strictly increasing")
    for tname, t in (("p_dchg_max_w", b.p_dchg_max_w), ("p_chg_max_w", b.p_chg_max_w)):
        if t.shape != (b.soc_grid.size, b.temp_grid_c.size):
            errs.append(f"battery: {tname} shape {t.shape} does not match grids")
    if np.any(b.p_dchg_max_w < 0) or np.any(b.p_chg_max_w > 0):
        errs.append("battery: discharge limits must be >= 0 and charge limits <= 0")
    if not 0.0 <= b.soc_min < b.soc_max <= 1.0:
        errs.append("battery: soc box must satisfy 0 <= soc_min < soc_max <= 1")
    if b.capacity_ah <= 0 or b.cp_mb_j_per_k <= 0:
        errs.append("battery: capacity and heat capacity must be positive")
    if not b.r_floor_ohm <= b.r_ref_ohm <= b.r_cap_ohm:
        errs.append("battery: r_ref outside [r_floor, r_cap]")
    th = scn.thermal
    if th.t_min_c >= th.t_max_c:
        errs.append("thermal: empty temperature box")
    bd = scn.boundary
    if not b.soc_min <= bd.soc0 <= b.soc_max:
        errs.append("boundary: soc0 outside battery soc box")
    if not b.soc_min <= bd.soc_final_min <= b.soc_max:
        errs.append("boundary: soc_final_min outside battery soc box")
    if not th.t_min_c <= bd.temp0_c <= th.t_max_c:
        errs.append("boundary: temp0_c outside temperature box")
    if bd.v0_mps <= 0:
        errs.append("boundary: v0_mps must be positive")
    if errs:
        raise ScenarioError("; ".join(errs))


def resample_road(road: RoadProfile, ds_m: float) -> ResampledRoad:
    """Sample the road on a uniform grid of spacing ``ds_m``.

    Altitude is interpolated linearly; the grade of each interval is
    arctan of the altitude difference over the spacing.  Speed limits are
    sampled at the nodes.  The route length must be a whole number of steps.
    """
    n_iv = road.length_m / ds_m
    if abs(n_iv - round(n_iv)) > 1e-9:
        raise ScenarioError(f"route length {road.length_m} m is not a multiple of ds={ds_m} m")
    s = ds_m * np.arange(round(n_iv) + 1)
    alt = np.interp(s, road.s_m, road.alt_m)
    vmin = np.interp(s, road.s_m, road.vmin_mps)
    vmax = np.interp(s, road.s_m, road.vmax_mps)
    # cap so the sin/cos grade terms stay well-scaled on bad elevation data
    grade = np.clip(np.arctan(np.diff(alt) / ds_m), -0.2, 0.2)
    return ResampledRoad(ds_m, s, alt, grade, vmin, vmax)


def snap_chargers(scn: Scenario, grid: ResampledRoad) -> None:
    """Attach each charger to the nearest grid node (in place).

    A charger may sit on the final node (charge at destination) but not at
    the start.  Snapping by more than half a step would silently move the
    stop, so that is an error; use a finer grid instead.
    """
    taken: dict[int, float] = {}
    for c in scn.chargers:
        node = int(round(c.position_m / grid.ds_m))
        err = abs(c.position_m - node * grid.ds_m)
        if err > grid.ds_m / 2 + 1e-9:
            raise ScenarioError(f"charger at {c.position_m} m: nearest node is {err:.0f} m away")
        if node <= 0 or node >= grid.n_nodes:
            raise ScenarioError(f"charger at {c.position_m} m snaps to the route start")
        if node in taken:
            raise ScenarioError(f"chargers at {taken[node]} m and {c.position_m} m share node {node}")
        if err > 1e-6:
            log.warning("charger at %.0f m snapped to grid node %d (%.0f m)",
                        c.position_m, node, node * grid.ds_m)
        taken[node] = c.position_m
        c.node = node
    scn.chargers.sort(key=lambda c: c.node)
