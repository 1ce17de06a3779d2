"""Command-line front end: solve, validate, sweep, study and plot.

Thin shell over the library; every command loads files, calls the same
functions the API exposes and writes artifacts to an output directory.
Exit codes: 0 success, 2 solved-but-degraded (non-optimal status or a
failed check), 1 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .pareto import preconditioning_study, sweep
from .plan import plan_trip
from .scenario import Scenario, ScenarioError, load_scenario, resample_road
from .solver import SolverOptions
from .transcription import TripSolution
from .validator import validate

_DATA = Path(__file__).parent / "data"


def _resolve_scenario(arg: str) -> Scenario:
    """Load a scenario from a path or from the packaged examples by name."""
    p = Path(arg)
    if not p.exists():
        for cand in (_DATA / arg, _DATA / f"{arg}.scn"):
            if cand.exists():
                p = cand
                break
    return load_scenario(p)


def _options(args) -> SolverOptions:
    opts = SolverOptions()
    if getattr(args, "kkt_tol", None) is not None:
        opts.kkt_tol = args.kkt_tol
    return opts


def _log_fn():
    if os.environ.get("ECOROUTE_LOG"):
        return lambda line: print(line, file=sys.stderr)
    return None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args) -> int:
    scn = _resolve_scenario(args.scenario)
    out = plan_trip(scn, ds_m=args.ds, n_tau=args.ntau, options=_options(args),
                    btm=not args.no_btm, sim_dt=args.dt, log_fn=_log_fn())
    outdir = _outdir(args)
    out.solution.save(outdir / "solution.json")
    out.solution.export_csv(outdir)
    out.report.save(outdir / "validation.json")
    print(out.solution.summary())
    res = out.result
    print(f"status={res.status} kkt={res.kkt:.2e} outer={res.n_outer} "
          f"wall={res.wall_time_s:.1f}s max_violation={out.report.max_violation:.2e}")
    return 0 if out.ok else 2


def cmd_validate(args) -> int:
    sol = TripSolution.load(args.solution)
    scn = _resolve_scenario(args.scenario)
    report = validate(scn, sol, dt=args.dt)
    outdir = _outdir(args)
    report.save(outdir / "validation.json")
    for name, viol in sorted(report.family_violation.items()):
        print(f"{name:12s} {viol: .3e}")
    print(f"trip time {report.trip_time_sim_s:.1f}s "
          f"(rel err {report.trip_time_rel_err:.2e}), "
          f"energy closure {report.energy_closure_rel:.2e}")
    return 0 if report.ok() else 2


def cmd_sweep(args) -> int:
    scn = _resolve_scenario(args.scenario)
    weights = [float(w) for w in args.weights.split(",")]
    front = sweep(scn, weights, ds_m=args.ds, n_tau=args.ntau,
                  options=_options(args), jobs=args.parallel, log_fn=_log_fn())
    outdir = _outdir(args)
    front.to_csv(outdir / "pareto.csv")
    for p in front.points:
        print(f"c_t={p.time_weight_sek_per_s:<8g} trip={p.trip_time_s:8.1f}s "
              f"chg={p.charge_time_s:7.1f}s energy={p.energy_cost_sek:8.2f} SEK "
              f"[{p.status}]")
    return 0 if all(p.status == "optimal" for p in front.points) else 2


def cmd_study(args) -> int:
    scn = _resolve_scenario(args.scenario)
    study = preconditioning_study(scn, ds_m=args.ds, n_tau=args.ntau,
                                  options=_options(args), log_fn=_log_fn())
    outdir = _outdir(args)
    study.with_btm.solution.save(outdir / "case1_solution.json")
    study.without_btm.solution.save(outdir / "case2_solution.json")
    print(study.summary())
    return 0 if (study.with_btm.ok and study.without_btm.ok) else 2


def _plot_panels(sol: TripSolution, scn: Scenario | None, outdir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    km = [seg.s_m / 1000.0 for seg in sol.segments]
    stops_km = [st.position_m / 1000.0 for st in sol.stops]
    paths = []

    def finish(fig, ax, ylabel, name):
        for x in stops_km:
            ax.axvline(x, color="0.6", ls=":", lw=0.8)
        ax.set_xlabel("distance (km)")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = outdir / name
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for x, seg in zip(km, sol.segments):
        ax.plot(x, seg.v_mps, "C0")
    if scn is not None:
        grid = resample_road(scn.road, sol.ds_m)
        s = grid.s_m / 1000.0
        ax.plot(s, grid.vmax_mps, "k--", lw=0.8)
        ax.plot(s, grid.vmin_mps, "k--", lw=0.8)
        alt = ax.twinx()
        alt.plot(s, grid.alt_m, "C2", alpha=0.5)
        alt.set_ylabel("altitude (m)")
    finish(fig, ax, "speed (m/s)", "speed.svg")

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for x, seg in zip(km, sol.segments):
        ax.plot(x, seg.soc, "C0")
    for st in sol.stops:
        ax.plot([st.position_m / 1000.0] * len(st.soc), st.soc, "C1", lw=2)
    finish(fig, ax, "state of charge (-)", "soc.svg")

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for x, seg in zip(km, sol.segments):
        ax.plot(x, seg.temp_c, "C0")
    for st in sol.stops:
        ax.plot([st.position_m / 1000.0] * len(st.temp_c), st.temp_c, "C1", lw=2)
    finish(fig, ax, "battery temperature (°C)", "temperature.svg")

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for x, seg in zip(km, sol.segments):
        ax.plot(x, seg.p_b_w / 1000.0, "C0", label="battery" if seg is sol.segments[0] else None)
        ax.step(x, seg.p_hvch_w / 1000.0, "C3", where="post",
                label="heater" if seg is sol.segments[0] else None)
        ax.step(x, seg.p_hvac_w / 1000.0, "C1", where="post",
                label="chiller" if seg is sol.segments[0] else None)
    ax.legend(loc="best", fontsize=8)
    finish(fig, ax, "power (kW)", "power.svg")
    return paths


def cmd_plot(args) -> int:
    sol = TripSolution.load(args.solution)
    scn = _resolve_scenario(args.scenario) if args.scenario else None
    outdir = _outdir(args)
    for path in _plot_panels(sol, scn, outdir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecoroute",
                                 description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--out", default="out", help="output directory")
    common.add_argument("--ds", type=float, default=2000.0,
                        help="driving grid spacing (m)")
    common.add_argument("--ntau", type=int, default=20,
                        help="charging-phase nodes per stop")
    common.add_argument("--dt", type=float, default=0.1,
                        help="replay time step (s)")
    common.add_argument("--kkt-tol", type=float, default=None,
                        help="override solver optimality tolerance")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; the solver is deterministic")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common],
                       help="solve a scenario and write solution artifacts")
    p.add_argument("scenario")
    p.add_argument("--no-btm", action="store_true",
                   help="disable battery-directed heating/cooling")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("validate", parents=[common],
                       help="replay a solution in the time domain and check it")
    p.add_argument("solution")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("sweep", parents=[common],
                       help="trade-off sweep over time weights")
    p.add_argument("scenario")
    p.add_argument("--weights", default="0.018,0.023,0.028,0.034,0.04",
                   help="comma-separated time weights (SEK/s)")
    p.add_argument("--parallel", type=int, default=1,
                   help="solve cold in N processes instead of warm-starting")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("study", parents=[common],
                       help="compare charging with and without battery conditioning")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("plot", parents=[common],
                       help="render SVG trajectory panels from a solution file")
    p.add_argument("solution")
    p.add_argument("--scenario", default=None,
                   help="also draw speed limits and altitude")
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
