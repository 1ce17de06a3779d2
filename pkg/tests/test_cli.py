"""Command-line shell: artifact plumbing, exit codes, CLI/API parity."""

import json

import numpy as np
import pytest

from ecoroute.cli import main
from ecoroute.plan import plan_trip
from ecoroute.scenario import packaged_scenario


class TestPlanTrip:
    def test_outcome_bundle(self, cruise_solved):
        _, out = cruise_solved
        assert out.ok
        assert out.report is not None
        assert out.solution.diagnostics["status"] == "optimal"
        assert out.solution.diagnostics["inner_iterations"] > 0

    def test_check_can_be_skipped(self, cruise_scn):
        out = plan_trip(cruise_scn, ds_m=2000.0, n_tau=12, check=False)
        assert out.report is None
        assert out.ok   # status alone decides when no report exists


class TestSolveCommand:
    def test_artifacts_and_exit_code(self, tmp_path, capsys):
        code = main(["solve", "cruise_warm", "-o", str(tmp_path),
                     "--ds", "2000"])
        assert code == 0
        for name in ("solution.json", "validation.json", "drive_0.csv"):
            assert (tmp_path / name).exists()
        out = capsys.readouterr().out
        assert ") min" in out and "status=optimal" in out

    def test_matches_library_call_byte_for_byte(self, tmp_path):
        # identical core outputs either way in; only wall-clock diagnostics
        # may differ between runs
        main(["solve", "cruise_warm", "-o", str(tmp_path / "cli"),
              "--ds", "2000"])
        scn = packaged_scenario("cruise_warm")
        out = plan_trip(scn, ds_m=2000.0, n_tau=20)
        api_path = tmp_path / "api.json"
        out.solution.save(api_path)
        cli_doc = json.loads((tmp_path / "cli" / "solution.json").read_text())
        api_doc = json.loads(api_path.read_text())
        cli_doc.pop("diagnostics")["wall_time_s"]
        api_doc.pop("diagnostics")
        assert json.dumps(cli_doc, sort_keys=True) == \
            json.dumps(api_doc, sort_keys=True)

    def test_missing_scenario_exits_one(self, tmp_path, capsys):
        code = main(["solve", str(tmp_path / "nope.scn"), "-o", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_scenario_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.scn"
        bad.write_text("schema_version: 99\nroad: {}\n")
        code = main(["solve", str(bad), "-o", str(tmp_path)])
        assert code == 1
        assert "schema_version" in capsys.readouterr().err


class TestValidateCommand:
    def test_passing_solution_exits_zero(self, tmp_path, capsys):
        main(["solve", "cruise_warm", "-o", str(tmp_path), "--ds", "2000"])
        code = main(["validate", str(tmp_path / "solution.json"),
                     "cruise_warm", "-o", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "speed" in out and "trip time" in out
        doc = json.loads((tmp_path / "validation.json").read_text())
        assert doc["max_violation"] <= 1e-3


class TestPlotCommand:
    def test_four_svg_panels(self, tmp_path):
        main(["solve", "cruise_warm", "-o", str(tmp_path), "--ds", "2000"])
        code = main(["plot", str(tmp_path / "solution.json"),
                     "--scenario", "cruise_warm", "-o", str(tmp_path)])
        assert code == 0
        for name in ("speed.svg", "soc.svg", "temperature.svg", "power.svg"):
            path = tmp_path / name
            assert path.exists()
            body = path.read_text()
            assert "<svg" in body

    def test_axis_labels(self, tmp_path):
        main(["solve", "cruise_warm", "-o", str(tmp_path), "--ds", "2000"])
        main(["plot", str(tmp_path / "solution.json"), "-o", str(tmp_path)])
        assert "speed (m/s)" in (tmp_path / "speed.svg").read_text()
        assert "battery temperature" in (tmp_path / "temperature.svg").read_text()


class TestSweepCommand:
    def test_csv_artifact(self, tmp_path, capsys):
        code = main(["sweep", "cruise_warm", "-o", str(tmp_path),
                     "--ds", "2000", "--weights", "0.02,0.04"])
        assert code == 0
        lines = (tmp_path / "pareto.csv").read_text().splitlines()
        assert lines[0] == "c_t_trip,trip_time_s,chg_time_s,energy_cost,status"
        assert len(lines) == 3
        assert "optimal" in capsys.readouterr().out
