import json

import numpy as np

import darklind.cli as cli
from darklind.checks import CriterionResult


def run_cli(args, monkeypatch=None, env=None):
    return cli.main(args)


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


class TestValidation:
    def test_unknown_experiment_flag(self, tmp_path, capsys):
        rc = cli.main(["run", "--outdir", str(tmp_path)])
        assert rc == 1
        assert "experiment" in capsys.readouterr().err
        assert list(tmp_path.iterdir()) == []

    def test_bad_tolerance(self, tmp_path, capsys):
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--rtol=-1e-9",
            "--outdir", str(tmp_path),
        ])
        assert rc == 1
        assert list(tmp_path.iterdir()) == []

    def test_bad_bloch_vector(self, tmp_path):
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--n0", "2,0,0",
            "--outdir", str(tmp_path),
        ])
        assert rc == 1
        assert list(tmp_path.iterdir()) == []

    def test_bad_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        rc = cli.main(["run", "sweep", "--config", str(cfg), "--outdir", str(tmp_path)])
        assert rc == 1

    def test_low_gammaT_warns_but_runs(self, tmp_path, capsys):
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "8", "--checkpoints", "4",
            "--rtol", "1e-7", "--outdir", str(tmp_path),
        ])
        assert rc == 0
        assert "expansion unreliable" in capsys.readouterr().err


class TestTrajectoryExperiment:
    def test_artifacts_and_schema(self, tmp_path):
        out = tmp_path / "run1"
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--n0", "0,0,1",
            "--checkpoints", "8", "--rtol", "1e-8", "--outdir", str(out),
        ])
        assert rc == 0
        csv_lines = (out / "spin32_purity.csv").read_text().splitlines()
        assert csv_lines[0] == "tau,purity,trace,min_eig,nx,ny,nz,td_effective"
        assert len(csv_lines) == 10  # header + checkpoints + 1
        report = read_json(out / "spin32_purity_report.json")
        assert report["schema_version"] == 1
        assert report["gammaT"] == 50.0
        assert 0.0 < report["purity_loss_exact"] < 1.0
        assert report["csv_columns"] == csv_lines[0].split(",")
        assert len(report["csv_rows"]) == 9
        # no files outside the output directory
        assert sorted(p.name for p in tmp_path.iterdir()) == ["run1"]

    def test_determinism(self, tmp_path):
        args = [
            "run", "spin32-purity", "--gammaT", "50", "--n0", "0,1,0",
            "--checkpoints", "6", "--rtol", "1e-8", "--seed", "42",
        ]
        assert cli.main(args + ["--outdir", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--outdir", str(tmp_path / "b")]) == 0
        csv_a = (tmp_path / "a" / "spin32_purity.csv").read_bytes()
        csv_b = (tmp_path / "b" / "spin32_purity.csv").read_bytes()
        assert csv_a == csv_b

    def test_gnuplot_emission(self, tmp_path):
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--checkpoints", "4",
            "--rtol", "1e-7", "--outdir", str(tmp_path), "--gnuplot",
        ])
        assert rc == 0
        script = (tmp_path / "spin32_purity.gnuplot").read_text()
        assert "plot" in script and "spin32_purity.csv" in script

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("DARKLIND_OUTDIR", str(target))
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--checkpoints", "4",
            "--rtol", "1e-7", "--outdir", str(tmp_path / "ignored"),
        ])
        assert rc == 0
        assert (target / "spin32_purity.csv").exists()
        assert not (tmp_path / "ignored").exists()


class TestSweepExperiment:
    def test_schema_and_flags(self, tmp_path):
        rc = cli.main([
            "run", "sweep", "--gammaT", "50,100", "--n0", "0,0,1",
            "--rtol", "1e-8", "--outdir", str(tmp_path),
        ])
        assert rc == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "gammaT,purity_loss_exact,purity_loss_eq12,purity_loss_eq21,trace_distance_final"
        assert len(lines) == 3
        report = read_json(tmp_path / "sweep_report.json")
        assert set(report["flags"]) == {
            "slope_in_window", "fit_r2_ok", "effective_order_in_window",
            "first_order_in_window",
        }
        assert len(report["purity_loss_exact"]) == 2

    def test_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "experiment": "sweep",
            "gammaT": [50.0, 100.0],
            "tolerances": {"rtol": 1e-8},
            "output_dir": str(tmp_path / "cfg_dir"),
        }))
        rc = cli.main([
            "run", "--config", str(cfg), "--gammaT", "60",
            "--outdir", str(tmp_path / "flag_dir"),
        ])
        assert rc == 0
        report = read_json(tmp_path / "flag_dir" / "sweep_report.json")
        assert report["gammaT"] == [60.0]
        assert not (tmp_path / "cfg_dir").exists()


class TestOtherExperiments:
    def test_effective_vs_full_single(self, tmp_path):
        rc = cli.main([
            "run", "effective-vs-full", "--gammaT", "50", "--checkpoints", "5",
            "--rtol", "1e-8", "--outdir", str(tmp_path),
        ])
        assert rc == 0
        lines = (tmp_path / "effective_vs_full.csv").read_text().splitlines()
        assert lines[0] == "tau,trace_distance,purity_exact,purity_effective"
        report = read_json(tmp_path / "effective_vs_full_report.json")
        assert report["max_distance"] >= report["final_distance"] * 0.0
        assert report["max_distance"] < 0.1

    def test_gauge_check(self, tmp_path):
        rc = cli.main([
            "run", "gauge-check", "--gammaT", "40,80", "--seed", "7",
            "--outdir", str(tmp_path),
        ])
        assert rc == 0
        report = read_json(tmp_path / "gauge_check_report.json")
        assert report["defect_ratio"] < 0.75
        assert report["flags"]["purity_gauge_invariant"] is True

    def test_custom_two_level(self, tmp_path):
        cfg = tmp_path / "custom.json"
        cfg.write_text(json.dumps({
            "experiment": "custom",
            "protocol": {
                "family": "custom",
                "two_j": 1,
                "generators": ["sz"],
                "angles": [{"family": "linear", "m": 1}],
                "jump": "lowering",
            },
            "gammaT": 40.0,
            "initial": {"density_matrix": {"re": [[1.0]], "im": [[0.0]]}},
            "checkpoints": 4,
            "tolerances": {"rtol": 1e-8},
            "output_dir": str(tmp_path),
        }))
        rc = cli.main(["run", "--config", str(cfg)])
        assert rc == 0
        report = read_json(tmp_path / "custom_report.json")
        # single dark state: nothing to dephase
        assert report["purity_loss_exact"] <= 1e-8
        assert report["dark_dimension"] == 1
        rows = np.array(report["csv_rows"], dtype=float)
        assert np.all(np.isnan(rows[:, 4]))  # no Bloch columns for d != 2


class TestNumericalFailure:
    def test_exit_two_with_diagnostic(self, tmp_path, monkeypatch):
        from darklind.engine import StepSizeUnderflowError

        def exploding(cfg):
            raise StepSizeUnderflowError(3.5, 1e-16)

        monkeypatch.setitem(cli._RUNNERS, "spin32-purity", exploding)
        rc = cli.main([
            "run", "spin32-purity", "--gammaT", "50", "--outdir", str(tmp_path),
        ])
        assert rc == 2
        diag = read_json(tmp_path / "spin32_purity_diagnostic.json")
        assert diag["error"] == "StepSizeUnderflowError"
        assert diag["tau"] == 3.5
        assert not (tmp_path / "spin32_purity.csv").exists()


class TestCheckCommand:
    def _fake_results(self, all_pass):
        return [
            CriterionResult(1, "alpha", "x <= 1", "x = 0.5", True, 0.01, {}),
            CriterionResult(2, "beta", "y <= 2", "y = 3", all_pass, 0.01, {"y": 3}),
        ]

    def test_exit_zero_when_all_pass(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "run_battery", lambda **kw: self._fake_results(True))
        assert cli.main(["check"]) == 0
        out = capsys.readouterr().out
        assert "alpha" in out and "pass" in out

    def test_exit_three_on_failure_with_table(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "run_battery", lambda **kw: self._fake_results(False))
        assert cli.main(["check"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_json_output(self, monkeypatch, capsys, tmp_path):
        monkeypatch.setattr(cli, "run_battery", lambda **kw: self._fake_results(True))
        target = tmp_path / "results.json"
        assert cli.main(["check", "--json", "--output", str(target)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["all_passed"] is True
        assert len(payload["criteria"]) == 2
        saved = read_json(target)
        assert saved["criteria"][0]["name"] == "alpha"

    def test_tolerance_scale_forwarded(self, monkeypatch):
        seen = {}

        def fake(**kwargs):
            seen.update(kwargs)
            return self._fake_results(True)

        monkeypatch.setattr(cli, "run_battery", fake)
        cli.main(["check", "--tolerance-scale", "0.25"])
        assert seen["tolerance_scale"] == 0.25
