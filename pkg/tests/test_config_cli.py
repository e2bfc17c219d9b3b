import json
import subprocess
import sys

import numpy as np
import pytest

from drifttracer.cli import main, run_corrector_scan, run_experiment, StageError
from drifttracer.config import ConfigError, load_config, parse_config, render_config
from drifttracer.tracer import Mode

BASE = """
[meta]
schema_version = 1

[spectrum]
alpha = {alpha}
beta = {beta}

[field]
mode_count = 64
strata = 8
seed = 7

[tracer]
mode = {mode}
horizon = {horizon}
dt = {dt}

[ensemble]
path_count = {paths}
chunk_size = 4

[output]
directory = {out}
trajectories = true
"""


def write_cfg(tmp_path, name="cfg.ini", alpha=0.3, beta=0.3, mode="BallisticLine", horizon=2.0,
              dt=0.05, paths=8, extra=""):
    out = tmp_path / (name + ".out")
    text = BASE.format(alpha=alpha, beta=beta, mode=mode, horizon=horizon, dt=dt, paths=paths, out=out)
    path = tmp_path / name
    path.write_text(text + extra)
    return path


class TestConfig:
    def test_parse(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path))
        assert cfg.spectrum.alpha == 0.3 and cfg.seed == 7
        assert cfg.tracer.mode is Mode.BALLISTIC and cfg.path_count == 8
        assert cfg.write_trajectories

    def test_round_trip(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, extra="\n[analysis]\nfit_window = 0.5, 2\n"))
        again = parse_config(render_config(cfg))
        assert again.spectrum == cfg.spectrum
        assert again.tracer == cfg.tracer
        assert again.fit_window == cfg.fit_window

    def test_grid_points(self, tmp_path):
        text = write_cfg(tmp_path).read_text().replace("dt = 0.05", "dt = 0.05\ngrid_points = 12")
        cfg = parse_config(text)
        assert len(cfg.tracer.grid) == 12
        assert cfg.tracer.grid[0] == pytest.approx(0.05) and cfg.tracer.grid[-1] == pytest.approx(2.0)

    @pytest.mark.parametrize("mutate", [
        lambda t: t.replace("[meta]", "[bogus]\nx = 1\n[meta]"),
        lambda t: t.replace("seed = 7", "seed = 7\ncolour = red"),
        lambda t: t.replace("seed = 7", ""),
        lambda t: t.replace("schema_version = 1", "schema_version = 9"),
        lambda t: t.replace("alpha = 0.3", "alpha = abc"),
        lambda t: t.replace("path_count = 8", "path_count = 0"),
        lambda t: t.replace("[tracer]", "[tracer"),
    ])
    def test_rejects(self, tmp_path, mutate):
        text = mutate(write_cfg(tmp_path).read_text())
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_hash_tracks_text(self, tmp_path):
        a = load_config(write_cfg(tmp_path, "a.ini"))
        b = load_config(write_cfg(tmp_path, "b.ini", paths=9))
        assert a.config_hash != b.config_hash


class TestClassifyCommand:
    def test_diffusive(self, tmp_path, capsys):
        assert main(["classify", "--config", str(write_cfg(tmp_path))]) == 0
        assert capsys.readouterr().out.startswith("Diffusive")

    def test_fbm_text(self, tmp_path, capsys):
        assert main(["classify", "--config", str(write_cfg(tmp_path, alpha=0.8, beta=0.4))]) == 0
        assert "FractionalBM δ=0.6667 H=0.75" in capsys.readouterr().out

    def test_json(self, tmp_path, capsys):
        assert main(["classify", "--config", str(write_cfg(tmp_path, alpha=0.6, beta=0.6)),
                     "--format", "json"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["regime"] == "FractionalBM" and rec["hurst"] == pytest.approx(0.6)

    def test_out_of_scope(self, tmp_path, capsys):
        assert main(["classify", "--config", str(write_cfg(tmp_path, alpha=0.7, beta=0.8))]) == 2
        assert "alpha+2beta<2" in capsys.readouterr().out

    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[meta]\nschema_version = 1\n")
        assert main(["classify", "--config", str(bad)]) == 3
        assert main(["classify", "--config", str(tmp_path / "missing.ini")]) == 3


class TestQuadratureCommand:
    def test_taylor_kubo_json(self, tmp_path, capsys):
        assert main(["quadrature", "--config", str(write_cfg(tmp_path)), "--eps", "0.01"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["quantity"] == "taylor_kubo" and rec["converged"]
        assert rec["trace"] == pytest.approx(np.trace(np.array(rec["value"])))

    def test_fbm_auto(self, tmp_path, capsys):
        assert main(["quadrature", "--config", str(write_cfg(tmp_path, alpha=0.8, beta=0.4))]) == 0
        assert json.loads(capsys.readouterr().out)["quantity"] == "fbm_covariance"

    def test_out_of_scope(self, tmp_path):
        assert main(["quadrature", "--config", str(write_cfg(tmp_path, alpha=0.7, beta=0.8))]) == 2


class TestExperiment:
    def test_smoke_single_path(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, paths=1, horizon=0.1))
        summary = run_experiment(cfg, tmp_path / "run")
        files = json.loads((tmp_path / "run" / "MANIFEST.json").read_text())["files"]
        for name in ("modes.csv", "ensemble.npz", "summary.json", "trajectories/path_00000.csv"):
            assert name in files and (tmp_path / "run" / name).exists()
        assert summary["comparison"]["paths"] == 1

    def test_diffusive_comparison_fields(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, horizon=50.0, dt=0.05, paths=16))
        comp = run_experiment(cfg, tmp_path / "run")["comparison"]
        for key in ("slope", "abs_slope_minus_1", "rel_trace_error", "trace_D_sim"):
            assert key in comp

    def test_fbm_comparison_fields(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, alpha=0.8, beta=0.4, horizon=50.0, dt=0.05, paths=16))
        comp = run_experiment(cfg, tmp_path / "run")["comparison"]
        assert comp["two_H"] == pytest.approx(1.5)
        assert "amplitude_ratio" in comp and "abs_slope_minus_2H" in comp

    def test_deterministic_across_runs_and_workers(self, tmp_path):
        outs = []
        for name, workers in (("a", "1"), ("b", "1"), ("c", "3")):
            cfg = write_cfg(tmp_path, name + ".ini", horizon=5.0, paths=10)
            assert main(["report", "--config", str(cfg), "--workers", workers,
                         "--out", str(tmp_path / name)]) == 0
            outs.append(tmp_path / name)
        for rel in ("modes.csv", "msd.csv", "trajectories/path_00007.csv"):
            blobs = {(o / rel).read_bytes() for o in outs}
            assert len(blobs) == 1, rel

    def test_failed_stage_manifest(self, tmp_path, capsys):
        # dt violates the step-resolution guard of the trapezoid scheme
        cfg_path = write_cfg(tmp_path, horizon=20.0, dt=2.0)
        assert main(["report", "--config", str(cfg_path), "--out", str(tmp_path / "run")]) == 1
        manifest = json.loads((tmp_path / "run" / "MANIFEST.json").read_text())
        assert manifest["failed_stage"] == "simulate"
        assert manifest["stages_completed"] == ["classify", "quadrature"]
        assert (tmp_path / "run" / "summary.json").exists()
        with pytest.raises(StageError):
            run_experiment(load_config(cfg_path), tmp_path / "run2")

    def test_out_of_scope_exit(self, tmp_path):
        cfg_path = write_cfg(tmp_path, alpha=0.7, beta=0.8)
        assert main(["report", "--config", str(cfg_path), "--out", str(tmp_path / "run")]) == 2
        manifest = json.loads((tmp_path / "run" / "MANIFEST.json").read_text())
        assert manifest["failed_stage"] == "classify"

    def test_simulate_then_analyze(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, horizon=5.0, paths=6)
        out = str(tmp_path / "run")
        assert main(["simulate", "--config", str(cfg_path), "--out", out]) == 0
        assert main(["analyze", "--config", str(cfg_path), "--out", out]) == 0
        assert (tmp_path / "run" / "msd.csv").exists()

    def test_full_trajectory_mode(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, mode="FullTrajectory", horizon=1.0, paths=4))
        summary = run_experiment(cfg, tmp_path / "run")
        assert summary["tracer"]["mode"] == "FullTrajectory"


class TestCorrectorScanCommand:
    def test_diffusive_verdict(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path))
        text = run_corrector_scan(cfg)
        assert "# verdict: variance -> 0" in text
        assert text.splitlines()[0] == "lambda,corrector_variance,corrector_gradient_variance"

    def test_bounded_gradient_verdict(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, alpha=0.8, beta=0.4))
        text = run_corrector_scan(cfg, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6], tmp_path / "scan")
        assert "gradient variance bounded" in text
        assert (tmp_path / "scan" / "corrector_scan.csv").exists()

    def test_single_lambda(self, tmp_path):
        text = run_corrector_scan(load_config(write_cfg(tmp_path)), [0.1])
        assert len(text.splitlines()) == 2 and "verdict" not in text

    def test_non_descending_is_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["corrector-scan", "--config", str(cfg), "--lambdas", "1e-3,1e-2",
                     "--out", str(tmp_path / "scan")]) == 1


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, alpha=0.8, beta=0.4)
    proc = subprocess.run([sys.executable, "-m", "drifttracer.cli", "classify", "--config", str(cfg)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("FractionalBM")
