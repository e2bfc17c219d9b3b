"""Command-line interface.

Exit codes: 0 success, 1 internal error, 2 out-of-scope parameters,
3 configuration parse failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .ensemble import run_ensemble
from .field import ModeSet, sample_modes
from .rng import mode_stream
from .spectrum import Regime, RegimeReport, classify
from .stats import msd, scaling_exponent
from .theory import corrector_scan, fbm_covariance, taylor_kubo
from .tracer import Trajectory

EXIT_OK, EXIT_INTERNAL, EXIT_SCOPE, EXIT_CONFIG = 0, 1, 2, 3


class OutOfScopeError(RuntimeError):
    def __init__(self, report: RegimeReport):
        super().__init__(report.reason)
        self.report = report


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# pipeline pieces


def run_classify(cfg: ExperimentConfig, out=None, fmt: str = "text") -> RegimeReport:
    out = sys.stdout if out is None else out
    report = classify(cfg.spectrum)
    rec = report.as_dict()
    if fmt == "json":
        print(json.dumps(rec, sort_keys=True), file=out)
    elif fmt == "csv":
        w = csv.writer(out)
        w.writerow(list(rec))
        w.writerow(list(rec.values()))
    else:
        line = report.regime.value
        if report.regime is Regime.FRACTIONAL_BM:
            line += f" \u03b4={report.delta:.4f} H={report.hurst:.4g}"
        print(line, file=out)
        print(f"reason: {report.reason}", file=out)
    return report


def theory_record(cfg: ExperimentConfig, report: RegimeReport, quantity: str = "auto",
                  eps: float = 0.0) -> dict:
    params = cfg.spectrum
    if quantity == "auto":
        quantity = "fbm_covariance" if report.regime is Regime.FRACTIONAL_BM else "taylor_kubo"
    if quantity == "fbm_covariance":
        res = fbm_covariance(params)
    elif quantity == "taylor_kubo":
        res = taylor_kubo(params, eps)
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    rec = {"params": _params_record(cfg), "quantity": quantity}
    if quantity == "taylor_kubo":
        rec["eps"] = eps
    rec.update(res.as_dict())
    rec["trace"] = float(np.trace(res.value))
    return rec


def _params_record(cfg: ExperimentConfig) -> dict:
    from .spectrum import params_to_config

    return params_to_config(cfg.spectrum)


def simulate_ensemble(cfg: ExperimentConfig) -> tuple[ModeSet, Trajectory]:
    modes = sample_modes(cfg.spectrum, cfg.mode_count, cfg.strata, mode_stream(cfg.seed))
    traj = run_ensemble(cfg.spectrum, modes, cfg.tracer, cfg.seed, cfg.path_count,
                        cfg.workers, cfg.chunk_size)
    return modes, traj


def analyze_ensemble(cfg: ExperimentConfig, traj: Trajectory, report: RegimeReport, theory: dict):
    summary = msd(traj) if traj.batched and traj.positions.shape[0] >= 2 else None
    rec: dict = {"paths": int(traj.positions.shape[0]) if traj.batched else 1}
    if summary is None:
        rec["note"] = "fewer than two paths: no ensemble statistics"
        return summary, rec
    t_end = float(summary.times[-1])
    positive = summary.times[summary.times > 0]
    rec["msd_end"] = float(summary.msd[-1])
    rec["msd_over_2T"] = float(summary.msd[-1] / (2.0 * t_end))
    try:
        window = cfg.fit_window or (float(positive[0]) if positive.size < 20 else float(t_end / 10), t_end)
        slope, se = scaling_exponent(summary, window)
        rec.update({"slope": slope, "slope_stderr": se, "window": list(summary.window)})
    except ValueError as exc:
        rec["fit_error"] = str(exc)
        slope = None
    tr = theory.get("trace")
    if report.regime is Regime.DIFFUSIVE:
        if slope is not None:
            rec["abs_slope_minus_1"] = abs(slope - 1.0)
        if tr:
            rec["trace_D_sim"] = rec["msd_over_2T"]
            rec["rel_trace_error"] = abs(rec["msd_over_2T"] / tr - 1.0)
    elif report.regime is Regime.FRACTIONAL_BM:
        rec["two_H"] = 2 * report.hurst
        if slope is not None:
            rec["abs_slope_minus_2H"] = abs(slope - 2 * report.hurst)
        if tr and np.isfinite(tr):
            rec["amplitude_ratio"] = float(summary.msd[-1] / (tr * t_end ** (2 * report.hurst)))
    return summary, rec


# ---------------------------------------------------------------------------
# output helpers


def _versions() -> dict:
    import scipy
    import sklearn

    return {"drifttracer": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def write_manifest(out_dir: Path, cfg: ExperimentConfig, stages: list, failed: str | None,
                   files: list, error: str | None = None) -> None:
    manifest = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "stages_completed": stages,
        "failed_stage": failed,
        "error": error,
        "files": sorted(files),
        "versions": _versions(),
    }
    (out_dir / "MANIFEST.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def write_ensemble(out_dir: Path, traj: Trajectory, cfg: ExperimentConfig) -> list[str]:
    files = []
    np.savez(out_dir / "ensemble.npz", times=traj.times, positions=traj.positions, drift=traj.drift)
    files.append("ensemble.npz")
    if cfg.write_trajectories:
        tdir = out_dir / "trajectories"
        tdir.mkdir(exist_ok=True)
        for i, member in enumerate(traj.members()):
            member.to_csv(tdir / f"path_{i:05d}.csv")
            files.append(f"trajectories/path_{i:05d}.csv")
        traj.write_metadata(tdir / "metadata.json")
        files.append("trajectories/metadata.json")
    return files


def load_ensemble(out_dir: Path) -> Trajectory:
    with np.load(out_dir / "ensemble.npz") as data:
        return Trajectory(data["times"], data["positions"], data["drift"])


def run_experiment(cfg: ExperimentConfig, out_dir=None, *, stages=("classify", "quadrature",
                   "simulate", "analyze")) -> dict:
    """Run the pipeline and write its outputs; returns the summary record.

    On failure a ``MANIFEST.json`` lists the completed stages and the failed
    one, and every file written so far is kept.
    """
    out = Path(out_dir or cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    done: list[str] = []
    files: list[str] = []
    summary: dict = {"params": _params_record(cfg), "seed": cfg.seed, "mode_count": cfg.mode_count,
                     "path_count": cfg.path_count, "tracer": {
                         "mode": cfg.tracer.mode.value, "scheme": cfg.tracer.scheme,
                         "epsilon": cfg.tracer.epsilon, "horizon": cfg.tracer.horizon,
                         "dt": cfg.tracer.dt, "kappa": cfg.tracer.kappa}}
    stage = "classify"
    try:
        report = classify(cfg.spectrum)
        summary["regime"] = report.as_dict()
        done.append(stage)
        if report.regime is Regime.OUT_OF_SCOPE:
            raise OutOfScopeError(report)
        theory: dict = {}
        if "quadrature" in stages:
            stage = "quadrature"
            theory = theory_record(cfg, report)
            summary["theory"] = theory
            done.append(stage)
        traj = None
        if "simulate" in stages:
            stage = "simulate"
            modes, traj = simulate_ensemble(cfg)
            modes.to_csv(out / "modes.csv")
            files.append("modes.csv")
            files += write_ensemble(out, traj, cfg)
            done.append(stage)
        if "analyze" in stages:
            stage = "analyze"
            traj = traj if traj is not None else load_ensemble(out)
            ens, comparison = analyze_ensemble(cfg, traj, report, theory)
            summary["comparison"] = comparison
            if ens is not None:
                if "csv" in cfg.formats:
                    ens.to_csv(out / "msd.csv")
                    files.append("msd.csv")
                if "json" in cfg.formats:
                    _write_json(out / "msd.json", {"t": ens.times, "msd": ens.msd, "stderr": ens.stderr})
                    files.append("msd.json")
            done.append(stage)
        _write_json(out / "summary.json", summary)
        files.append("summary.json")
        write_manifest(out, cfg, done, None, files)
        return summary
    except OutOfScopeError as exc:
        _write_json(out / "summary.json", summary)
        files.append("summary.json")
        write_manifest(out, cfg, done, "classify", files, f"out of scope: {exc}")
        raise
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then re-raised
        _write_json(out / "summary.json", summary)
        files.append("summary.json")
        write_manifest(out, cfg, done, stage, files, repr(exc))
        raise StageError(stage, exc) from exc


def run_corrector_scan(cfg: ExperimentConfig, lambdas=None, out_dir=None) -> str:
    """CSV table of ``(lambda, variance, gradient variance)`` plus verdict lines."""
    lams = cfg.lambdas if lambdas is None else tuple(lambdas)
    scan = corrector_scan(cfg.spectrum, lams)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "corrector_variance", "corrector_gradient_variance"])
    for row in zip(scan.lambdas, scan.variance, scan.gradient_variance):
        w.writerow([repr(float(x)) for x in row])
    table = buf.getvalue()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "corrector_scan.csv").write_text(table)
        _write_json(out / "corrector_verdicts.json",
                    {"variance": scan.variance_verdict, "gradient": scan.gradient_verdict})
    verdicts = ""
    if scan.variance_verdict is not None:
        verdicts = f"# verdict: {scan.variance_verdict}\n# verdict: {scan.gradient_verdict}\n"
    return table + verdicts


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drifttracer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, help="override [field] seed")
        p.add_argument("--workers", type=int, help="override [ensemble] workers")
        p.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format")
        if out:
            p.add_argument("--out", help="output directory (default: [output] directory)")

    p = sub.add_parser("classify", help="report the scaling regime")
    common(p, out=False)
    p.set_defaults(format=None)
    p = sub.add_parser("quadrature", help="evaluate D*, D_eps or the fBM amplitude")
    common(p, out=False)
    p.add_argument("--quantity", choices=("auto", "taylor_kubo", "fbm_covariance"), default="auto")
    p.add_argument("--eps", type=float, default=0.0)
    for name, help_ in (("simulate", "sample modes and simulate the ensemble"),
                        ("analyze", "MSD statistics of a simulated ensemble"),
                        ("report", "full pipeline: classify, quadrature, simulate, analyze")):
        p = sub.add_parser(name, help=help_)
        common(p)
    p = sub.add_parser("corrector-scan", help="lambda scan of the corrector bounds")
    common(p)
    p.add_argument("--lambdas", help="comma-separated descending lambda values")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, workers=args.workers, directory=getattr(args, "out", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "classify":
            report = run_classify(cfg, fmt=args.format or "text")
            return EXIT_SCOPE if report.regime is Regime.OUT_OF_SCOPE else EXIT_OK
        if args.command == "quadrature":
            report = classify(cfg.spectrum)
            if report.regime is Regime.OUT_OF_SCOPE:
                print(f"out of scope: {report.reason}", file=sys.stderr)
                return EXIT_SCOPE
            rec = theory_record(cfg, report, args.quantity, args.eps)
            _emit(rec, args.format)
            return EXIT_OK
        if args.command == "corrector-scan":
            lams = None
            if args.lambdas:
                lams = [float(x) for x in args.lambdas.replace(",", " ").split()]
            print(run_corrector_scan(cfg, lams, cfg.directory), end="")
            return EXIT_OK
        stages = {"simulate": ("classify", "simulate"),
                  "analyze": ("classify", "quadrature", "analyze"),
                  "report": ("classify", "quadrature", "simulate", "analyze")}[args.command]
        summary = run_experiment(cfg, cfg.directory, stages=stages)
        _emit(summary.get("comparison", {"status": "ok", "directory": cfg.directory}), args.format)
        return EXIT_OK
    except OutOfScopeError as exc:
        print(f"out of scope: {exc}", file=sys.stderr)
        return EXIT_SCOPE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


def _emit(record: dict, fmt: str) -> None:
    if fmt == "csv":
        flat = {k: v for k, v in record.items() if not isinstance(v, (dict, list))}
        w = csv.writer(sys.stdout)
        w.writerow(list(flat))
        w.writerow(list(flat.values()))
    else:
        print(json.dumps(record, indent=2, sort_keys=True, default=_json_default))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
