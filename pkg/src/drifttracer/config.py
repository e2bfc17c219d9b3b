"""Experiment configuration files.

A configuration is an INI file with flat sections::

    [meta]
    schema_version = 1

    [spectrum]
    alpha = 0.3
    beta = 0.3
    drift = 1, 0

    [field]
    mode_count = 1024
    seed = 7

    [tracer]
    mode = BallisticLine
    horizon = 1000
    dt = 0.05

    [ensemble]
    path_count = 1000

Unknown sections and keys are rejected.  See :data:`SCHEMA` for every key
and its default.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .spectrum import CONFIG_KEYS, SpectrumParams, params_from_config
from .tracer import TracerConfig

SCHEMA_VERSION = 1
REQUIRED = object()

SCHEMA: dict[str, dict[str, Any]] = {
    "meta": {"schema_version": REQUIRED},
    "spectrum": {key: None for key in CONFIG_KEYS},
    "field": {"mode_count": 1024, "strata": 32, "seed": REQUIRED},
    "tracer": {"epsilon": 1.0, "horizon": REQUIRED, "dt": REQUIRED, "kappa": 0.0,
               "mode": "BallisticLine", "scheme": "trapezoid", "grid_points": 0,
               "sample_stride": None, "field_substeps": 1},
    "ensemble": {"path_count": 100, "workers": 1, "chunk_size": 50},
    "analysis": {"fit_window": None, "lambdas": "1e-1, 1e-2, 1e-3, 1e-4, 1e-5"},
    "output": {"directory": "out", "formats": "csv, json", "trajectories": False},
}


class ConfigError(ValueError):
    """Configuration file cannot be parsed or violates the schema."""


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in str(text).replace(",", " ").split()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    spectrum: SpectrumParams
    mode_count: int
    strata: int
    seed: int
    tracer: TracerConfig
    path_count: int
    workers: int = 1
    chunk_size: int = 50
    fit_window: tuple | None = None
    lambdas: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    directory: str = "out"
    formats: tuple = ("csv", "json")
    write_trajectories: bool = False
    source_text: str = field(default="", repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def with_overrides(self, *, seed=None, workers=None, directory=None) -> "ExperimentConfig":
        from dataclasses import replace

        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if workers is not None:
            out = replace(out, workers=int(workers))
        if directory is not None:
            out = replace(out, directory=str(directory))
        if out.workers < 1:
            raise ConfigError("workers must be >= 1")
        return out


def _sections(parser: configparser.ConfigParser) -> dict[str, dict[str, str]]:
    data = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        unknown = set(parser[name]) - set(SCHEMA[name])
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
        data[name] = dict(parser[name])
    for name, keys in SCHEMA.items():
        for key, default in keys.items():
            if default is REQUIRED and key not in data.get(name, {}):
                raise ConfigError(f"missing required key {name}.{key}")
    return data


def _get(data, section, key):
    value = data.get(section, {}).get(key)
    if value is None:
        value = SCHEMA[section][key]
    return value


def _int(value, name) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be an integer") from exc
    if f != int(f):
        raise ConfigError(f"{name} must be an integer")
    return int(f)


def tracer_from_section(data: dict) -> TracerConfig:
    g = lambda key: _get(data, "tracer", key)
    horizon = float(g("horizon"))
    dt = float(g("dt"))
    points = _int(g("grid_points"), "grid_points")
    grid = None
    if points:
        grid = tuple(np.geomspace(dt, horizon, points))
    stride = g("sample_stride")
    return TracerConfig(
        epsilon=float(g("epsilon")), horizon=horizon, dt=dt, kappa=float(g("kappa")),
        mode=str(g("mode")), scheme=str(g("scheme")), grid=grid,
        sample_stride=None if stride in (None, "") else _int(stride, "sample_stride"),
        field_substeps=_int(g("field_substeps"), "field_substeps"),
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    data = _sections(parser)
    try:
        version = _int(data["meta"]["schema_version"], "schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        spec = {k: v for k, v in data.get("spectrum", {}).items()}
        params = params_from_config(spec)
        tracer = tracer_from_section(data)
        seed = _int(_get(data, "field", "seed"), "seed")
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        path_count = _int(_get(data, "ensemble", "path_count"), "path_count")
        workers = _int(_get(data, "ensemble", "workers"), "workers")
        if path_count < 1 or workers < 1:
            raise ConfigError("path_count and workers must be >= 1")
        window = _get(data, "analysis", "fit_window")
        window = tuple(_floats(window)) if window else None
        if window is not None and (len(window) != 2 or not 0 < window[0] < window[1]):
            raise ConfigError("fit_window must be two increasing positive times")
        formats = tuple(tok.strip() for tok in str(_get(data, "output", "formats")).split(",") if tok.strip())
        if not set(formats) <= {"csv", "json"}:
            raise ConfigError(f"unknown output formats {formats}")
        return ExperimentConfig(
            spectrum=params,
            mode_count=_int(_get(data, "field", "mode_count"), "mode_count"),
            strata=_int(_get(data, "field", "strata"), "strata"),
            seed=seed,
            tracer=tracer,
            path_count=path_count,
            workers=workers,
            chunk_size=_int(_get(data, "ensemble", "chunk_size"), "chunk_size"),
            fit_window=window,
            lambdas=tuple(_floats(_get(data, "analysis", "lambdas"))),
            directory=str(_get(data, "output", "directory")),
            formats=formats,
            write_trajectories=_bool(_get(data, "output", "trajectories")),
            source_text=text,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def render_config(cfg: ExperimentConfig) -> str:
    """INI text reproducing ``cfg`` (grid stored as its point count)."""
    p = cfg.spectrum
    t = cfg.tracer
    lines = [
        "[meta]", f"schema_version = {SCHEMA_VERSION}", "",
        "[spectrum]", f"alpha = {p.alpha!r}", f"beta = {p.beta!r}", f"dim = {p.dim}",
        "drift = " + ", ".join(repr(c) for c in p.drift), f"a0 = {p.cutoff_amplitude!r}",
        f"cutoff_K = {p.cutoff_radius!r}", f"taper_dK = {p.taper_width!r}", "",
        "[field]", f"mode_count = {cfg.mode_count}", f"strata = {cfg.strata}", f"seed = {cfg.seed}", "",
        "[tracer]", f"epsilon = {t.epsilon!r}", f"horizon = {t.horizon!r}", f"dt = {t.dt!r}",
        f"kappa = {t.kappa!r}", f"mode = {t.mode.value}", f"scheme = {t.scheme}",
        f"grid_points = {0 if t.grid is None else len(t.grid)}",
        f"field_substeps = {t.field_substeps}", "",
        "[ensemble]", f"path_count = {cfg.path_count}", f"workers = {cfg.workers}",
        f"chunk_size = {cfg.chunk_size}", "",
        "[analysis]", "lambdas = " + ", ".join(repr(x) for x in cfg.lambdas),
    ]
    if cfg.fit_window is not None:
        lines.append("fit_window = " + ", ".join(repr(x) for x in cfg.fit_window))
    lines += ["", "[output]", f"directory = {cfg.directory}", "formats = " + ", ".join(cfg.formats),
              f"trajectories = {str(cfg.write_trajectories).lower()}", ""]
    return "\n".join(lines)
