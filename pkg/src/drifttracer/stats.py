"""Ensemble statistics and scaling diagnostics.

Functions operate on plain arrays or :class:`~drifttracer.tracer.Trajectory`
objects; the estimator classes at the end wrap them in the scikit-learn
``fit``/``get_params`` protocol so they compose with pipelines and grid
searches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats as sp_stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_generator, check_samples, check_scalar

DEFAULT_WINDOW_DECADES = 2
MIN_WINDOW_POINTS = 8


class DegenerateSampleError(ValueError):
    """Sample has no spread, so the statistic is undefined."""


@dataclass
class EnsembleSummary:
    """Mean squared displacement of an ensemble on a time grid."""

    times: np.ndarray
    msd: np.ndarray
    stderr: np.ndarray
    sample_count: int
    second_moment: np.ndarray | None = None   # (n_times, d, d)
    fitted_exponent: float | None = None
    exponent_stderr: float | None = None
    window: tuple | None = None
    diffusivity_estimate: np.ndarray | None = None

    def to_csv(self, path) -> None:
        table = np.column_stack([self.times, self.msd, self.stderr])
        np.savetxt(path, table, delimiter=",", header="t,msd,stderr", comments="", fmt="%.17g")

    def fit_record(self) -> dict:
        return {
            "fitted_exponent": self.fitted_exponent,
            "exponent_stderr": self.exponent_stderr,
            "window": None if self.window is None else list(self.window),
            "diffusivity_estimate": (None if self.diffusivity_estimate is None
                                     else np.asarray(self.diffusivity_estimate).tolist()),
            "sample_count": self.sample_count,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.fit_record(), fh, indent=2, sort_keys=True)


def _fluctuations_on_grid(trajectories, grid: np.ndarray) -> np.ndarray:
    """Stack ``z(t)`` of every path at ``grid``; shape ``(M, n, d)``."""
    if hasattr(trajectories, "members"):
        trajectories = trajectories.members()
    out = []
    for traj in trajectories:
        t = traj.times
        if grid[0] < t[0] - 1e-12 or grid[-1] > t[-1] * (1 + 1e-12):
            raise ValueError(f"grid [{grid[0]:g}, {grid[-1]:g}] outside trajectory "
                             f"coverage [{t[0]:g}, {t[-1]:g}]")
        z = traj.fluctuation
        on_grid = np.isin(grid, t)
        if np.all(on_grid):
            out.append(z[np.searchsorted(t, grid)])
        else:
            out.append(np.stack([np.interp(grid, t, z[:, c]) for c in range(z.shape[1])], axis=1))
    return np.stack(out)


def jackknife_mean(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over the first axis and its delete-one jackknife standard error."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    mean = values.mean(axis=0)
    loo = (values.sum(axis=0) - values) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return mean, se


def msd(trajectories, grid=None) -> EnsembleSummary:
    """Ensemble MSD ``E|z(t)|^2`` with jackknife standard errors.

    Parameters
    ----------
    trajectories : Trajectory (ensemble) or sequence of Trajectory
    grid : array_like, optional
        Evaluation times; defaults to the times of the first path.
    """
    members = trajectories.members() if hasattr(trajectories, "members") else list(trajectories)
    if len(members) < 2:
        raise ValueError("msd needs at least 2 trajectories")
    grid = members[0].times if grid is None else np.asarray(grid, dtype=float)
    z = _fluctuations_on_grid(members, grid)
    sq = np.sum(z * z, axis=-1)
    mean, se = jackknife_mean(sq)
    second = np.einsum("mti,mtj->tij", z, z) / z.shape[0]
    return EnsembleSummary(grid, mean, se, z.shape[0], second)


def default_window(times: np.ndarray) -> tuple[float, float]:
    """Middle two decades of the positive grid (or the whole grid if shorter)."""
    t = np.asarray(times, dtype=float)
    t = t[t > 0]
    lo, hi = math.log10(t[0]), math.log10(t[-1])
    span = hi - lo
    if span <= DEFAULT_WINDOW_DECADES:
        return float(t[0]), float(t[-1])
    mid = 0.5 * (lo + hi)
    return 10 ** (mid - DEFAULT_WINDOW_DECADES / 2), 10 ** (mid + DEFAULT_WINDOW_DECADES / 2)


def log_log_slope(times, values, stderr=None, window=None) -> tuple[float, float, float]:
    """Weighted least-squares fit ``log values = c + s log t``; returns (s, stderr(s), c)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (t[t > 0][0], t[-1])
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12)) & (t > 0)
    if sel.sum() < MIN_WINDOW_POINTS:
        raise ValueError(f"need >= {MIN_WINDOW_POINTS} grid points in window, got {int(sel.sum())}")
    if np.any(y[sel] <= 0):
        raise ValueError("nonpositive values in fit window")
    x = np.log(t[sel])
    ly = np.log(y[sel])
    if stderr is not None and np.all(np.asarray(stderr)[sel] > 0):
        w = (y[sel] / np.asarray(stderr, dtype=float)[sel]) ** 2
    else:
        w = np.ones_like(x)
    design = np.column_stack([np.ones_like(x), x])
    wd = design * w[:, None]
    cov = np.linalg.inv(design.T @ wd)
    coef = cov @ (wd.T @ ly)
    resid = ly - design @ coef
    dof = max(x.size - 2, 1)
    scale = float(resid @ (w * resid)) / dof
    se = math.sqrt(max(cov[1, 1] * scale, 0.0))
    return float(coef[1]), se, float(coef[0])


def scaling_exponent(summary: EnsembleSummary, window=None) -> tuple[float, float]:
    """Log-log MSD slope over ``window`` (default: middle two decades).

    Also stores the fit and, when the slope is within 0.1 of one, the
    diffusivity estimate ``E[z z^T](t_end) / (2 t_end)`` on the summary.
    """
    window = default_window(summary.times) if window is None else tuple(float(w) for w in window)
    if window[0] < summary.times[0] - 1e-12 or window[1] > summary.times[-1] * (1 + 1e-12):
        raise ValueError("fit window outside the time grid")
    slope, se, _ = log_log_slope(summary.times, summary.msd, summary.stderr, window)
    summary.fitted_exponent, summary.exponent_stderr, summary.window = slope, se, window
    if abs(slope - 1.0) < 0.1 and summary.second_moment is not None:
        i = np.searchsorted(summary.times, window[1], side="right") - 1
        summary.diffusivity_estimate = summary.second_moment[i] / (2.0 * summary.times[i])
    return slope, se


def fgn_autocovariance(hurst: float, n: int) -> np.ndarray:
    """Autocovariance of unit fractional Gaussian noise at lags ``0..n-1``."""
    k = np.arange(n, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2 * k ** h2 + np.abs(k - 1) ** h2)


def fbm_oracle(hurst: float, n: int, dt: float = 1.0, rng=None, size: int | None = None,
               method: str = "auto") -> np.ndarray:
    """Exact fractional Brownian motion path ``B(0), B(dt), ..., B((n-1) dt)``.

    Fractional Gaussian noise is drawn by circulant embedding (Davies-Harte).
    A negative embedding eigenvalue beyond rounding is an error unless the
    path is short enough for the Cholesky fallback.

    Parameters
    ----------
    hurst : float
        ``0 < H < 1``.
    n : int
        Number of path points (``n >= 2``), starting with ``B(0) = 0``.
    size : int, optional
        Number of independent paths; output shape ``(size, n)``.
    method : {"auto", "circulant", "cholesky"}
    """
    hurst = check_scalar(hurst, "hurst", min_value=0.0, max_value=1.0, include_min=False, include_max=False)
    dt = check_scalar(dt, "dt", min_value=0.0, include_min=False)
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    rng = as_generator(rng)
    count = 1 if size is None else int(size)
    m = n - 1
    gamma = fgn_autocovariance(hurst, m)
    noise = None
    if method in ("auto", "circulant"):
        row = np.concatenate([gamma, gamma[-2:0:-1]]) if m > 1 else gamma
        lam = np.fft.fft(row).real
        if lam.min() < -1e-10 * lam.max():
            if method == "circulant" or m > 2048:
                raise ValueError("circulant embedding is not positive semidefinite")
        else:
            size2 = row.size
            lam = np.maximum(lam, 0.0)
            w = rng.standard_normal((count, size2)) + 1j * rng.standard_normal((count, size2))
            noise = np.fft.fft(np.sqrt(lam / size2) * w, axis=1)[:, :m].real
    if noise is None:
        chol = linalg.cholesky(linalg.toeplitz(gamma), lower=True)
        noise = rng.standard_normal((count, m)) @ chol.T
    noise *= dt ** hurst
    path = np.concatenate([np.zeros((count, 1)), np.cumsum(noise, axis=1)], axis=1)
    return path[0] if size is None else path


def _block_sizes(n: int) -> np.ndarray:
    sizes = np.unique(np.floor(np.geomspace(1, n / 10, 20)).astype(int))
    return sizes[sizes >= 1]


def hurst_estimate(series, iterations: int = 5) -> tuple[float, float]:
    """Aggregated-variance Hurst estimate of a path.

    The path is differenced to its increments; the variance of block means
    at block size ``m`` scales as ``m^{2H-2}``.  With ``k = n/m`` blocks the
    sample variance is biased by ``k (1 - k^{2H-2}) / (k - 1)`` for a
    self-similar series; the fit is iterated with that correction and
    weighted by ``k - 1``, the inverse variance of ``log`` of the sample
    variance.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 256:
        raise ValueError("hurst_estimate needs at least 256 points")
    inc = np.diff(x)
    if np.ptp(inc) == 0:
        raise DegenerateSampleError("constant increments")
    sizes = _block_sizes(inc.size)
    var = np.empty(sizes.size)
    blocks = np.empty(sizes.size)
    for i, m in enumerate(sizes):
        k = inc.size // m
        var[i] = inc[: k * m].reshape(k, m).mean(axis=1).var(ddof=1)
        blocks[i] = k
    # relative stderr of each variance, sqrt(2/(k-1)), enters as weight
    rel_se = np.sqrt(2.0 / (blocks - 1.0))
    hurst = 0.5
    for _ in range(iterations + 1):
        bias = blocks * (1.0 - blocks ** (2 * hurst - 2)) / (blocks - 1.0)
        corrected = var / bias
        slope, se, _ = log_log_slope(sizes, corrected, rel_se * corrected, (sizes[0], sizes[-1]))
        hurst = min(max(1.0 + slope / 2.0, 1e-3), 1 - 1e-3)
    return 1.0 + slope / 2.0, se / 2.0


@dataclass
class GaussianityReport:
    excess_kurtosis: np.ndarray
    stderr: float
    n: int

    @property
    def z_scores(self) -> np.ndarray:
        return np.abs(self.excess_kurtosis) / self.stderr

    @property
    def gaussian(self) -> bool:
        """No component deviates by 3 standard errors or more."""
        return bool(np.all(self.z_scores < 3.0))


def gaussianity_check(increments) -> GaussianityReport:
    """Per-component excess kurtosis with the asymptotic stderr ``sqrt(24/n)``."""
    x = check_samples(increments, "increments", min_samples=100)
    if np.any(np.ptp(x, axis=0) == 0):
        raise DegenerateSampleError("constant component")
    kurt = sp_stats.kurtosis(x, axis=0, fisher=True, bias=True)
    return GaussianityReport(np.atleast_1d(kurt), math.sqrt(24.0 / x.shape[0]), x.shape[0])


def empirical_cov(samples) -> np.ndarray:
    """Unbiased sample covariance of d-vectors (rows)."""
    x = check_samples(samples, "samples", min_samples=2)
    c = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return 0.5 * (c + c.T)


# ---------------------------------------------------------------------------
# scikit-learn style estimators


class HurstEstimator(BaseEstimator):
    """Aggregated-variance Hurst estimator for a set of paths.

    ``fit(X)`` takes paths as rows; ``hurst_`` is the mean per-path estimate
    and ``hurst_stderr_`` its standard error across paths (or the regression
    error for a single path).
    """

    def __init__(self, min_length: int = 256):
        self.min_length = min_length

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < self.min_length:
            raise ValueError(f"paths must have at least {self.min_length} points")
        est = np.array([hurst_estimate(row) for row in X])
        self.per_path_ = est[:, 0]
        self.hurst_ = float(est[:, 0].mean())
        self.hurst_stderr_ = (float(est[0, 1]) if len(est) == 1
                              else float(est[:, 0].std(ddof=1) / math.sqrt(len(est))))
        self.n_paths_ = len(est)
        return self

    def predict(self, X):
        """Per-path estimates."""
        check_is_fitted(self, "hurst_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([hurst_estimate(row)[0] for row in X])


class MSDScaling(BaseEstimator):
    """MSD power-law fit ``msd ~ A t^s`` for an ensemble of fluctuation paths.

    ``fit(Z, times)`` takes ``Z`` of shape ``(M, n, d)``; ``predict(t)``
    evaluates the fitted power law.
    """

    def __init__(self, window=None):
        self.window = window

    def fit(self, Z, times):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 2:
            Z = Z[..., None]
        if Z.ndim != 3 or Z.shape[0] < 2:
            raise ValueError("Z must have shape (M >= 2, n, d)")
        times = np.asarray(times, dtype=float)
        mean, se = jackknife_mean(np.sum(Z * Z, axis=-1))
        window = default_window(times) if self.window is None else self.window
        slope, slope_se, intercept = log_log_slope(times, mean, se, window)
        self.exponent_, self.exponent_stderr_ = slope, slope_se
        self.amplitude_ = math.exp(intercept)
        self.msd_, self.msd_stderr_, self.times_ = mean, se, times
        return self

    def predict(self, t):
        check_is_fitted(self, "exponent_")
        return self.amplitude_ * np.asarray(t, dtype=float) ** self.exponent_
