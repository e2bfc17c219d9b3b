"""Model parameters, the power-law spectral density and regime classification.

The velocity fluctuation has spatial spectral density

    a(|k|) / |k|^(2 alpha + d - 2) * (I - k k^T / |k|^2)

and each Fourier mode relaxes in time at rate |k|^(2 beta).  A constant mean
drift ``v`` sweeps the tracer across the field.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ._validation import DomainError, check_scalar, check_vector

# Equalities in the regime conditions are decided with this slack so that
# decimal grids such as alpha = 0.7, beta = 0.3 land on the boundary.
BOUNDARY_TOL = 1e-12

CONFIG_KEYS = ("alpha", "beta", "dim", "drift", "a0", "cutoff_K", "taper_dK")


class ZeroDriftError(ValueError):
    """The zero-drift case is out of scope."""


@dataclass(frozen=True)
class SpectrumParams:
    """Parameters of the drifted power-law velocity field.

    Parameters
    ----------
    alpha, beta : float
        Spatial and temporal spectral exponents, ``0 < alpha < 1``, ``beta > 0``.
    dim : int
        Spatial dimension, at least 2.
    drift : sequence of float
        Mean velocity ``v``; must be nonzero.
    cutoff_amplitude : float
        ``a(0) = a0 > 0``.
    cutoff_radius : float
        Wavenumber ``K`` up to which ``a`` is flat.
    taper_width : float, optional
        Width of the cosine taper beyond ``K``.  Defaults to ``0.1 * K``;
        zero gives a hard cutoff.
    """

    alpha: float
    beta: float
    dim: int = 2
    drift: tuple[float, ...] = (1.0, 0.0)
    cutoff_amplitude: float = 1.0
    cutoff_radius: float = 1.0
    taper_width: float | None = None
    _rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "alpha", check_scalar(self.alpha, "alpha", min_value=0.0, max_value=1.0,
                                         include_min=False, include_max=False))
        set_(self, "beta", check_scalar(self.beta, "beta", min_value=0.0, include_min=False))
        if isinstance(self.dim, bool) or int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim}")
        set_(self, "dim", int(self.dim))
        drift = check_vector(self.drift, self.dim, "drift")
        if drift.ndim != 1:
            raise ValueError("drift must be a single vector")
        if not np.any(drift):
            raise ZeroDriftError("zero-drift case out of scope: |v| must be > 0")
        set_(self, "drift", tuple(float(c) for c in drift))
        set_(self, "cutoff_amplitude", check_scalar(
            self.cutoff_amplitude, "cutoff_amplitude", min_value=0.0, include_min=False))
        set_(self, "cutoff_radius", check_scalar(
            self.cutoff_radius, "cutoff_radius", min_value=0.0, include_min=False))
        dk = 0.1 * self.cutoff_radius if self.taper_width is None else self.taper_width
        set_(self, "taper_width", check_scalar(dk, "taper_width", min_value=0.0))
        set_(self, "_rotation", _householder_to(np.asarray(self.drift) / self.speed))

    @property
    def velocity(self) -> np.ndarray:
        return np.asarray(self.drift, dtype=float)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.drift))

    @property
    def k_max(self) -> float:
        """Edge of the support of the cutoff, ``K + dK``."""
        return self.cutoff_radius + self.taper_width

    @property
    def rotation(self) -> np.ndarray:
        """Orthogonal matrix whose first column is the drift direction.

        Matrices computed in the drift-aligned frame map back to the physical
        frame as ``Q @ M @ Q.T``.
        """
        return self._rotation.copy()

    def to_drift_frame(self, matrix: np.ndarray) -> np.ndarray:
        q = self._rotation
        return q.T @ matrix @ q

    def from_drift_frame(self, matrix: np.ndarray) -> np.ndarray:
        q = self._rotation
        return q @ matrix @ q.T


def _householder_to(unit: np.ndarray) -> np.ndarray:
    """Symmetric orthogonal reflection exchanging e1 and ``unit``."""
    d = unit.size
    e1 = np.zeros(d)
    e1[0] = 1.0
    w = e1 - unit
    nw = np.linalg.norm(w)
    if nw < 1e-14:
        return np.eye(d)
    w /= nw
    return np.eye(d) - 2.0 * np.outer(w, w)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in ``R^dim``."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def cutoff(params: SpectrumParams, r) -> np.ndarray | float:
    """Ultraviolet cutoff ``a(r)``: flat to ``K``, cosine taper to ``K + dK``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("wavenumber magnitude must be nonnegative")
    a0, K, dK = params.cutoff_amplitude, params.cutoff_radius, params.taper_width
    out = np.where(r_arr <= K, a0, 0.0)
    if dK > 0:
        band = (r_arr > K) & (r_arr <= K + dK)
        taper = 0.5 * a0 * (1.0 + np.cos(np.pi * (r_arr - K) / dK))
        out = np.where(band, taper, out)
    if out.ndim == 0:
        return float(out)
    return out


def radial_density(params: SpectrumParams, r) -> np.ndarray:
    """Scalar factor ``a(r) / r^(2 alpha + d - 2)`` of the spectral density."""
    r = np.asarray(r, dtype=float)
    return cutoff(params, r) * r ** (-(2.0 * params.alpha + params.dim - 2.0))


def projector(k) -> np.ndarray:
    """``I - k k^T / |k|^2`` for one vector or a stack of vectors."""
    k = np.asarray(k, dtype=float)
    r2 = np.sum(k * k, axis=-1)
    if np.any(r2 == 0):
        raise DomainError("projector undefined at k = 0")
    eye = np.eye(k.shape[-1])
    return eye - k[..., :, None] * k[..., None, :] / r2[..., None, None]


def spectral_density(params: SpectrumParams, k) -> np.ndarray:
    """Spectral density matrix at wavevector(s) ``k``; shape ``(..., d, d)``."""
    k = check_vector(k, params.dim, "k")
    r = np.linalg.norm(k, axis=-1)
    if np.any(r == 0):
        raise DomainError("spectral density is singular at k = 0")
    scale = radial_density(params, r)
    return scale[..., None, None] * projector(k)


def covariance(params: SpectrumParams, t: float, x, *, rtol: float = 1e-6) -> np.ndarray:
    """Space-time covariance ``R(t, x) = E[V(t, x) V(0, 0)^T]`` by quadrature.

    Raises
    ------
    QuadratureError
        If the adaptive quadrature did not reach ``rtol``.
    """
    from .theory import QuadratureError, covariance_quadrature

    res = covariance_quadrature(params, t, x, rtol=rtol)
    if not res.converged:
        raise QuadratureError("covariance quadrature did not converge", res)
    return res.value


class Regime(str, enum.Enum):
    DIFFUSIVE = "Diffusive"
    FRACTIONAL_BM = "FractionalBM"
    OUT_OF_SCOPE = "OutOfScope"


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    delta: float | None
    hurst: float | None
    reason: str
    boundary: bool = False

    def as_dict(self) -> dict[str, Any]:
        return {"regime": self.regime.value, "delta": self.delta, "hurst": self.hurst,
                "reason": self.reason, "boundary": self.boundary}


def classify(params: SpectrumParams) -> RegimeReport:
    """Place ``(alpha, beta)`` in the diffusive, fBM or out-of-scope region.

    Equalities ``alpha + beta = 1`` (beta < 1/2) and ``alpha = 1/2``
    (beta >= 1/2) count as fractional Brownian motion; the report flags them.
    """
    if params.speed == 0:
        raise ZeroDriftError("zero-drift case out of scope")
    a, b = params.alpha, params.beta
    s = a + 2.0 * b
    if s >= 2.0 - BOUNDARY_TOL:
        return RegimeReport(Regime.OUT_OF_SCOPE, None, None,
                            f"alpha+2beta = {s:.6g} violates alpha+2beta<2")
    if b < 0.5:
        if a + b < 1.0 - BOUNDARY_TOL:
            return RegimeReport(Regime.DIFFUSIVE, None, None,
                                f"beta<1/2 and alpha+beta = {a + b:.6g} < 1")
        on_edge = abs(a + b - 1.0) <= BOUNDARY_TOL
        delta = 1.0 if on_edge else b / (s - 1.0)
        reason = f"beta<1/2 and alpha+beta = {a + b:.6g} >= 1: delta = beta/(alpha+2beta-1)"
    else:
        if a < 0.5 - BOUNDARY_TOL:
            return RegimeReport(Regime.DIFFUSIVE, None, None,
                                f"alpha = {a:.6g} < 1/2 <= beta = {b:.6g} < 1")
        on_edge = abs(a - 0.5) <= BOUNDARY_TOL
        delta = 1.0 if on_edge else 1.0 / (2.0 * a)
        reason = f"beta>=1/2 and alpha = {a:.6g} >= 1/2: delta = 1/(2alpha)"
    if on_edge:
        reason += " (boundary case)"
    return RegimeReport(Regime.FRACTIONAL_BM, delta, 1.0 / (2.0 * delta), reason, on_edge)


def params_to_config(params: SpectrumParams) -> dict[str, Any]:
    """Flat key-value form used by the ``[spectrum]`` config section."""
    return {
        "alpha": params.alpha,
        "beta": params.beta,
        "dim": params.dim,
        "drift": list(params.drift),
        "a0": params.cutoff_amplitude,
        "cutoff_K": params.cutoff_radius,
        "taper_dK": params.taper_width,
    }


def params_from_config(section: Mapping[str, Any]) -> SpectrumParams:
    unknown = set(section) - set(CONFIG_KEYS)
    if unknown:
        raise KeyError(f"unknown spectrum keys: {sorted(unknown)}")
    missing = {"alpha", "beta"} - set(section)
    if missing:
        raise KeyError(f"missing spectrum keys: {sorted(missing)}")
    dim = int(section.get("dim", 2))
    drift = section.get("drift")
    if drift is None:
        drift = (1.0,) + (0.0,) * (dim - 1)
    elif isinstance(drift, str):
        drift = [float(c) for c in drift.replace(",", " ").split()]
    return SpectrumParams(
        alpha=float(section["alpha"]),
        beta=float(section["beta"]),
        dim=dim,
        drift=tuple(float(c) for c in drift),
        cutoff_amplitude=float(section.get("a0", 1.0)),
        cutoff_radius=float(section.get("cutoff_K", 1.0)),
        taper_width=None if section.get("taper_dK") is None else float(section["taper_dK"]),
    )
