"""Deterministic evaluation of the closed-form spectral integrals.

Every matrix-valued integral is computed in spherical coordinates aligned
with the drift (or, for the covariance, with the separation vector).  The
radius is substituted as ``r = exp(u)`` so that power-law behaviour at the
origin becomes exponential decay in ``u``; the polar angle is measured from
the equator ``phi = pi/2 - theta`` on a logarithmic scale, which resolves the
narrow sweeping peak at ``k . v = 0``.  Both levels use the batched adaptive
Gauss-Kronrod rule of :mod:`drifttracer.quadrature`.

All matrices are returned in the physical frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as sp_integrate
from scipy import special

from ._validation import DomainError, as_generator, check_scalar, check_vector
from .quadrature import (
    QuadratureError,
    QuadratureResult,
    integrate,
    integrate_batch,
)
from .spectrum import (
    Regime,
    SpectrumParams,
    classify,
    cutoff,
    projector,
    sphere_area,
)

__all__ = [
    "QuadratureError",
    "QuadratureResult",
    "RegimeError",
    "ballistic_msd",
    "corrector_coefficients",
    "corrector_gradient_variance",
    "corrector_scan",
    "corrector_variance",
    "covariance_quadrature",
    "fbm_covariance",
    "fbm_covariance_closed_form",
    "fbm_exact_cov",
    "gamma_factor",
    "mc_oracle",
    "quenched_ballistic_msd",
    "taylor_kubo",
]

DEFAULT_RTOL = 1e-4
# series switchovers near removable singularities
KV_SERIES = 1e-4
X_SERIES = 1e-6
# divergence heuristic: growth factor and ladder of inner cutoffs
DIVERGENCE_FACTOR = 5.0
LADDER_DECADES = (2, 12)


class RegimeError(ValueError):
    """Quantity requested outside the regime where it is defined."""


# ---------------------------------------------------------------------------
# generic spherical integrator


def _projector_average(dim: int, c: np.ndarray) -> np.ndarray:
    """Longitudinal and (each) transverse diagonal entry of the projector,
    averaged over the directions sharing the cosine ``c`` with the axis."""
    c2 = c * c
    return np.stack([1.0 - c2, (dim - 2.0 + c2) / (dim - 1.0)], axis=-1)


def _equator_weight(dim: int, phi: np.ndarray) -> np.ndarray:
    """Surface measure per unit ``phi`` folded onto ``phi in [0, pi/2]``."""
    return 2.0 * sphere_area(dim - 1) * np.cos(phi) ** (dim - 2)


def _isotropic_projector_integral(dim: int) -> float:
    """``int P dOmega`` diagonal entry: ``|S^{d-1}| (d-1)/d``."""
    return sphere_area(dim) * (dim - 1.0) / dim


@dataclass
class _Spherical:
    value: np.ndarray      # (M, 2) longitudinal / transverse
    error: np.ndarray
    converged: np.ndarray
    evaluations: int


def _angular(dim, scalar, r, width, rtol):
    """Angular integrals at fixed radii ``r``: returns (value, error, conv, evals).

    ``scalar(r, c)`` must be even in ``c``.  The equatorial distance ``phi``
    is integrated on a log scale down to ``1e-12`` of the peak width; the
    remaining sliver is added with the integrand frozen at ``c = 0``.
    """
    r = np.asarray(r, dtype=float)
    w = np.ones_like(r) if width is None else np.minimum(np.asarray(width(r), dtype=float), 1.0)
    w = np.maximum(w, 1e-300)
    phi_min = 1e-12 * w
    s_lo = np.log(phi_min)
    s_hi = np.full_like(r, math.log(math.pi / 2))

    def f(s, idx):
        phi = np.exp(s)
        c = np.sin(phi)
        val = scalar(r[idx], c) * phi * _equator_weight(dim, phi)
        return val[:, None] * _projector_average(dim, c)

    res = integrate_batch(f, s_lo, s_hi, rtol=rtol, atol=0.0, max_rounds=60,
                          initial_panels=4)
    sliver = scalar(r, np.zeros_like(r)) * phi_min * _equator_weight(dim, 0.0)
    value = res.value + sliver[:, None] * _projector_average(dim, np.zeros(1))
    return value, res.error, res.converged, res.evaluations


def _spherical(dim, scalar, u_edges, *, width=None, rtol=DEFAULT_RTOL, max_rounds=40):
    """Integrate ``scalar(r, c)`` (already in ``du dOmega`` measure) over the
    shells ``[u_edges[i], u_edges[i+1]]``; one result row per shell."""
    u_edges = np.asarray(u_edges, dtype=float)
    inner_rtol = rtol * 1e-2
    evals = [0]
    inner_ok = [True]

    def outer(u, _idx):
        r = np.exp(u)
        val, _err, conv, n = _angular(dim, scalar, r, width, inner_rtol)
        evals[0] += n
        inner_ok[0] &= bool(np.all(conv))
        return val

    res = integrate_batch(outer, u_edges[:-1], u_edges[1:], rtol=rtol, atol=0.0,
                          max_rounds=max_rounds)
    err = res.error + inner_rtol * np.abs(res.value)
    conv = res.converged & inner_ok[0]
    return _Spherical(res.value, err, conv, evals[0] + res.evaluations)


def _frame_matrix(params_dim: int, long_trans: np.ndarray) -> np.ndarray:
    return np.diag(np.concatenate([[long_trans[0]], np.full(params_dim - 1, long_trans[1])]))


def _result_in_frame(rotation: np.ndarray, dim, value, error, converged,
                     divergence=False, evaluations=0) -> QuadratureResult:
    v = rotation @ _frame_matrix(dim, value) @ rotation.T
    e = np.abs(rotation) @ _frame_matrix(dim, error) @ np.abs(rotation).T
    return QuadratureResult(0.5 * (v + v.T), e, bool(converged), divergence, int(evaluations))


# ---------------------------------------------------------------------------
# covariance R(t, x)


def covariance_quadrature(params: SpectrumParams, t: float, x, *,
                          rtol: float = 1e-6) -> QuadratureResult:
    """``R(t, x) = int cos(k.x) exp(-|k|^{2 beta} t) Rhat(k) dk``."""
    t = check_scalar(t, "t", min_value=0.0)
    x = check_vector(x, params.dim, "x")
    d, al, be = params.dim, params.alpha, params.beta
    rho = float(np.linalg.norm(x))

    def scalar(r, c):
        return cutoff(params, r) * r ** (2.0 - 2.0 * al) * np.exp(-(r ** (2 * be)) * t) * np.cos(r * rho * c)

    kmax, K = params.k_max, params.cutoff_radius
    r_lo = kmax * (rtol * 1e-3) ** (1.0 / (2.0 - 2.0 * al))
    edges = [math.log(r_lo), math.log(K)]
    if params.taper_width > 0:
        edges.append(math.log(kmax))
    sph = _spherical(d, scalar, edges, rtol=rtol)
    value = sph.value.sum(axis=0)
    tail = params.cutoff_amplitude * r_lo ** (2 - 2 * al) / (2 - 2 * al)
    value = value + tail * _isotropic_projector_integral(d)
    error = sph.error.sum(axis=0)
    if rho > 0:
        from .spectrum import _householder_to

        rot = _householder_to(x / rho)
    else:
        rot = np.eye(d)
    return _result_in_frame(rot, d, value, error, np.all(sph.converged), False, sph.evaluations)


# ---------------------------------------------------------------------------
# Taylor-Kubo / regularised martingale covariance


def _tk_scalar(params: SpectrumParams, eps: float):
    al, be, speed = params.alpha, params.beta, params.speed
    e2 = eps * eps

    def scalar(r, c):
        rb = r ** (2 * be)
        den = (rb + e2) ** 2 + (speed * r * c) ** 2
        return cutoff(params, r) * r ** (2 + 2 * be - 2 * al) / den

    def width(r):
        return (r ** (2 * be) + e2) / (speed * r)

    return scalar, width


def taylor_kubo(params: SpectrumParams, eps: float = 0.0, *, rtol: float = DEFAULT_RTOL) -> QuadratureResult:
    """Diffusivity ``D_eps``; ``eps = 0`` gives the Taylor-Kubo matrix ``D*``.

    ``D_eps = int a|k|^{2b} / (|k|^{2a+d-2} [(|k|^{2b}+eps^2)^2 + (k.v)^2]) P(k) dk``

    With ``eps = 0`` the inner radial cutoff is lowered through the decades
    ``10^-2 ... 10^-12`` of ``K + dK``; a trace growth by more than
    :data:`DIVERGENCE_FACTOR` across that ladder marks the integral as
    divergent (``divergence_suspected``), which happens outside the
    diffusive regime.
    """
    eps = check_scalar(eps, "eps", min_value=0.0)
    d, al, be = params.dim, params.alpha, params.beta
    scalar, width = _tk_scalar(params, eps)
    kmax, K = params.k_max, params.cutoff_radius
    top = [math.log(K)] + ([math.log(kmax)] if params.taper_width > 0 else [])
    q = 2.0 + 2.0 * be - 2.0 * al
    ang = _isotropic_projector_integral(d)
    if eps > 0:
        r_lo = min(eps ** (1.0 / be), eps * eps, kmax) * 1e-6
        edges = [math.log(r_lo)] + top
        sph = _spherical(d, scalar, edges, width=width, rtol=rtol)
        tail = params.cutoff_amplitude * r_lo ** q / (q * eps ** 4) * ang
        value = sph.value.sum(axis=0) + tail
        error = sph.error.sum(axis=0)
        rot = params.rotation
        return _result_in_frame(rot, d, value, error, np.all(sph.converged), False, sph.evaluations)

    lo_dec, hi_dec = LADDER_DECADES
    ladder = [math.log(kmax) - k * math.log(10.0) for k in range(hi_dec, lo_dec - 1, -1)]
    bottom = math.log(kmax) - 30.0 * math.log(10.0)
    edges = [bottom] + ladder + top
    sph = _spherical(d, scalar, edges, width=width, rtol=rtol * 0.1)
    shells = sph.value  # ascending in radius
    trace_shell = shells[:, 0] + (d - 1) * shells[:, 1]
    n_lad = len(ladder)
    above_hi = trace_shell[n_lad:].sum()        # radii above 10^-2 kmax
    above_lo = trace_shell[1:].sum()            # radii above 10^-12 kmax
    diverging = above_hi > 0 and above_lo > DIVERGENCE_FACTOR * above_hi
    value = shells.sum(axis=0)
    error = sph.error.sum(axis=0)
    # the lowest shell (below 10^-12 kmax) bounds the neglected head
    error = error + np.abs(shells[0])
    converged = bool(np.all(sph.converged)) and not diverging
    return _result_in_frame(params.rotation, d, value, error, converged, diverging, sph.evaluations)


# ---------------------------------------------------------------------------
# fractional Brownian motion amplitude


def _phi2(w: np.ndarray) -> np.ndarray:
    """``(exp(-w) - 1 + w) / w^2`` for complex or real ``w`` with a series guard."""
    w = np.asarray(w)
    small = np.abs(w) < 1e-3
    ws = np.where(small, 1.0, w)
    direct = (np.exp(-ws) - 1.0 + ws) / (ws * ws)
    wt = np.where(small, w, 0.0)
    series = 0.5 - wt / 6.0 + wt * wt / 24.0 - wt ** 3 / 120.0
    return np.where(small, series, direct)


def _gamma_radial(alpha, beta, r):
    """Isotropic case ``beta < 1/2``: ``(e^{-x} - 1 + x) / |k|^{2a+4b-1}``, ``x = |k|^{2b}``."""
    x = r ** (2 * beta)
    small = x < X_SERIES
    xs = np.where(small, x, 0.0)
    num = np.where(small, xs * xs / 2.0 - xs ** 3 / 6.0, np.expm1(-np.where(small, 0.0, x)) + x)
    return num / r ** (2 * alpha + 4 * beta - 1)


def _gamma_sweep(alpha, r, kv):
    """``beta > 1/2``: ``(1 - cos k_v) / (k_v^2 |k|^{2a-1})``."""
    small = np.abs(kv) < KV_SERIES
    kvs = np.where(small, 1.0, kv)
    ratio = np.where(small, 0.5 - kv * kv / 24.0, 2.0 * np.sin(kvs / 2.0) ** 2 / (kvs * kvs))
    return ratio * r ** (1 - 2 * alpha)


def _gamma_critical(alpha, r, kv):
    """``beta = 1/2``: ``Re[(e^{-z} - 1 + z)/z^2] / |k|^{2a-1}`` with ``z = |k| - i k_v``.

    Expanded, the numerator is
    ``(|k|^2-k_v^2)(e^{-|k|}cos k_v - 1 + |k|) - 2|k|k_v(e^{-|k|}sin k_v - k_v)``
    over ``(|k|^2 + k_v^2)^2``.
    """
    z = r - 1j * kv
    return np.real(_phi2(z)) * r ** (1 - 2 * alpha)


def gamma_factor(params: SpectrumParams, k) -> np.ndarray | float:
    """Weight ``Gamma_{alpha,beta}(k)`` of the fBM amplitude integral."""
    k = check_vector(k, params.dim, "k")
    r = np.linalg.norm(k, axis=-1)
    if np.any(r == 0):
        raise DomainError("Gamma is evaluated at k != 0 only")
    kv = k @ params.velocity
    al, be = params.alpha, params.beta
    if be < 0.5:
        out = _gamma_radial(al, be, r)
    elif be > 0.5:
        out = _gamma_sweep(al, r, kv)
    else:
        out = _gamma_critical(al, r, kv)
    return float(out) if np.ndim(out) == 0 else out


def _sweep_constant(alpha: float) -> tuple[float, float]:
    """``C = int_0^inf (1 - cos s) s^{-1-2a} ds`` for ``1/2 < a < 1``; (value, error)."""
    g = lambda u: (lambda s: 2.0 * np.sin(s / 2) ** 2 * s ** (-2 * alpha))(np.exp(u))
    s_lo = 1e-12
    head = integrate(g, math.log(s_lo), 0.0, rtol=1e-12)
    head_tail = s_lo ** (2 - 2 * alpha) / (2 * (2 - 2 * alpha))
    osc, osc_err = sp_integrate.quad(lambda s: s ** (-1 - 2 * alpha), 1.0, np.inf,
                                     weight="cos", wvar=1.0, epsabs=1e-13)
    value = head.value[0, 0] + head_tail + 1.0 / (2 * alpha) - osc
    return value, float(head.error[0, 0] + osc_err)


def _sweep_angular(dim: int, alpha: float, rtol: float) -> tuple[np.ndarray, np.ndarray]:
    """``int |cos theta|^{2a-2} P dOmega`` via ``phi = w^{1/(2a-1)}``."""
    p = 2 * alpha - 1

    def f(w):
        phi = w ** (1.0 / p)
        c = np.sin(phi)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(phi > 0, c / phi, 1.0)
        val = ratio ** (2 * alpha - 2) / p * _equator_weight(dim, phi)
        return val[:, None] * _projector_average(dim, c)

    res = integrate(f, 0.0, (math.pi / 2) ** p, rtol=rtol)
    return res.value[0], res.error[0]


def fbm_covariance(params: SpectrumParams, *, rtol: float = DEFAULT_RTOL) -> QuadratureResult:
    """Amplitude matrix ``D_{alpha,beta} = int Gamma P a(0)/|k|^{d-1} dk``.

    Raises
    ------
    RegimeError
        Unless the parameters are in the fractional Brownian regime.
    """
    report = classify(params)
    if report.regime is not Regime.FRACTIONAL_BM:
        raise RegimeError(f"fbm_covariance needs the FractionalBM regime, got {report.regime.value}")
    d, al, be, a0 = params.dim, params.alpha, params.beta, params.cutoff_amplitude
    if report.boundary:
        inf = np.where(np.eye(d, dtype=bool), np.inf, 0.0)
        return QuadratureResult(inf, inf.copy(), False, True, 0)
    ang = _isotropic_projector_integral(d)
    if be < 0.5:
        r_lo = (rtol * 1e-4) ** (1.0 / (2 - 2 * al))
        r_hi = 60.0 ** (1.0 / (2 * be))

        def scalar(r, c):
            return r * _gamma_radial(al, be, r) * np.ones_like(c)

        sph = _spherical(d, scalar, [math.log(r_lo), 0.0, math.log(r_hi)], rtol=rtol)
        low = r_lo ** (2 - 2 * al) / (2 * (2 - 2 * al))
        high = (r_hi ** (2 - 2 * al - 2 * be) / (2 * al + 2 * be - 2)
                - r_hi ** (2 - 2 * al - 4 * be) / (2 * al + 4 * be - 2))
        value = a0 * (sph.value.sum(axis=0) + (low + high) * ang)
        error = a0 * sph.error.sum(axis=0)
        return _result_in_frame(params.rotation, d, value, error, np.all(sph.converged),
                                False, sph.evaluations)
    if be > 0.5:
        c_val, c_err = _sweep_constant(al)
        ang_val, ang_err = _sweep_angular(d, al, rtol * 1e-2)
        scale = a0 * params.speed ** (2 * al - 2)
        value = scale * c_val * ang_val
        error = scale * (c_err * ang_val + c_val * ang_err)
        return _result_in_frame(params.rotation, d, value, error, True, False, 0)

    speed = params.speed
    r_lo = (rtol * 1e-4) ** (1.0 / (2 - 2 * al))
    r_hi = 60.0

    def scalar(r, c):
        return r * _gamma_critical(al, r, speed * r * c)

    def inv_zeta(c):
        return 1.0 / (1.0 - 1j * speed * c)

    sph = _spherical(d, scalar, [math.log(r_lo), 0.0, math.log(r_hi)], rtol=rtol)
    ang1, _, _, _ = _angular(d, lambda r, c: np.real(inv_zeta(c)) * np.ones_like(r), np.ones(1), None, rtol * 1e-2)
    ang2, _, _, _ = _angular(d, lambda r, c: np.real(inv_zeta(c) ** 2) * np.ones_like(r), np.ones(1), None, rtol * 1e-2)
    high = (r_hi ** (1 - 2 * al) / (2 * al - 1)) * ang1[0] - (r_hi ** (-2 * al) / (2 * al)) * ang2[0]
    low = r_lo ** (2 - 2 * al) / (2 * (2 - 2 * al)) * ang
    value = a0 * (sph.value.sum(axis=0) + high + low)
    error = a0 * sph.error.sum(axis=0)
    return _result_in_frame(params.rotation, d, value, error, np.all(sph.converged), False, sph.evaluations)


def fbm_covariance_closed_form(params: SpectrumParams) -> np.ndarray:
    """Gamma/Beta-function evaluation of ``D_{alpha,beta}`` for ``beta != 1/2``.

    For ``beta < 1/2`` the weight is isotropic and the radial integral is
    ``Gamma(s) / (2 beta)`` with ``s = (1 - alpha)/beta - 2``; for
    ``beta > 1/2`` the ray integral is ``-Gamma(-2a) cos(pi a) |k.v/|k||^{2a-2}``.
    Only defined in dimension 2 and 3.
    """
    d, al, be, a0 = params.dim, params.alpha, params.beta, params.cutoff_amplitude
    if be < 0.5:
        s = (1 - al) / be - 2
        val = a0 * special.gamma(s) / (2 * be) * _isotropic_projector_integral(d)
        diag = np.array([val, val])
    elif be > 0.5:
        c_al = -special.gamma(-2 * al) * math.cos(math.pi * al)
        p = 2 * al - 2
        if d == 2:
            # int_0^{2pi} |cos|^p {sin^2, cos^2}
            lon = 2 * special.beta((p + 1) / 2, 1.5)
            tra = 2 * special.beta((p + 3) / 2, 0.5)
        elif d == 3:
            # 2pi int_{-1}^{1} |c|^p {1-c^2, (1+c^2)/2} dc
            i0 = 2 / (p + 1)
            i2 = 2 / (p + 3)
            lon = 2 * math.pi * (i0 - i2)
            tra = 2 * math.pi * 0.5 * (i0 + i2)
        else:
            raise ValueError("closed form implemented for d in {2, 3}")
        diag = a0 * c_al * params.speed ** p * np.array([lon, tra])
    else:
        raise ValueError("no closed form at beta = 1/2")
    return params.rotation @ _frame_matrix(d, diag) @ params.rotation.T


# ---------------------------------------------------------------------------
# corrector diagnostics


def corrector_coefficients(params: SpectrumParams, k, lam: float) -> tuple:
    """Spectral coefficients ``(C1, C2)`` of the lambda-corrector."""
    lam = check_scalar(lam, "lambda", min_value=0.0, include_min=False)
    k = check_vector(k, params.dim, "k")
    r = np.linalg.norm(k, axis=-1)
    if np.any(r == 0):
        raise DomainError("corrector coefficients need k != 0")
    kv = k @ params.velocity
    a = r ** (2 * params.beta) + lam
    den = a * a + kv * kv
    c1, c2 = a / den, kv / den
    if np.ndim(c1) == 0:
        return float(c1), float(c2)
    return c1, c2


def corrector_variance_integrand(params: SpectrumParams, lam: float, r):
    r = np.asarray(r, dtype=float)
    a = lam + r ** (2 * params.beta)
    return lam / (r ** (2 * params.alpha) * a) * np.arctan(np.pi * r / (2 * a))


def corrector_gradient_integrand(params: SpectrumParams, lam: float, r):
    r = np.asarray(r, dtype=float)
    a = lam + r ** (2 * params.beta)
    return r ** (2 - 2 * params.alpha) / a * np.arctan(np.pi * r / (2 * a))


def _radial_1d(integrand, params, lam, rtol, small_power, small_coef):
    """``int_0^K integrand(r) dr`` on ``u = log r`` with a power-law head."""
    K = params.cutoff_radius
    r_lo = K * 1e-30
    res = integrate(lambda u: np.exp(u) * integrand(params, lam, np.exp(u)),
                    math.log(r_lo), math.log(K), rtol=rtol, initial_panels=8)
    head = small_coef * r_lo ** small_power / small_power
    return QuadratureResult(float(res.value[0, 0] + head), float(res.error[0, 0]),
                            bool(res.converged[0]), False, res.evaluations)


def corrector_variance(params: SpectrumParams, lam: float, *, rtol: float = 1e-8) -> QuadratureResult:
    """Reduced bound ``int_0^K lam / (r^{2a}(lam + r^{2b})) arctan(pi r / (2(lam + r^{2b}))) dr``."""
    lam = check_scalar(lam, "lambda", min_value=0.0, include_min=False)
    al = params.alpha
    # r -> 0: integrand ~ (pi/2) r^{1-2a}
    return _radial_1d(corrector_variance_integrand, params, lam, rtol, 2 - 2 * al, math.pi / 2)


def corrector_gradient_variance(params: SpectrumParams, lam: float, *, rtol: float = 1e-8) -> QuadratureResult:
    """Reduced bound ``int_0^K r^{2-2a} / (lam + r^{2b}) arctan(pi r / (2(lam + r^{2b}))) dr``."""
    lam = check_scalar(lam, "lambda", min_value=0.0, include_min=False)
    al = params.alpha
    # r -> 0: integrand ~ pi r^{3-2a} / (2 lam^2)
    return _radial_1d(corrector_gradient_integrand, params, lam, rtol, 4 - 2 * al, math.pi / (2 * lam * lam))


@dataclass
class CorrectorScan:
    lambdas: np.ndarray
    variance: np.ndarray
    gradient_variance: np.ndarray
    variance_verdict: str | None
    gradient_verdict: str | None

    @property
    def gradient_ratios(self) -> np.ndarray:
        g = self.gradient_variance
        return g[1:] / g[:-1]

    @property
    def variance_ratios(self) -> np.ndarray:
        v = self.variance
        return v[1:] / v[:-1]


def corrector_scan(params: SpectrumParams, lambdas, *, ratio_tol: float = 0.01,
                   vanish_factor: float = 1e-3) -> CorrectorScan:
    """Evaluate both corrector bounds over a descending ``lambda`` list.

    Verdicts (``None`` for a single value):

    * variance: ``"variance -> 0"`` when strictly decreasing and the last value
      is below ``vanish_factor`` times the first; otherwise
      ``"variance not vanishing"``.
    * gradient: ``"gradient variance bounded"`` when the last successive ratio
      is within ``ratio_tol`` of one; ``"gradient variance growing"`` when the
      values keep increasing past that; otherwise ``"inconclusive"``.
    """
    lams = np.asarray(lambdas, dtype=float)
    if lams.ndim != 1 or lams.size == 0:
        raise ValueError("lambda list must be a non-empty 1-D sequence")
    if np.any(lams <= 0):
        raise ValueError("lambda values must be positive")
    if np.any(np.diff(lams) >= 0):
        raise ValueError("lambda values must be strictly descending")
    var = np.array([corrector_variance(params, lam).value for lam in lams])
    grad = np.array([corrector_gradient_variance(params, lam).value for lam in lams])
    if lams.size == 1:
        return CorrectorScan(lams, var, grad, None, None)
    decreasing = bool(np.all(np.diff(var) < 0))
    vanishing = decreasing and var[-1] < vanish_factor * var[0]
    v_verdict = "variance -> 0" if vanishing else "variance not vanishing"
    last_ratio = grad[-1] / grad[-2]
    if abs(last_ratio - 1) <= ratio_tol:
        g_verdict = "gradient variance bounded"
    elif np.all(np.diff(grad) > 0):
        g_verdict = "gradient variance growing"
    else:
        g_verdict = "inconclusive"
    return CorrectorScan(lams, var, grad, v_verdict, g_verdict)


# ---------------------------------------------------------------------------
# fBM two-time covariance and ballistic-line MSD


def fbm_exact_cov(hurst: float, amplitude, s: float, t: float) -> np.ndarray:
    """``(D/2)(s^{2H} + t^{2H} - |t - s|^{2H})`` for an fBM with ``E[B(t)B(t)^T] = D t^{2H}``."""
    hurst = check_scalar(hurst, "hurst", min_value=0.0, max_value=1.0,
                         include_min=False, include_max=False)
    s = check_scalar(s, "s", min_value=0.0)
    t = check_scalar(t, "t", min_value=0.0)
    h2 = 2 * hurst
    return 0.5 * np.asarray(amplitude, dtype=float) * (s ** h2 + t ** h2 - abs(t - s) ** h2)


def ballistic_kernel(theta, kv, T) -> np.ndarray:
    """``2 int_0^T (T - u) cos(k_v u) exp(-theta u) du``."""
    z = np.asarray(theta) - 1j * np.asarray(kv)
    return 2.0 * T * T * np.real(_phi2(z * T))


def ballistic_msd(params: SpectrumParams, T: float, *, rtol: float = 1e-5) -> QuadratureResult:
    """``E[Z(T) Z(T)^T]`` of ``Z(T) = int_0^T V(s, v s) ds``.

    Equals ``2 int_0^T int_0^s R(s', v s') ds' ds``; the time integrals are done
    in closed form and the wavenumber integral by quadrature.
    """
    T = check_scalar(T, "T", min_value=0.0, include_min=False)
    d, al, be, speed = params.dim, params.alpha, params.beta, params.speed

    def scalar(r, c):
        return cutoff(params, r) * r ** (2 - 2 * al) * ballistic_kernel(r ** (2 * be), speed * r * c, T)

    def width(r):
        return (r ** (2 * be) + 1.0 / T) / (speed * r)

    kmax, K = params.k_max, params.cutoff_radius
    r_lo = min(kmax, T ** (-1.0 / min(2 * be, 1.0))) * (rtol * 1e-3) ** (1 / (2 - 2 * al))
    edges = [math.log(r_lo), math.log(K)] + ([math.log(kmax)] if params.taper_width > 0 else [])
    sph = _spherical(d, scalar, edges, width=width, rtol=rtol)
    tail = params.cutoff_amplitude * r_lo ** (2 - 2 * al) / (2 - 2 * al) * T * T
    value = sph.value.sum(axis=0) + tail * _isotropic_projector_integral(d)
    error = sph.error.sum(axis=0)
    return _result_in_frame(params.rotation, d, value, error, np.all(sph.converged), False, sph.evaluations)


# ---------------------------------------------------------------------------
# Monte Carlo importance-sampling oracle


def _truncated_cauchy(rng, loc, scale, lo, hi, n):
    plo = 0.5 + np.arctan((lo - loc) / scale) / np.pi
    phi = 0.5 + np.arctan((hi - loc) / scale) / np.pi
    p = plo + (phi - plo) * rng.random(n)
    x = loc + scale * np.tan(np.pi * (p - 0.5))
    dens = 1.0 / (np.pi * scale * (1 + ((x - loc) / scale) ** 2)) / (phi - plo)
    return x, dens


def _orthonormal_complement(v_hat: np.ndarray) -> np.ndarray:
    """Columns span the orthogonal complement of ``v_hat``."""
    d = v_hat.size
    q, _ = np.linalg.qr(np.column_stack([v_hat, np.eye(d)]))
    return q[:, 1:d]


def mc_oracle(params: SpectrumParams, quantity: str, *, eps: float = 0.0,
              n_samples: int = 1_000_000, rng=0, chunk: int = 200_000,
              u_loc: float | None = None, u_scale: float | None = None) -> QuadratureResult:
    """Independent Monte Carlo importance-sampling estimate of a spectral integral.

    Samples raw wavevectors ``k`` in the physical frame and averages the full
    matrix integrand.  ``log|k|`` is drawn from a (truncated) Cauchy law, the
    polar angle from the drift from an equal mixture of a uniform law and a
    Cauchy law centred on the equator with the integrand's sweeping width.

    ``quantity`` is ``"taylor_kubo"`` (uses ``eps``) or ``"fbm_covariance"``.
    ``error_estimate`` holds one standard error per entry.
    """
    rng = as_generator(rng)
    d, be, speed = params.dim, params.beta, params.speed
    v_hat = params.velocity / speed
    perp = _orthonormal_complement(v_hat)
    kmax = params.k_max
    if quantity == "taylor_kubo":
        eps = check_scalar(eps, "eps", min_value=0.0)
        scalar, width_fn = _tk_scalar(params, eps)
        u_hi = math.log(kmax)
        r_star = max(min(eps ** (1 / be), eps * eps) if eps > 0 else 1e-12, 1e-30)
        loc = 0.5 * (math.log(r_star) + u_hi) if u_loc is None else u_loc
        scale = max(0.25 * (u_hi - math.log(r_star)), 1.0) if u_scale is None else u_scale

        def integrand(k, r, c):
            return scalar(r, c)  # already includes r^d of du dOmega
    elif quantity == "fbm_covariance":
        report = classify(params)
        if report.regime is not Regime.FRACTIONAL_BM:
            raise RegimeError("fbm_covariance needs the FractionalBM regime")
        u_hi = 300.0
        loc = -math.log(speed) if u_loc is None else u_loc
        scale = 4.0 if u_scale is None else u_scale
        if be > 0.5:
            def width_fn(r):
                return 1.0 / (speed * r)
        else:
            width_fn = None

        def integrand(k, r, c):
            return params.cutoff_amplitude * r * gamma_factor(params, k)
    else:
        raise ValueError(f"unknown quantity {quantity!r}")

    s_d2 = sphere_area(d - 1) if d > 2 else 2.0
    total = np.zeros((d, d))
    total_sq = np.zeros((d, d))
    n_done = 0
    while n_done < n_samples:
        n = min(chunk, n_samples - n_done)
        u, pu = _truncated_cauchy(rng, loc, scale, -300.0, u_hi, n)
        r = np.exp(u)
        w = np.full(n, np.pi / 2) if width_fn is None else np.minimum(width_fn(r), np.pi / 2)
        pick = rng.random(n) < 0.5
        th_uni = rng.random(n) * np.pi
        th_cau, _ = _truncated_cauchy(rng, np.pi / 2, w, 0.0, np.pi, n)
        theta = np.where(pick, th_uni, th_cau)
        p_cau_lo = 0.5 + np.arctan((0.0 - np.pi / 2) / w) / np.pi
        p_cau_hi = 0.5 + np.arctan((np.pi - np.pi / 2) / w) / np.pi
        dens_cau = 1.0 / (np.pi * w * (1 + ((theta - np.pi / 2) / w) ** 2)) / (p_cau_hi - p_cau_lo)
        p_theta = 0.5 / np.pi + 0.5 * dens_cau
        c = np.cos(theta)
        st = np.sin(theta)
        if d == 2:
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            t_dir = sign[:, None] * perp[:, 0][None, :]
        else:
            g = rng.standard_normal((n, d - 1))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            t_dir = g @ perp.T
        k_hat = c[:, None] * v_hat[None, :] + st[:, None] * t_dir
        k = r[:, None] * k_hat
        # surface measure: sin^{d-2}(theta) d theta dOmega_{d-2}
        jac = st ** (d - 2) * s_d2
        weight = integrand(k, r, c) * jac / (pu * p_theta)
        mats = weight[:, None, None] * projector(k_hat)
        total += mats.sum(axis=0)
        total_sq += (mats ** 2).sum(axis=0)
        n_done += n
    mean = total / n_done
    var = np.maximum(total_sq / n_done - mean ** 2, 0.0)
    se = np.sqrt(var / n_done)
    return QuadratureResult(mean, se, True, False, n_done)


def quenched_ballistic_msd(modes, velocity, T: float) -> np.ndarray:
    """``E[Z(T) Z(T)^T]`` for the finite mode sum, conditional on its wavenumbers.

    Equals ``(1/N) sum_j w_j P(k_j) m_j(T)`` with the per-mode kernel
    :func:`ballistic_kernel`; the exact target of the ballistic-line samplers.
    """
    T = check_scalar(T, "T", min_value=0.0)
    v = check_vector(velocity, modes.dim, "velocity")
    if modes.mode_count == 0 or T == 0:
        return np.zeros((modes.dim, modes.dim))
    m = ballistic_kernel(modes.rates, modes.wavenumbers @ v, T)
    coef = modes.weights * m / modes.mode_count
    return np.einsum("n,nij->ij", coef, modes.projectors)
