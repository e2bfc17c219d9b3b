"""Vectorised adaptive Gauss-Kronrod quadrature.

Many independent one-dimensional integrals are refined together: every round
evaluates the 15-point Kronrod rule (with its embedded 7-point Gauss rule) on
all unfinished panels in one call to the integrand, accepts panels whose
embedded-rule error is within their share of the tolerance and bisects the
rest.  Nested use (an inner angular integral evaluated at the outer radial
nodes) therefore stays fully vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae.
GAUSS_WEIGHTS[[1, 3, 5]] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]
GAUSS_WEIGHTS[[9, 11, 13]] = _WG[2::-1]


@dataclass
class QuadratureResult:
    """Value of a spectral integral with its error bookkeeping.

    ``divergence_suspected`` implies ``converged`` is False.
    """

    value: np.ndarray | float
    error_estimate: np.ndarray | float
    converged: bool
    divergence_suspected: bool = False
    evaluations: int = 0

    def __post_init__(self):
        if self.divergence_suspected:
            self.converged = False

    def as_dict(self) -> dict:
        return {
            "value": np.asarray(self.value).tolist(),
            "error": np.asarray(self.error_estimate).tolist(),
            "converged": bool(self.converged),
            "divergence_suspected": bool(self.divergence_suspected),
            "evaluations": int(self.evaluations),
        }


class QuadratureError(RuntimeError):
    """Quadrature failed to converge; ``result`` carries the error estimate."""

    def __init__(self, message: str, result: QuadratureResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass
class BatchIntegral:
    value: np.ndarray      # (M, C)
    error: np.ndarray      # (M, C)
    converged: np.ndarray  # (M,)
    evaluations: int


def integrate_batch(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    a,
    b,
    *,
    rtol: float = 1e-8,
    atol: float = 0.0,
    max_rounds: int = 48,
    initial_panels: int = 1,
    breakpoints: np.ndarray | None = None,
) -> BatchIntegral:
    """Integrate ``M`` functions over their own intervals ``[a_i, b_i]``.

    Parameters
    ----------
    func : callable
        ``func(x, idx)`` with ``x`` and ``idx`` of shape ``(P,)`` returns
        ``(P, C)`` values of integrand ``idx[p]`` at ``x[p]``.
    a, b : array_like, shape (M,)
        Integration limits.
    rtol, atol : float
        Integral ``i`` is done when its summed panel error is below
        ``max(rtol * max_c |I_i,c|, atol)``.
    breakpoints : array, shape (M, n), optional
        Interior points where panels must start (kinks, peaks).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m = a.size
    edges = [a[:, None]]
    if breakpoints is not None:
        bp = np.clip(np.atleast_2d(breakpoints), a[:, None], b[:, None])
        edges.append(np.sort(bp, axis=1))
    edges.append(b[:, None])
    edges = np.concatenate(edges, axis=1)
    if initial_panels > 1:
        frac = np.linspace(0.0, 1.0, initial_panels + 1)
        edges = np.concatenate(
            [(lo[:, None] + (hi - lo)[:, None] * frac[None, :-1])
             for lo, hi in zip(edges[:, :-1].T, edges[:, 1:].T)] + [edges[:, -1:]], axis=1)
    idx = np.repeat(np.arange(m), edges.shape[1] - 1)
    lo = edges[:, :-1].ravel()
    hi = edges[:, 1:].ravel()
    keep = hi > lo
    idx, lo, hi = idx[keep], lo[keep], hi[keep]

    span = np.where(b > a, b - a, 1.0)
    acc_val = None
    acc_err = None
    converged = np.ones(m, dtype=bool)
    evaluations = 0
    for round_ in range(max_rounds + 1):
        if idx.size == 0:
            break
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        x = mid[:, None] + half[:, None] * NODES[None, :]
        fx = np.asarray(func(x.ravel(), np.repeat(idx, 15)), dtype=float)
        if fx.ndim == 1:
            fx = fx[:, None]
        evaluations += fx.shape[0]
        fx = fx.reshape(idx.size, 15, -1)
        kron = half[:, None] * np.einsum("pnc,n->pc", fx, KRONROD_WEIGHTS)
        gauss = half[:, None] * np.einsum("pnc,n->pc", fx, GAUSS_WEIGHTS)
        err = np.abs(kron - gauss)
        if acc_val is None:
            n_comp = kron.shape[1]
            acc_val = np.zeros((m, n_comp))
            acc_err = np.zeros((m, n_comp))
        est = acc_val.copy()
        np.add.at(est, idx, kron)
        tol = np.maximum(rtol * np.max(np.abs(est), axis=1), atol)
        share = tol[idx] * (hi - lo) / span[idx]
        bad = ~np.all(np.isfinite(kron), axis=1)
        ok = (np.max(err, axis=1) <= share) & ~bad
        if round_ == max_rounds:
            ok[:] = True
            converged[np.unique(idx[np.max(err, axis=1) > share])] = False
        # panels that can no longer be bisected in floating point
        tiny = (hi - lo) <= 1e-13 * np.maximum(np.abs(mid), span[idx])
        stuck = tiny & ~ok
        if np.any(stuck):
            converged[np.unique(idx[stuck])] = False
            ok |= stuck
        if np.any(bad):
            converged[np.unique(idx[bad])] = False
        np.add.at(acc_val, idx[ok], np.where(np.isfinite(kron[ok]), kron[ok], np.nan))
        np.add.at(acc_err, idx[ok], err[ok])
        rest = ~ok
        idx, lo, hi, mid = idx[rest], lo[rest], hi[rest], mid[rest]
        idx = np.repeat(idx, 2)
        lo, hi = np.stack([lo, mid], 1).ravel(), np.stack([mid, hi], 1).ravel()
    if acc_val is None:
        acc_val = np.zeros((m, 1))
        acc_err = np.zeros((m, 1))
    total_tol = np.maximum(rtol * np.max(np.abs(acc_val), axis=1), atol)
    converged &= np.max(acc_err, axis=1) <= total_tol * (1 + 1e-9)
    converged &= np.all(np.isfinite(acc_val), axis=1)
    return BatchIntegral(acc_val, acc_err, converged, evaluations)


def integrate(func: Callable[[np.ndarray], np.ndarray], a: float, b: float, **kwargs) -> BatchIntegral:
    """Single integral convenience wrapper; ``func(x)`` returns ``(P,)`` or ``(P, C)``."""
    bp = kwargs.pop("breakpoints", None)
    if bp is not None:
        bp = np.atleast_2d(np.asarray(bp, dtype=float))
    return integrate_batch(lambda x, _idx: func(x), [a], [b], breakpoints=bp, **kwargs)
