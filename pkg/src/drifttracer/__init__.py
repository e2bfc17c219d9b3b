"""Passive tracers in a drifting Gaussian Markovian random velocity field.

Modules
-------
spectrum
    Model parameters, spectral density, covariance and regime classification.
field
    Random Fourier-mode synthesis with exact OU amplitude dynamics.
tracer
    Full and ballistic-line trajectories, rescaling.
theory
    Quadrature of the Taylor-Kubo, regularised and fBM amplitude integrals,
    corrector diagnostics.
stats
    MSD, scaling fits, fBM oracle, Hurst and Gaussianity diagnostics.
cli
    Configuration-driven experiment pipeline.
"""

__version__ = "0.1.0"

from .spectrum import (  # noqa: E402
    Regime,
    RegimeReport,
    SpectrumParams,
    ZeroDriftError,
    classify,
    covariance,
    cutoff,
    spectral_density,
)
from .quadrature import QuadratureError, QuadratureResult  # noqa: E402

__all__ = [
    "QuadratureError",
    "QuadratureResult",
    "Regime",
    "RegimeReport",
    "SpectrumParams",
    "ZeroDriftError",
    "classify",
    "covariance",
    "cutoff",
    "spectral_density",
]
