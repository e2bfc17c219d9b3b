"""Tracer trajectories in the drifting random field.

Two integrators are provided:

* :func:`integrate` solves ``dx = (v + eps V(t, x)) dt + sqrt(2 kappa) dB``
  with Heun steps for the drift and field terms (the field itself advanced by
  exact OU steps) and Euler-Maruyama for the molecular noise.
* :func:`ballistic_line` accumulates ``Z(T) = int_0^T V(s, v s) ds`` along
  the mean-drift line, either by the trapezoidal rule or by sampling the
  exact joint Gaussian law of (amplitude, time integral) per mode.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_generators, check_scalar
from .field import FieldState, advance, evaluate
from .spectrum import SpectrumParams

MAX_STORED_POINTS = 4096
RESOLUTION_FACTOR = 0.1
# |z| h below which the exact-scheme moments are integrated by Gauss-Legendre
_GL_SWITCH = 1.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class Mode(str, enum.Enum):
    FULL = "FullTrajectory"
    BALLISTIC = "BallisticLine"


class StepResolutionError(ValueError):
    """The step does not resolve the fastest relaxation or sweeping time."""


@dataclass(frozen=True)
class TracerConfig:
    """Integration settings.

    Parameters
    ----------
    epsilon : float
        Field amplitude ``eps`` in ``(0, 1]``.
    horizon : float
        Final time ``T``.
    dt : float
        Step size; ``T >= dt``.
    kappa : float
        Molecular diffusivity.
    mode : {"FullTrajectory", "BallisticLine"}
    sample_stride : int, optional
        Store every ``sample_stride``-th step; by default at most 4096 points.
    scheme : {"trapezoid", "exact"}
        Ballistic-line accumulation scheme.
    grid : sequence of float, optional
        Output times of the exact ballistic scheme (default: every ``dt``).
    field_substeps : int
        Number of equal OU sub-steps per integrator step.  Runs with
        ``(dt, s)`` and ``(dt/2, 2s)`` consume identical noise.
    """

    epsilon: float = 1.0
    horizon: float = 1.0
    dt: float = 0.1
    kappa: float = 0.0
    mode: Mode = Mode.FULL
    sample_stride: int | None = None
    scheme: str = "trapezoid"
    grid: tuple | None = None
    field_substeps: int = 1

    def __post_init__(self):
        eps = check_scalar(self.epsilon, "epsilon", min_value=0.0, max_value=1.0)
        object.__setattr__(self, "epsilon", eps)
        dt = check_scalar(self.dt, "dt", min_value=0.0, include_min=False)
        horizon = check_scalar(self.horizon, "horizon", min_value=dt)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "kappa", check_scalar(self.kappa, "kappa", min_value=0.0))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.scheme not in ("trapezoid", "exact"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sample_stride is not None and (int(self.sample_stride) != self.sample_stride
                                               or self.sample_stride < 1):
            raise ValueError("sample_stride must be a positive integer")
        if int(self.field_substeps) != self.field_substeps or self.field_substeps < 1:
            raise ValueError("field_substeps must be a positive integer")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.ndim != 1 or g.size == 0 or g[0] <= 0 or np.any(np.diff(g) <= 0):
                raise ValueError("grid must be positive and strictly increasing")
            object.__setattr__(self, "grid", tuple(float(t) for t in g))

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    def stride(self) -> int:
        if self.sample_stride is not None:
            return int(self.sample_stride)
        return max(1, math.ceil(self.steps / (MAX_STORED_POINTS - 1)))


@dataclass
class Trajectory:
    """Time-stamped tracer path(s).

    ``positions`` and ``fluctuation`` have shape ``(n, d)`` or, for an
    ensemble, ``(M, n, d)``; ``fluctuation = positions - v t``.
    """

    times: np.ndarray
    positions: np.ndarray
    drift: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.drift = np.asarray(self.drift, dtype=float)
        if self.positions.shape[-2] != self.times.size:
            raise ValueError("positions need one row per time")

    @classmethod
    def from_fluctuation(cls, times, fluctuation, drift, metadata=None) -> "Trajectory":
        times = np.asarray(times, dtype=float)
        drift = np.asarray(drift, dtype=float)
        return cls(times, np.asarray(fluctuation) + times[:, None] * drift, drift, metadata or {})

    @property
    def fluctuation(self) -> np.ndarray:
        return self.positions - self.times[:, None] * self.drift

    @property
    def batched(self) -> bool:
        return self.positions.ndim == 3

    def member(self, i: int) -> "Trajectory":
        if not self.batched:
            raise ValueError("not an ensemble")
        return Trajectory(self.times, self.positions[i], self.drift, dict(self.metadata))

    def members(self) -> list["Trajectory"]:
        return [self.member(i) for i in range(self.positions.shape[0])] if self.batched else [self]

    def to_csv(self, path) -> None:
        """Columns ``t, x1..xd, z1..zd`` (single trajectory)."""
        if self.batched:
            raise ValueError("write ensemble members one at a time")
        d = self.positions.shape[-1]
        header = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"z{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, x, z in zip(self.times, self.positions, self.fluctuation):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in z])

    def write_metadata(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata, indent=2, sort_keys=True))


def check_resolution(state: FieldState, speed: float, dt: float) -> None:
    """Reject ``dt > 0.1 min(1/theta_max, 1/(|v| k_max))``."""
    modes = state.modes
    if modes.mode_count == 0:
        return
    theta_max = float(np.max(modes.rates))
    k_max = float(np.max(modes.radii))
    limit = RESOLUTION_FACTOR * min(1.0 / theta_max, 1.0 / (speed * k_max) if speed > 0 else np.inf)
    if dt > limit * (1 + 1e-12):
        raise StepResolutionError(
            f"dt = {dt:g} exceeds {RESOLUTION_FACTOR} * min(1/theta_max, 1/(|v| k_max)) = {limit:g}")


def _advance(state: FieldState, dt: float, substeps: int) -> FieldState:
    for _ in range(substeps):
        state = advance(state, dt / substeps)
    return state


def _record_indices(steps: int, stride: int) -> np.ndarray:
    idx = np.arange(0, steps + 1, stride)
    if idx[-1] != steps:
        idx = np.append(idx, steps)
    return idx


def _metadata(state, config, mode, **extra) -> dict:
    meta = {
        "mode": mode,
        "modes": state.modes.mode_count,
        "dt": config.dt,
        "epsilon": config.epsilon,
        "kappa": config.kappa,
        "horizon": config.horizon,
        "amplitude_convention": ("dx = (v + epsilon V) dt" if mode == Mode.FULL.value
                                 else "Z(T) = int_0^T V(s, v s) ds with unit amplitude"),
    }
    meta.update(extra)
    return meta


def integrate(state: FieldState, params: SpectrumParams, config: TracerConfig, rng=None) -> Trajectory:
    """Full tracer trajectory started at the origin.

    The field state is not modified.  A batched state yields an ensemble
    trajectory; member ``m`` uses only the ``m``-th random stream (for the
    field and then for the molecular noise at every step).
    """
    if config.mode is not Mode.FULL:
        raise ValueError("integrate needs mode FullTrajectory")
    v = params.velocity
    dt, eps, kappa = config.dt, config.epsilon, config.kappa
    check_resolution(state, params.speed, dt)
    if rng is not None:
        state = FieldState(state.cos_amplitudes, state.sin_amplitudes, state.modes, state.time,
                           as_generators(rng, state.batch_size))
    gens = state.generators
    m, d = state.batch_size, params.dim
    steps, stride = config.steps, config.stride()
    rec = _record_indices(steps, stride)
    out = np.zeros((m, rec.size, d))
    # the fluctuation y = x - v t is integrated directly, so eps = 0 gives y = 0 exactly
    y = np.zeros((m, d))
    noise = math.sqrt(2.0 * kappa * dt)
    j = 1
    v0 = _eval(state, y) if eps > 0 else None
    for n in range(1, steps + 1):
        if eps > 0:
            y_pred = y + dt * eps * v0
            state = _advance(state, dt, config.field_substeps)
            v1 = _eval(state, y_pred + v * (n * dt))
            y = y + 0.5 * dt * eps * (v0 + v1)
        if kappa > 0:
            y = y + noise * np.stack([g.standard_normal(d) for g in gens])
        if eps > 0:
            v0 = _eval(state, y + v * (n * dt))
        if j < rec.size and n == rec[j]:
            out[:, j] = y
            j += 1
    times = rec * dt
    meta = _metadata(state, config, Mode.FULL.value, steps=steps, stride=stride)
    fluct = out if state.batched else out[0]
    return Trajectory.from_fluctuation(times, fluct, v, meta)


def _eval(state: FieldState, x: np.ndarray) -> np.ndarray:
    if state.batched:
        return evaluate(state, x)
    return evaluate(state, x[0])[None]


def ballistic_line(state: FieldState, params: SpectrumParams, config: TracerConfig) -> Trajectory:
    """Ballistic-line process ``Z(T) = int_0^T V(s, v s) ds``.

    ``positions`` hold ``v t + Z(t)``.  With ``scheme="trapezoid"`` the field
    is advanced exactly and integrated by the trapezoidal rule (subject to the
    step guard); ``scheme="exact"`` samples the exact conditional Gaussian
    law of each mode on the output grid, so any grid is admissible.
    """
    if config.mode is not Mode.BALLISTIC:
        raise ValueError("ballistic_line needs mode BallisticLine")
    if config.scheme == "exact":
        return _ballistic_exact(state, params, config)
    v = params.velocity
    dt = config.dt
    check_resolution(state, params.speed, dt)
    m, d = state.batch_size, params.dim
    steps, stride = config.steps, config.stride()
    rec = _record_indices(steps, stride)
    out = np.zeros((m, rec.size, d))
    z = np.zeros((m, d))
    v_prev = _eval(state, np.zeros((m, d)))
    j = 1
    for n in range(1, steps + 1):
        state = _advance(state, dt, config.field_substeps)
        v_next = _eval(state, np.broadcast_to(v * (n * dt), (m, d)))
        z = z + 0.5 * dt * (v_prev + v_next)
        v_prev = v_next
        if j < rec.size and n == rec[j]:
            out[:, j] = z
            j += 1
    times = rec * dt
    meta = _metadata(state, config, Mode.BALLISTIC.value, scheme="trapezoid", steps=steps, stride=stride)
    fluct = out if state.batched else out[0]
    return Trajectory(times, fluct + times[:, None] * v, v, meta)


# ---------------------------------------------------------------------------
# exact ballistic-line scheme


@dataclass
class _StepLaw:
    """Per-mode law of one exact step of length ``h``."""

    growth: np.ndarray   # e^{z h}
    mean_int: np.ndarray  # (e^{z h} - 1)/z
    l11: np.ndarray
    l21: np.ndarray
    l22: np.ndarray


def _step_law(theta: np.ndarray, omega: np.ndarray, h: float) -> _StepLaw:
    """Moments of ``(rho(h), int_0^h rho)`` for ``d rho = z rho dt + sqrt(2 theta) e^{i omega t} dW``.

    ``z = -theta + i omega`` and ``E|dW|^2 = 2 dt`` (circular), so that a
    stationary ``rho`` has ``E|rho|^2 = 2``.
    """
    z = -theta + 1j * omega
    a = -theta
    # e^{zh} - 1 without cancellation
    rot = np.exp(1j * omega * h)
    em1 = np.expm1(a * h) * rot + (-2.0 * np.sin(omega * h / 2) ** 2 + 1j * np.sin(omega * h))
    growth = 1.0 + em1
    small = np.abs(z) * h <= _GL_SWITCH
    zs = np.where(small, 1.0, z)
    mean_int = np.where(small, 0.0, em1 / zs)
    s11 = -2.0 * np.expm1(-2.0 * theta * h)
    e2 = np.expm1(-2.0 * theta * h) / (-2.0 * theta)
    s12 = np.where(small, 0.0, 4.0 * theta / np.conj(zs) * (e2 - mean_int))
    s22 = np.where(small, 0.0, 4.0 * theta / np.abs(zs) ** 2 * (e2 - 2.0 * mean_int.real + h))
    if np.any(small):
        ts, ws, as_, zsm = theta[small], omega[small], a[small], z[small]
        q = 0.5 * h * (_GL_NODES + 1.0)                   # (Q,)
        wq = 0.5 * h * _GL_WEIGHTS
        aq = as_[:, None] * q[None, :]
        wqq = ws[:, None] * q[None, :]
        eaq = np.exp(aq)
        sin2 = np.sin(wqq / 2) ** 2
        zc = zsm[:, None]
        # (e^{zh} - 1)/z = int_0^h e^{zq} dq
        mean_int[small] = np.sum(wq * np.exp(zc * q[None, :]), axis=1)
        # e^{zq}(e^{conj(z) q} - 1) and |e^{zq} - 1|^2 in cancellation-free form
        cross = eaq * (np.expm1(aq) + 2.0 * sin2 - 1j * np.sin(wqq))
        s12[small] = 4.0 * ts * np.sum(wq * cross / np.conj(zc), axis=1)
        mod2 = np.expm1(aq) ** 2 + 4.0 * eaq * sin2
        s22[small] = 4.0 * ts * np.sum(wq * mod2 / np.abs(zc) ** 2, axis=1)
    l11 = np.sqrt(np.maximum(s11, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, np.conj(s12) / l11, 0.0)
    l22 = np.sqrt(np.maximum(s22 - np.abs(l21) ** 2, 0.0))
    return _StepLaw(growth, mean_int, l11, l21, l22)


def _ballistic_exact(state: FieldState, params: SpectrumParams, config: TracerConfig) -> Trajectory:
    v = params.velocity
    modes = state.modes
    m, d = state.batch_size, params.dim
    grid = np.asarray(config.grid if config.grid is not None
                      else np.arange(1, config.steps + 1) * config.dt)
    times = np.concatenate([[0.0], grid])
    out = np.zeros((m, times.size, d))
    meta = _metadata(state, config, Mode.BALLISTIC.value, scheme="exact", points=int(times.size))
    if modes.mode_count == 0:
        fluct = out if state.batched else out[0]
        return Trajectory(times, fluct + times[:, None] * v, v, meta)
    xi = state.cos_amplitudes if state.batched else state.cos_amplitudes[None]
    eta = state.sin_amplitudes if state.batched else state.sin_amplitudes[None]
    basis = modes.basis                                   # (N, d, d-1)
    rho = (np.einsum("nde,mnd->mne", basis, xi)
           - 1j * np.einsum("nde,mnd->mne", basis, eta))  # (M, N, d-1)
    theta = modes.rates
    omega = modes.wavenumbers @ v
    amp_basis = modes.amplitude_scale()[:, None, None] * basis
    n_modes = modes.mode_count
    gens = state.generators
    z = np.zeros((m, d))
    for i, h in enumerate(np.diff(times)):
        law = _step_law(theta, omega, float(h))
        g = np.stack([gen.standard_normal((n_modes, d - 1, 4)) for gen in gens])
        g1 = (g[..., 0] + 1j * g[..., 1]) * math.sqrt(0.5)
        g2 = (g[..., 2] + 1j * g[..., 3]) * math.sqrt(0.5)
        n1 = law.l11[None, :, None] * g1
        n2 = law.l21[None, :, None] * g1 + law.l22[None, :, None] * g2
        integral = law.mean_int[None, :, None] * rho + n2
        rho = law.growth[None, :, None] * rho + n1
        z = z + np.einsum("nde,mne->md", amp_basis, integral.real)
        out[:, i + 1] = z
    fluct = out if state.batched else out[0]
    return Trajectory(times, fluct + times[:, None] * v, v, meta)


def rescale(traj: Trajectory, epsilon: float, delta: float, grid) -> Trajectory:
    """``y_eps(t) = z(t / eps^{2 delta})`` on the requested grid.

    Pure time re-indexing by linear interpolation of the stored fluctuation;
    amplitude prefactors are whatever the dynamics carried.
    """
    epsilon = check_scalar(epsilon, "epsilon", min_value=0.0, max_value=1.0, include_min=False)
    delta = check_scalar(delta, "delta", min_value=0.0, include_min=False)
    grid = np.asarray(grid, dtype=float)
    src = grid / epsilon ** (2.0 * delta)
    if np.any(src < traj.times[0] - 1e-12) or np.any(src > traj.times[-1] * (1 + 1e-12)):
        raise ValueError(f"rescaled grid needs source times up to {src.max():g}, "
                         f"trajectory covers {traj.times[-1]:g}")
    fl = traj.fluctuation
    if traj.batched:
        y = np.stack([[np.interp(src, traj.times, f[:, c]) for c in range(f.shape[1])] for f in fl])
        y = np.swapaxes(y, 1, 2)
    else:
        y = np.stack([np.interp(src, traj.times, fl[:, c]) for c in range(fl.shape[1])], axis=1)
    meta = dict(traj.metadata)
    meta.update({"rescale_epsilon": epsilon, "rescale_delta": delta,
                 "rescale_convention": "y(t) = z(t / epsilon^(2 delta)), no amplitude prefactor"})
    return Trajectory.from_fluctuation(grid, y, traj.drift, meta)
