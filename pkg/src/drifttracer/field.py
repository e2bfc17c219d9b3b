"""Random Fourier-mode synthesis of the drifting Gaussian velocity field.

The field is

    V(t, x) = N^{-1/2} sum_j sqrt(w_j) [xi_j(t) cos(k_j.x) + eta_j(t) sin(k_j.x)]

where the amplitudes ``xi_j``, ``eta_j`` are stationary Ornstein-Uhlenbeck
processes with rate ``theta_j = |k_j|^{2 beta}`` living in the plane
orthogonal to ``k_j``.  The wavenumbers are drawn once per experiment and then
frozen, so every statistic of the tracer is conditionally Gaussian given the
:class:`ModeSet`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate as sp_integrate

from ._validation import DomainError, as_generator, as_generators, check_scalar, check_vector
from .spectrum import SpectrumParams, cutoff, sphere_area

DEFAULT_STRATA = 32
# innermost shell is (0, INNER_FRACTION * (K + dK)]
INNER_FRACTION = 1e-6


def perpendicular_basis(wavenumbers: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the planes ``k_j^perp``; shape ``(N, d, d-1)``.

    Uses one Householder reflection per mode, which maps ``e1`` onto
    ``-sign(k_1) k/|k|``; its remaining columns span the complement.
    """
    k = np.asarray(wavenumbers, dtype=float)
    n, d = k.shape
    if n == 0:
        return np.zeros((0, d, d - 1))
    k_hat = k / np.linalg.norm(k, axis=1, keepdims=True)
    sign = np.where(k_hat[:, 0] >= 0, 1.0, -1.0)
    w = k_hat * sign[:, None]
    w[:, 0] += 1.0
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    h = np.eye(d)[None] - 2.0 * w[:, :, None] * w[:, None, :]
    return h[:, :, 1:]


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Frozen wavenumber sample with importance weights.

    Parameters
    ----------
    wavenumbers : array, shape (N, d)
        Nonzero wavevectors.
    weights : array, shape (N,)
        Positive importance weights ``f(k_j) / p(k_j)``.
    rates : array, shape (N,)
        OU relaxation rates ``|k_j|^{2 beta}``.
    """

    wavenumbers: np.ndarray
    weights: np.ndarray
    rates: np.ndarray
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = np.asarray(self.wavenumbers, dtype=float)
        if k.ndim != 2 or k.shape[1] < 2:
            raise ValueError("wavenumbers must have shape (N, d) with d >= 2")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        th = np.asarray(self.rates, dtype=float).reshape(-1)
        if w.size != k.shape[0] or th.size != k.shape[0]:
            raise ValueError("weights and rates need one entry per wavenumber")
        if np.any(np.linalg.norm(k, axis=1) == 0):
            raise DomainError("wavenumbers must be nonzero")
        if np.any(w <= 0) or np.any(th <= 0):
            raise ValueError("weights and rates must be positive")
        for name, arr in (("wavenumbers", k), ("weights", w), ("rates", th)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        basis = perpendicular_basis(k)
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_wavenumbers(cls, wavenumbers, weights, beta: float) -> "ModeSet":
        k = np.asarray(wavenumbers, dtype=float)
        return cls(k, weights, np.linalg.norm(k, axis=1) ** (2.0 * beta))

    @classmethod
    def empty(cls, dim: int = 2) -> "ModeSet":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0))

    @property
    def mode_count(self) -> int:
        return self.wavenumbers.shape[0]

    @property
    def dim(self) -> int:
        return self.wavenumbers.shape[1]

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.wavenumbers, axis=1)

    @property
    def projectors(self) -> np.ndarray:
        """``P(k_j) = I - k_j k_j^T / |k_j|^2``; shape ``(N, d, d)``."""
        return self.basis @ np.swapaxes(self.basis, 1, 2)

    def amplitude_scale(self) -> np.ndarray:
        """``sqrt(w_j / N)``."""
        n = max(self.mode_count, 1)
        return np.sqrt(self.weights / n)

    # --- persistence -----------------------------------------------------

    def _columns(self) -> list[str]:
        return [f"k{i + 1}" for i in range(self.dim)] + ["weight", "rate"]

    def to_csv(self, path) -> None:
        """Write one row per mode: ``k1..kd, weight, rate``."""
        table = np.column_stack([self.wavenumbers, self.weights, self.rates])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self._columns())
            for row in table:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ModeSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        d = len(header) - 2
        if d < 2 or header != [f"k{i + 1}" for i in range(d)] + ["weight", "rate"]:
            raise ValueError(f"unexpected mode table header {header}")
        table = np.asarray(rows, dtype=float).reshape(-1, d + 2)
        return cls(table[:, :d], table[:, d], table[:, d + 1])

    def to_npz(self, path) -> None:
        np.savez(path, wavenumbers=self.wavenumbers, weights=self.weights, rates=self.rates)

    @classmethod
    def from_npz(cls, path) -> "ModeSet":
        with np.load(path) as data:
            return cls(data["wavenumbers"], data["weights"], data["rates"])


def shell_edges(params: SpectrumParams, strata: int) -> np.ndarray:
    """Edges ``0 = e_0 < e_1 < ... < e_S = K + dK``; log-spaced above ``e_1``."""
    kmax = params.k_max
    if strata == 1:
        return np.array([0.0, kmax])
    inner = np.geomspace(kmax * INNER_FRACTION, kmax, strata)
    return np.concatenate([[0.0], inner])


def _shell_mass(params: SpectrumParams, lo: float, hi: float) -> float:
    """``int_lo^hi a(r) r^{1 - 2 alpha} dr``."""
    p = 2.0 - 2.0 * params.alpha
    a0, K = params.cutoff_amplitude, params.cutoff_radius
    flat_hi = min(hi, K)
    mass = a0 * (flat_hi ** p - lo ** p) / p if flat_hi > lo else 0.0
    band_lo = max(lo, K)
    if hi > band_lo:
        mass += sp_integrate.quad(lambda r: cutoff(params, r) * r ** (1.0 - 2.0 * params.alpha),
                                  band_lo, hi, epsabs=0.0, epsrel=1e-12)[0]
    return mass


def _draw_radii(params: SpectrumParams, lo: float, hi: float, count: int,
                rng: np.random.Generator) -> np.ndarray:
    """Radii with density ``a(r) r^{1-2alpha}`` on ``[lo, hi]``.

    Inverse-CDF sampling of the power law, thinned by ``a(r)/a0`` inside the
    taper band.
    """
    p = 2.0 - 2.0 * params.alpha
    lp, hp = lo ** p, hi ** p
    out = np.empty(0)
    while out.size < count:
        u = rng.random(count)
        r = (lp + u * (hp - lp)) ** (1.0 / p)
        keep = rng.random(count) * params.cutoff_amplitude < cutoff(params, r)
        out = np.concatenate([out, r[keep]])
    return out[:count]


def _draw_directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_modes(params: SpectrumParams, n: int, strata: int = DEFAULT_STRATA, rng=None) -> ModeSet:
    """Stratified importance sample of the spectral measure.

    Each of the ``strata`` radial shells gets ``n // strata`` modes (the
    remainder goes to the outermost shells), so the weights are constant per
    shell and ``(1/N) sum_j w_j g(k_j)`` is an unbiased estimate of
    ``int f(k) g(k) dk``; for ``g = 1`` it is exact.

    Parameters
    ----------
    params : SpectrumParams
    n : int
        Number of modes, ``n >= strata``.
    strata : int
        Number of radial shells.
    rng : Generator or int
        Random source (required).
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"mode count must be a positive integer, got {n!r}")
    if isinstance(strata, bool) or int(strata) != strata or strata < 1:
        raise ValueError(f"strata must be a positive integer, got {strata!r}")
    n, strata = int(n), int(strata)
    if strata > n:
        raise ValueError(f"need n >= strata, got n={n}, strata={strata}")
    if params.alpha >= 1.0:
        raise DomainError("radial density is not integrable for alpha >= 1")
    rng = as_generator(rng)
    edges = shell_edges(params, strata)
    quota = np.full(strata, n // strata)
    quota[strata - n % strata:] += 1 if n % strata else 0
    area = sphere_area(params.dim)
    radii, weights = [], []
    for s in range(strata):
        lo, hi = edges[s], edges[s + 1]
        r = _draw_radii(params, lo, hi, int(quota[s]), rng)
        radii.append(r)
        weights.append(np.full(r.size, n / quota[s] * area * _shell_mass(params, lo, hi)))
    r = np.concatenate(radii)
    k = r[:, None] * _draw_directions(params.dim, n, rng)
    return ModeSet.from_wavenumbers(k, np.concatenate(weights), params.beta)


@dataclass
class FieldState:
    """Live OU amplitudes of one field realisation or of a batch of them.

    ``cos_amplitudes`` and ``sin_amplitudes`` have shape ``(N, d)`` for a
    single realisation or ``(M, N, d)`` for a batch of ``M`` independent
    realisations sharing the same :class:`ModeSet`.  ``generators`` holds one
    private random stream per realisation.
    """

    cos_amplitudes: np.ndarray
    sin_amplitudes: np.ndarray
    modes: ModeSet
    time: float = 0.0
    generators: tuple = ()

    def __post_init__(self):
        self.cos_amplitudes = np.asarray(self.cos_amplitudes, dtype=float)
        self.sin_amplitudes = np.asarray(self.sin_amplitudes, dtype=float)
        shape = self.cos_amplitudes.shape
        if self.sin_amplitudes.shape != shape:
            raise ValueError("cos and sin amplitudes must have the same shape")
        if shape[-2:] != (self.modes.mode_count, self.modes.dim):
            raise ValueError(f"amplitudes of shape {shape} do not match the mode set")
        self.generators = tuple(self.generators)

    @property
    def batched(self) -> bool:
        return self.cos_amplitudes.ndim == 3

    @property
    def batch_size(self) -> int:
        return self.cos_amplitudes.shape[0] if self.batched else 1

    def copy(self) -> "FieldState":
        return replace(self, cos_amplitudes=self.cos_amplitudes.copy(),
                       sin_amplitudes=self.sin_amplitudes.copy())


def _projected_normals(modes: ModeSet, gens, count: int = 2) -> list[np.ndarray]:
    """``count`` arrays of shape (M, N, d): ``P(k_j) g`` with ``g`` standard normal.

    Drawn in basis coordinates, which has the same law and needs ``d - 1``
    normals per mode instead of ``d``.
    """
    n, d = modes.mode_count, modes.dim
    coords = np.stack([g.standard_normal((count, n, d - 1)) for g in gens], axis=1)
    return [np.einsum("nde,mne->mnd", modes.basis, c) for c in coords]


def init_state(modes: ModeSet, rng, batch: int | None = None) -> FieldState:
    """Draw amplitudes from the stationary law.

    Parameters
    ----------
    modes : ModeSet
    rng : Generator, int or sequence of them
        One stream per batch member.
    batch : int, optional
        Number of independent realisations; ``None`` gives an unbatched state.
    """
    count = 1 if batch is None else int(batch)
    gens = as_generators(rng, count)
    xi, eta = _projected_normals(modes, gens)
    if batch is None:
        xi, eta = xi[0], eta[0]
    return FieldState(xi, eta, modes, 0.0, gens)


def ou_factors(rates: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Decay ``e^{-theta dt}`` and innovation scale ``sqrt(1 - e^{-2 theta dt})``."""
    decay = np.exp(-rates * dt)
    return decay, np.sqrt(-np.expm1(-2.0 * rates * dt))


def advance(state: FieldState, dt: float, rng=None) -> FieldState:
    """Exact OU step of every amplitude; returns a new state at ``time + dt``.

    ``rng`` overrides the state's own streams (one per batch member).
    """
    dt = check_scalar(dt, "dt", min_value=0.0, include_min=False)
    gens = state.generators if rng is None else tuple(as_generators(rng, state.batch_size))
    if len(gens) != state.batch_size:
        raise ValueError("state has no random streams; pass rng")
    decay, scale = ou_factors(state.modes.rates, dt)
    g_cos, g_sin = _projected_normals(state.modes, gens)
    if not state.batched:
        g_cos, g_sin = g_cos[0], g_sin[0]
    xi = decay[:, None] * state.cos_amplitudes + scale[:, None] * g_cos
    eta = decay[:, None] * state.sin_amplitudes + scale[:, None] * g_sin
    return FieldState(xi, eta, state.modes, state.time + dt, gens)


def _as_points(state: FieldState, x) -> tuple[np.ndarray, tuple]:
    """Broadcast query points to shape (M, P, d); return with the output shape."""
    x = check_vector(x, state.modes.dim, "x")
    m = state.batch_size
    if not state.batched:
        if x.ndim == 1:
            return x[None, None], (x.shape[-1],)
        return x.reshape(1, -1, x.shape[-1]), x.shape
    if x.ndim == 1:
        return np.broadcast_to(x, (m, 1, x.size)), (m, x.size)
    if x.ndim == 2:
        if x.shape[0] != m:
            raise ValueError(f"batched state expects points of shape ({m}, d)")
        return x[:, None, :], x.shape
    if x.shape[0] != m:
        raise ValueError("leading axis of x must match the batch")
    return x.reshape(m, -1, x.shape[-1]), x.shape


def _batched_amplitudes(state: FieldState):
    xi, eta = state.cos_amplitudes, state.sin_amplitudes
    if not state.batched:
        xi, eta = xi[None], eta[None]
    return xi, eta


def evaluate(state: FieldState, x) -> np.ndarray:
    """Velocity ``V(t, x)`` at the state's time.

    ``x`` may be one point ``(d,)`` or several ``(P, d)``; for a batched
    state it is ``(d,)`` (same point for all members), ``(M, d)`` or
    ``(M, P, d)``.
    """
    pts, out_shape = _as_points(state, x)
    modes = state.modes
    if modes.mode_count == 0:
        return np.zeros(out_shape)
    xi, eta = _batched_amplitudes(state)
    amp = modes.amplitude_scale()
    phase = pts @ modes.wavenumbers.T                       # (M, P, N)
    v = (np.einsum("mpn,mnd->mpd", np.cos(phase) * amp, xi)
         + np.einsum("mpn,mnd->mpd", np.sin(phase) * amp, eta))
    return v.reshape(out_shape)


def evaluate_divergence(state: FieldState, x) -> np.ndarray | float:
    """Analytic divergence of the synthesised field at ``x``."""
    pts, out_shape = _as_points(state, x)
    modes = state.modes
    shape = out_shape[:-1]
    if modes.mode_count == 0:
        return np.zeros(shape) if shape else 0.0
    xi, eta = _batched_amplitudes(state)
    amp = modes.amplitude_scale()
    k = modes.wavenumbers
    xi_k = np.einsum("mnd,nd->mn", xi, k)
    eta_k = np.einsum("mnd,nd->mn", eta, k)
    phase = pts @ k.T
    div = np.einsum("mpn,mn->mp", -np.sin(phase) * amp, xi_k) + np.einsum("mpn,mn->mp", np.cos(phase) * amp, eta_k)
    div = div.reshape(shape)
    return float(div) if div.ndim == 0 else div


def field_scale(state: FieldState) -> float:
    """``N^{-1/2} sum_j sqrt(w_j)(|xi_j| + |eta_j|)|k_j|``: bound on the divergence terms."""
    xi, eta = _batched_amplitudes(state)
    amp = state.modes.amplitude_scale() * state.modes.radii
    mags = np.linalg.norm(xi, axis=-1) + np.linalg.norm(eta, axis=-1)
    return float(np.max(mags @ amp)) if amp.size else 0.0
