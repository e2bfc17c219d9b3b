import json
import math

import numpy as np
import pytest

from drifttracer.field import ModeSet, evaluate, init_state, sample_modes
from drifttracer.rng import path_streams
from drifttracer.spectrum import SpectrumParams
from drifttracer.theory import ballistic_msd, quenched_ballistic_msd
from drifttracer.tracer import (
    Mode,
    StepResolutionError,
    TracerConfig,
    Trajectory,
    ballistic_line,
    integrate,
    rescale,
)

P = SpectrumParams(0.3, 0.3)


def endpoint_rms(a, b):
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))


class TestConfig:
    def test_defaults(self):
        c = TracerConfig()
        assert c.mode is Mode.FULL and c.steps == 10

    def test_stride_caps_stored_points(self):
        c = TracerConfig(horizon=1000.0, dt=0.01)
        assert math.ceil(c.steps / c.stride()) + 1 <= 4096

    @pytest.mark.parametrize("kw", [dict(epsilon=1.5), dict(dt=0.0), dict(horizon=0.01, dt=0.1),
                                    dict(scheme="rk4"), dict(grid=(1.0, 0.5)), dict(field_substeps=0),
                                    dict(mode="Other")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TracerConfig(**kw)


class TestIntegrate:
    def test_zero_epsilon_is_pure_drift(self):
        modes = sample_modes(P, 64, rng=0)
        st = init_state(modes, rng=[1, 2], batch=2)
        tr = integrate(st, P, TracerConfig(epsilon=0.0, horizon=5.0, dt=0.05))
        np.testing.assert_array_equal(tr.fluctuation, 0.0)
        np.testing.assert_allclose(tr.positions, np.broadcast_to(tr.times[:, None] * P.velocity, tr.positions.shape),
                                   rtol=0, atol=0)

    def test_molecular_diffusion_only(self):
        n, kappa, T = 4000, 0.3, 2.0
        st = init_state(ModeSet.empty(2), rng=list(range(n)), batch=n)
        tr = integrate(st, P, TracerConfig(epsilon=1.0, horizon=T, dt=0.1, kappa=kappa))
        sq = np.sum(tr.fluctuation[:, -1] ** 2, axis=-1)
        se = sq.std(ddof=1) / math.sqrt(n)
        assert abs(sq.mean() - 2 * 2 * kappa * T) < 3 * se

    def test_drift_removal_exact(self):
        modes = sample_modes(P, 64, rng=0)
        tr = integrate(init_state(modes, rng=3), P, TracerConfig(horizon=3.0, dt=0.05))
        assert np.max(np.abs(tr.fluctuation - (tr.positions - tr.times[:, None] * tr.drift))) == 0.0

    def test_state_not_modified(self):
        modes = sample_modes(P, 64, rng=0)
        st = init_state(modes, rng=3)
        before = st.cos_amplitudes.copy()
        integrate(st, P, TracerConfig(horizon=1.0, dt=0.05))
        np.testing.assert_array_equal(st.cos_amplitudes, before)

    def test_first_step_uses_field(self):
        # one Heun step with a frozen-in-time single mode reproduces the hand calculation
        m = ModeSet(np.array([[0.0, 1.0]]), [1.0], [1e-24])
        st = init_state(m, rng=0)
        dt, eps = 0.01, 0.5
        tr = integrate(st, P, TracerConfig(epsilon=eps, horizon=dt, dt=dt))
        v0 = evaluate(st, [0.0, 0.0])
        pred = eps * dt * v0
        v1 = evaluate(st, pred + P.velocity * dt)
        np.testing.assert_allclose(tr.fluctuation[-1], 0.5 * dt * eps * (v0 + v1), rtol=1e-8, atol=1e-15)

    def test_step_guard(self):
        modes = sample_modes(P, 64, rng=0)
        with pytest.raises(StepResolutionError):
            integrate(init_state(modes, rng=0), P, TracerConfig(horizon=10.0, dt=1.0))

    def test_self_convergence(self):
        # runs at dt, dt/2, dt/4, dt/8 share the field noise through field_substeps
        params = SpectrumParams(0.8, 0.4)
        modes = sample_modes(params, 128, rng=1)
        ends = []
        for level in range(4):
            st = init_state(modes, path_streams(3, range(20)), batch=20)
            cfg = TracerConfig(epsilon=0.1, horizon=10.0, dt=0.08 / 2 ** level, field_substeps=2 ** (3 - level))
            ends.append(integrate(st, params, cfg).fluctuation[:, -1])
        diffs = [endpoint_rms(ends[i], ends[i + 1]) for i in range(3)]
        ratios = [diffs[i] / diffs[i + 1] for i in range(2)]
        # the OU amplitudes are rough in time, which limits Heun to first order globally
        assert all(r > 1.6 for r in ratios), ratios

    def test_batch_member_matches_single_run(self):
        modes = sample_modes(P, 64, rng=0)
        cfg = TracerConfig(horizon=2.0, dt=0.05, kappa=0.1)
        full = integrate(init_state(modes, path_streams(4, range(3)), batch=3), P, cfg)
        one = integrate(init_state(modes, path_streams(4, [1]), batch=1), P, cfg)
        np.testing.assert_array_equal(full.positions[1], one.positions[0])


class TestBallisticLine:
    cfg = TracerConfig(mode="BallisticLine", horizon=20.0, dt=0.05)

    def test_zero_field(self):
        st = init_state(ModeSet.empty(2), rng=0)
        tr = ballistic_line(st, P, self.cfg)
        np.testing.assert_array_equal(tr.fluctuation, 0.0)

    def test_short_time(self):
        # E|Z(h)|^2 ~ tr R_N(0, 0) h^2 with tr R_N(0, 0) = (1/N) sum_j w_j for the mode set
        modes = sample_modes(P, 64, rng=0)
        n, h = 4000, 1e-4
        st = init_state(modes, rng=list(range(n)), batch=n)
        tr = ballistic_line(st, P, TracerConfig(mode="BallisticLine", horizon=h, dt=h))
        sq = np.sum(tr.fluctuation[:, -1] ** 2, axis=-1) / h ** 2
        se = sq.std(ddof=1) / math.sqrt(n)
        assert abs(sq.mean() - modes.weights.mean()) < 3 * se
        v0 = evaluate(st, [0.0, 0.0])
        np.testing.assert_allclose(tr.fluctuation[:, -1], v0 * h, rtol=0.05, atol=0.05 * h)

    def test_needs_ballistic_mode(self):
        with pytest.raises(ValueError):
            ballistic_line(init_state(ModeSet.empty(2), rng=0), P, TracerConfig())

    @pytest.mark.parametrize("scheme", ["trapezoid", "exact"])
    def test_matches_quenched_oracle(self, scheme):
        params = SpectrumParams(0.8, 0.4)
        modes = sample_modes(params, 128, rng=2)
        n, T = 800, 20.0
        cfg = TracerConfig(mode="BallisticLine", horizon=T, dt=0.05, scheme=scheme,
                           grid=(5.0, 10.0, 20.0) if scheme == "exact" else None)
        tr = ballistic_line(init_state(modes, path_streams(8, range(n)), batch=n), params, cfg)
        sq = np.sum(tr.fluctuation[:, -1] ** 2, axis=-1)
        se = sq.std(ddof=1) / math.sqrt(n)
        oracle = np.trace(quenched_ballistic_msd(modes, params.velocity, T))
        assert abs(sq.mean() - oracle) < 3.5 * se

    def test_exact_scheme_against_nested_quadrature(self):
        # independent mode sets per chunk, so the target is the spectral MSD itself
        params = SpectrumParams(0.6, 0.6)
        T = 30.0
        cfg = TracerConfig(mode="BallisticLine", horizon=T, dt=1.0, scheme="exact", grid=(T,))
        sq = []
        for s in range(40):
            modes = sample_modes(params, 256, rng=100 + s)
            tr = ballistic_line(init_state(modes, path_streams(s, range(50)), batch=50), params, cfg)
            sq.append(np.sum(tr.fluctuation[:, -1] ** 2, axis=-1))
        sq = np.concatenate(sq)
        chunk_means = sq.reshape(40, 50).mean(axis=1)
        se = chunk_means.std(ddof=1) / math.sqrt(40)
        oracle = np.trace(ballistic_msd(params, T).value)
        assert abs(sq.mean() - oracle) < 3.5 * se

    def test_exact_scheme_any_grid(self):
        modes = sample_modes(P, 64, rng=0)
        cfg = TracerConfig(mode="BallisticLine", horizon=1000.0, dt=1000.0, scheme="exact",
                           grid=tuple(np.geomspace(1, 1000, 7)))
        tr = ballistic_line(init_state(modes, rng=1), P, cfg)
        assert tr.times.size == 8 and tr.times[0] == 0.0
        assert np.all(np.isfinite(tr.positions))

    def test_trapezoid_guard(self):
        modes = sample_modes(P, 64, rng=0)
        with pytest.raises(StepResolutionError):
            ballistic_line(init_state(modes, rng=0), P,
                           TracerConfig(mode="BallisticLine", horizon=10.0, dt=1.0))


class TestRescale:
    def make(self):
        t = np.linspace(0, 100, 1001)
        z = np.stack([np.sin(t), t ** 0.5], axis=1)
        return Trajectory.from_fluctuation(t, z, [1.0, 0.0])

    def test_identity(self):
        tr = self.make()
        out = rescale(tr, 1.0, 1.0, tr.times)
        np.testing.assert_allclose(out.fluctuation, tr.fluctuation, atol=1e-12)

    def test_zero_path(self):
        t = np.linspace(0, 10, 11)
        tr = Trajectory.from_fluctuation(t, np.zeros((11, 2)), [1.0, 0.0])
        np.testing.assert_array_equal(rescale(tr, 0.5, 1.0, [0.5, 1.0]).fluctuation, 0.0)

    def test_halving_epsilon_quadruples_source_time(self):
        tr = self.make()
        grid = np.array([0.5, 1.0, 2.0])
        a = rescale(tr, 0.5, 1.0, grid).fluctuation
        b = rescale(tr, 0.25, 1.0, grid).fluctuation
        np.testing.assert_allclose(a, tr.fluctuation[np.searchsorted(tr.times, 4 * grid)], atol=1e-12)
        np.testing.assert_allclose(b, tr.fluctuation[np.searchsorted(tr.times, 16 * grid)], atol=1e-12)

    def test_beyond_coverage(self):
        with pytest.raises(ValueError):
            rescale(self.make(), 0.1, 1.0, [2.0])

    def test_metadata(self):
        out = rescale(self.make(), 0.5, 0.75, [1.0])
        assert out.metadata["rescale_delta"] == 0.75


class TestOutput:
    def test_csv_and_metadata(self, tmp_path):
        modes = sample_modes(P, 32, rng=0)
        tr = integrate(init_state(modes, rng=0), P, TracerConfig(horizon=1.0, dt=0.05))
        tr.to_csv(tmp_path / "t.csv")
        tr.write_metadata(tmp_path / "t.json")
        data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 0], tr.times)
        np.testing.assert_array_equal(data[:, 1:3], tr.positions)
        np.testing.assert_array_equal(data[:, 3:5], tr.fluctuation)
        assert json.loads((tmp_path / "t.json").read_text())["mode"] == "FullTrajectory"

    def test_deterministic(self, tmp_path):
        modes = sample_modes(P, 32, rng=0)
        cfg = TracerConfig(horizon=2.0, dt=0.05, kappa=0.05)
        for name in ("a", "b"):
            integrate(init_state(modes, rng=9), P, cfg).to_csv(tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
