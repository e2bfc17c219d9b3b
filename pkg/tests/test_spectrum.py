import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from drifttracer._validation import DomainError
from drifttracer.spectrum import (
    Regime,
    SpectrumParams,
    ZeroDriftError,
    classify,
    covariance,
    cutoff,
    params_from_config,
    params_to_config,
    spectral_density,
)


def hard(alpha, beta=0.3, dim=2, **kw):
    drift = (1.0,) + (0.0,) * (dim - 1)
    return SpectrumParams(alpha, beta, dim=dim, drift=drift, taper_width=0.0, **kw)


class TestParams:
    def test_default_taper_is_tenth_of_cutoff(self):
        p = SpectrumParams(0.3, 0.3, cutoff_radius=2.0)
        assert p.taper_width == pytest.approx(0.2)
        assert p.k_max == pytest.approx(2.2)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            SpectrumParams(alpha, 0.3)

    def test_zero_drift_rejected(self):
        with pytest.raises(ZeroDriftError, match="zero-drift"):
            SpectrumParams(0.3, 0.3, drift=(0.0, 0.0))

    def test_dimension_checked(self):
        with pytest.raises(ValueError):
            SpectrumParams(0.3, 0.3, dim=1, drift=(1.0,))
        with pytest.raises(ValueError):
            SpectrumParams(0.3, 0.3, dim=3, drift=(1.0, 0.0))

    def test_rotation_maps_e1_to_drift(self):
        p = SpectrumParams(0.3, 0.3, dim=3, drift=(1.0, 2.0, -2.0))
        q = p.rotation
        np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(q[:, 0], np.array([1.0, 2.0, -2.0]) / 3.0, atol=1e-14)

    def test_config_round_trip(self):
        p = SpectrumParams(0.45, 0.7, dim=3, drift=(0.5, 0.0, 1.0), cutoff_amplitude=2.0,
                           cutoff_radius=3.0, taper_width=0.25)
        assert params_from_config(params_to_config(p)) == p

    def test_config_from_strings(self):
        p = params_from_config({"alpha": "0.3", "beta": "0.3", "drift": "2, 0"})
        assert p.drift == (2.0, 0.0)
        with pytest.raises(KeyError):
            params_from_config({"alpha": 0.3})


class TestCutoff:
    p = SpectrumParams(0.3, 0.3, cutoff_amplitude=1.7, cutoff_radius=1.0, taper_width=0.5)

    def test_origin(self):
        assert cutoff(self.p, 0.0) == 1.7

    def test_compact_support(self):
        assert cutoff(self.p, 2.0) == 0.0

    def test_taper_midpoint(self):
        assert cutoff(self.p, 1.25) == pytest.approx(0.85, rel=1e-14)

    def test_monotone(self):
        r = np.linspace(0, 2, 401)
        assert np.all(np.diff(cutoff(self.p, r)) <= 0)

    def test_negative_radius(self):
        with pytest.raises(DomainError):
            cutoff(self.p, -1.0)


class TestSpectralDensity:
    def test_unit_example(self):
        p = SpectrumParams(0.5, 0.3, cutoff_radius=1.0)
        np.testing.assert_allclose(spectral_density(p, [1.0, 0.0]), np.diag([0.0, 1.0]), atol=1e-15)

    def test_origin_is_domain_error(self):
        with pytest.raises(DomainError):
            spectral_density(SpectrumParams(0.3, 0.3), [0.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(
        alpha=st.floats(0.05, 0.95),
        dim=st.sampled_from([2, 3]),
        k=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3),
    )
    def test_psd_symmetric_incompressible(self, alpha, dim, k):
        k = np.array(k[:dim])
        r = np.linalg.norm(k)
        if r < 1e-3:
            return
        p = SpectrumParams(alpha, 0.4, dim=dim, drift=(1.0,) + (0.0,) * (dim - 1))
        m = spectral_density(p, k)
        scale = max(np.abs(m).max(), 1e-300)
        np.testing.assert_allclose(m, m.T, atol=1e-15 * scale)
        assert np.linalg.norm(m @ k) <= 1e-13 * scale * r
        assert np.linalg.eigvalsh(m).min() >= -1e-13 * scale
        expected_trace = (dim - 1) * cutoff(p, r) / r ** (2 * alpha + dim - 2)
        assert np.trace(m) == pytest.approx(expected_trace, rel=1e-12, abs=1e-300)


class TestCovariance:
    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_trace_at_origin_closed_form(self, dim, alpha):
        p = hard(alpha, dim=dim, cutoff_radius=1.3)
        area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
        expected = (dim - 1) * area * 1.3 ** (2 - 2 * alpha) / (2 - 2 * alpha)
        r = covariance(p, 0.0, np.zeros(dim))
        assert np.trace(r) == pytest.approx(expected, rel=1e-6)
        np.testing.assert_allclose(r, np.eye(dim) * expected / dim, rtol=1e-6, atol=1e-12)

    def test_example_two_pi(self):
        r = covariance(hard(0.5), 0.0, [0.0, 0.0])
        assert np.trace(r) == pytest.approx(2 * math.pi, rel=1e-6)

    def test_against_polar_dblquad(self):
        # independent 2-D oracle: polar integral with scipy's adaptive cubature
        p = hard(0.4, beta=0.6)
        t, x = 0.7, np.array([0.9, -0.4])

        def entry(i, j):
            def f(phi, r):
                k = r * np.array([math.cos(phi), math.sin(phi)])
                proj = (i == j) - k[i] * k[j] / (r * r)
                return r ** (1 - 2 * 0.4) * math.cos(k @ x) * math.exp(-(r ** 1.2) * t) * proj
            return sp_integrate.dblquad(f, 0.0, 1.0, 0.0, 2 * math.pi, epsabs=1e-11, epsrel=1e-10)[0]

        oracle = np.array([[entry(i, j) for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(covariance(p, t, x), oracle, rtol=1e-5, atol=1e-7)

    def test_even_in_x_and_symmetric(self):
        p = SpectrumParams(0.3, 0.3, dim=3, drift=(1.0, 0.0, 0.0))
        x = np.array([0.3, 1.1, -0.5])
        a, b = covariance(p, 0.2, x), covariance(p, 0.2, -x)
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a, a.T, atol=1e-12)

    def test_bounded_by_origin(self):
        p = SpectrumParams(0.3, 0.3)
        r0 = covariance(p, 0.0, [0.0, 0.0])
        for t, x in [(0.5, [0.0, 0.0]), (0.0, [2.0, 1.0]), (1.0, [0.3, 0.3])]:
            r = covariance(p, t, x)
            assert np.all(np.abs(np.diag(r)) <= np.diag(r0) + 1e-9)

    def test_decays_in_time(self):
        p = SpectrumParams(0.3, 0.5)
        r = covariance(p, 1e4, [0.5, 0.0])
        assert np.abs(r).max() < 1e-3 * np.trace(covariance(p, 0.0, [0.0, 0.0]))


class TestClassify:
    def test_diffusive_beta_below_half(self):
        assert classify(SpectrumParams(0.3, 0.3)).regime is Regime.DIFFUSIVE

    def test_diffusive_beta_above_half(self):
        assert classify(SpectrumParams(0.4, 0.7)).regime is Regime.DIFFUSIVE

    def test_fbm_beta_below_half(self):
        rep = classify(SpectrumParams(0.8, 0.4))
        assert rep.regime is Regime.FRACTIONAL_BM
        assert rep.delta == pytest.approx(2 / 3, abs=1e-12)
        assert rep.hurst == pytest.approx(0.75, abs=1e-12)

    def test_fbm_beta_above_half(self):
        rep = classify(SpectrumParams(0.6, 0.6))
        assert rep.delta == pytest.approx(5 / 6, abs=1e-12)
        assert rep.hurst == pytest.approx(0.6, abs=1e-12)

    def test_out_of_scope(self):
        rep = classify(SpectrumParams(0.7, 0.8))
        assert rep.regime is Regime.OUT_OF_SCOPE
        assert "alpha+2beta<2" in rep.reason

    @pytest.mark.parametrize("alpha,beta", [(0.6, 0.4), (0.5, 0.7)])
    def test_boundary_is_fbm_with_flag(self, alpha, beta):
        rep = classify(SpectrumParams(alpha, beta))
        assert rep.regime is Regime.FRACTIONAL_BM and rep.boundary
        assert rep.delta == pytest.approx(1.0)

    def test_hurst_in_range_on_grid(self):
        grid = np.round(np.arange(0.1, 1.0, 0.1), 10)
        for a in grid:
            for b in grid:
                rep = classify(SpectrumParams(a, b))
                if rep.regime is Regime.FRACTIONAL_BM:
                    assert 0.5 <= rep.hurst < 1.0
                    assert rep.hurst == pytest.approx(1 / (2 * rep.delta), rel=1e-14)
