import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from trialadapt.errors import AccuracyWarning, InvalidInputError
from trialadapt.numerics import (
    QuadratureSpec,
    integrate_1d,
    integrate_2d_nested,
    make_rng,
    sample_normal,
    sample_uniform_choice,
)

INF = math.inf
SQRT2PI = math.sqrt(2 * math.pi)


class TestIntegrate1d:
    def test_exponential_half_line(self):
        value, err = integrate_1d(lambda z: np.exp(-z), QuadratureSpec(domain=(0, INF)))
        assert value == pytest.approx(1.0, abs=1e-8)

    def test_gaussian_second_moment(self):
        value, _ = integrate_1d(lambda z: z * z * np.exp(-z * z / 2) / SQRT2PI, QuadratureSpec())
        assert value == pytest.approx(1.0, abs=1e-8)

    def test_gaussian_first_moment_is_zero(self):
        value, _ = integrate_1d(lambda z: z * np.exp(-z * z / 2) / SQRT2PI, QuadratureSpec())
        assert value == pytest.approx(0.0, abs=1e-8)

    def test_left_infinite(self):
        value, _ = integrate_1d(lambda z: np.exp(z), QuadratureSpec(domain=(-INF, 0.0)))
        assert value == pytest.approx(1.0, abs=1e-8)

    def test_heavy_tail_not_truncated(self):
        # Student-t with 1 dof: a truncated integrator loses visible mass here.
        value, _ = integrate_1d(lambda z: stats.t.pdf(z, 1), QuadratureSpec())
        assert value == pytest.approx(1.0, abs=1e-6)

    def test_substitution_matches_finite_form(self):
        direct, _ = integrate_1d(lambda z: np.exp(-z), QuadratureSpec(domain=(0, INF)))
        # same integral after u = 1 - exp(-z): ∫_0^1 du
        mapped, _ = integrate_1d(lambda u: np.ones_like(u), QuadratureSpec(domain=(0.0, 1.0)))
        assert direct == pytest.approx(mapped, rel=1e-6)

    def test_endpoint_singularity(self):
        value, _ = integrate_1d(lambda z: 1 / np.sqrt(z), QuadratureSpec(domain=(0.0, 1.0)))
        assert value == pytest.approx(2.0, rel=1e-6)

    def test_vector_valued(self):
        res = integrate_1d(lambda z: np.vstack([np.exp(-z), z * np.exp(-z)]), QuadratureSpec(domain=(0, INF)))
        np.testing.assert_allclose(res.value, [1.0, 1.0], atol=1e-8)

    def test_error_bound_holds(self):
        spec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-8, domain=(-INF, INF))
        res = integrate_1d(lambda z: np.exp(-z * z), spec)
        assert res.converged
        assert res.error <= max(spec.abs_tol, spec.rel_tol * abs(res.value))
        assert abs(res.value - math.sqrt(math.pi)) <= 1e-8

    def test_non_convergence_flagged(self):
        spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-14, max_subdivisions=2, domain=(0.0, 1.0))
        with pytest.warns(AccuracyWarning):
            res = integrate_1d(lambda z: np.abs(np.sin(40 * z)), spec)
        assert not res.converged
        assert res.value == pytest.approx(integrate.quad(lambda z: abs(math.sin(40 * z)), 0, 1, limit=500)[0],
                                          rel=0.2)

    @given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-5, 5), st.floats(0.1, 6))
    @settings(max_examples=60, deadline=None)
    def test_polynomials_up_to_degree_five_exact(self, coefs, a, width):
        b = a + width
        poly = np.polynomial.Polynomial(coefs)
        exact = poly.integ()(b) - poly.integ()(a)
        value, _ = integrate_1d(poly, QuadratureSpec(domain=(a, b)))
        assert value == pytest.approx(exact, abs=1e-8 * max(1.0, abs(exact)))

    @pytest.mark.parametrize("bad", [dict(abs_tol=0), dict(rel_tol=-1), dict(max_subdivisions=0),
                                     dict(domain=(1.0, 1.0))])
    def test_spec_validation(self, bad):
        with pytest.raises(InvalidInputError):
            QuadratureSpec(**bad)


class TestIntegrate2d:
    def test_symmetric_normals(self):
        res = integrate_2d_nested(lambda x, y: stats.norm.pdf(x) * stats.norm.pdf(y), QuadratureSpec(),
                                  QuadratureSpec(), inner_bounds=lambda x: (-INF, x))
        assert res.value == pytest.approx(0.5, abs=1e-6)

    def test_shifted_normals(self):
        res = integrate_2d_nested(lambda x, y: stats.norm.pdf(x, 3) * stats.norm.pdf(y), QuadratureSpec(),
                                  QuadratureSpec(), inner_bounds=lambda x: (-INF, x))
        expected = stats.norm.cdf(3 / math.sqrt(2))
        assert expected == pytest.approx(0.98305, abs=1e-5)
        assert res.value == pytest.approx(expected, abs=1e-6)

    def test_unit_square(self):
        unit = QuadratureSpec(domain=(0.0, 1.0))
        res = integrate_2d_nested(lambda x, y: np.ones_like(y), unit, unit)
        assert res.value == pytest.approx(1.0, abs=1e-12)


class TestSampling:
    def test_zero_sd_returns_mean(self):
        assert sample_normal(make_rng(1), 0.37, 0.0) == 0.37
        np.testing.assert_array_equal(sample_normal(make_rng(1), 0.37, 0.0, size=4), np.full(4, 0.37))

    def test_negative_sd(self):
        with pytest.raises(InvalidInputError):
            sample_normal(make_rng(1), 0.0, -1.0)

    def test_seeded_streams_repeat(self):
        a = [sample_normal(make_rng(42), 0, 1, size=5), sample_uniform_choice(make_rng(42), range(100))]
        b = [sample_normal(make_rng(42), 0, 1, size=5), sample_uniform_choice(make_rng(42), range(100))]
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_clt_mean(self):
        n = 100_000
        x = sample_normal(make_rng(7), 0.02, 0.05, size=n)
        assert abs(x.mean() - 0.02) <= 3 * 0.05 / math.sqrt(n)

    def test_empty_choice(self):
        with pytest.raises(InvalidInputError):
            sample_uniform_choice(make_rng(0), [])

    def test_choice_uniform(self):
        rng = make_rng(3)
        counts = np.bincount([sample_uniform_choice(rng, [0, 1, 2, 3]) for _ in range(8000)], minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01
