import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import mp_ncdf, mp_nquantile
from qbvine.numerics import (build_inverse_cdf, cauchy_cdf, cauchy_quantile, inverse_cdf_from_knots,
                             inverse_eval, open_uniform, std_normal_cdf, std_normal_quantile)


def test_normal_cdf_values():
    assert std_normal_cdf(0.0) == 0.5
    assert abs(std_normal_cdf(1.959964) - 0.975) < 1e-6
    assert std_normal_cdf(-40.0) < 1e-300


@pytest.mark.parametrize("x", [-8.0, -3.3, -1.0, -0.2, 0.0, 0.7, 2.5, 6.0])
def test_normal_cdf_against_mpmath(x):
    assert abs(std_normal_cdf(x) - mp_ncdf(x)) <= 1e-12


def test_normal_quantile_values():
    assert std_normal_quantile(0.5) == 0.0
    assert abs(std_normal_quantile(0.975) - 1.959964) < 1e-5
    assert abs(std_normal_quantile(0.975) - mp_nquantile(0.975)) < 1e-12


def test_normal_quantile_roundtrip():
    x = np.linspace(-6, 6, 241)
    np.testing.assert_allclose(std_normal_quantile(std_normal_cdf(x)), x, atol=1e-8)
    p = np.linspace(1e-6, 1 - 1e-6, 101)
    np.testing.assert_allclose(std_normal_cdf(std_normal_quantile(p)), p, atol=1e-10)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_normal_quantile_rejects_outside(p):
    with pytest.raises(ValueError):
        std_normal_quantile(p)


def test_cauchy():
    assert cauchy_cdf(0, 0, 1) == 0.5
    assert abs(cauchy_cdf(1, 0, 1) - 0.75) < 1e-15
    assert abs(cauchy_quantile(0.75, 0, 1) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        cauchy_cdf(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        cauchy_quantile(0.5, 0.0, -1.0)


def test_inverse_identity_cdf():
    m = build_inverse_cdf(lambda y: y, 0.0, 1.0, 0.0, K=2)
    assert inverse_eval(m, 0.5) == pytest.approx(0.5, abs=1e-15)


def test_inverse_from_knots_midpoint():
    m = inverse_cdf_from_knots([0.0, 2.0, 4.0], [0.0, 0.5, 1.0])
    assert inverse_eval(m, 0.75) == 3.0
    assert inverse_eval(m, 0.5) == 2.0
    assert inverse_eval(m, 0.25) == 1.0


def test_inverse_cauchy_quantile():
    m = build_inverse_cdf(cauchy_cdf, -10.0, 10.0, 10.0, K=512)
    assert abs(inverse_eval(m, 0.75) - 1.0) < 0.05


def test_inverse_knot_hits_and_endpoints():
    m = build_inverse_cdf(std_normal_cdf, -4.0, 4.0, 1.0, K=64)
    for y, c in m.knots[1:-1]:
        assert inverse_eval(m, c) == y
    assert m.c[0] == 0.0 and m.c[-1] == 1.0
    assert inverse_eval(m, 1e-300) == pytest.approx(m.y[0], abs=1e-12)
    assert inverse_eval(m, 1 - 2**-53) == pytest.approx(m.y[-1], abs=1e-9)


def test_inverse_sampling_ks():
    m = build_inverse_cdf(std_normal_cdf, -4.0, 4.0, 3.0, K=512)
    draws = inverse_eval(m, open_uniform(np.random.default_rng(0), 10_000))
    assert stats.kstest(draws, "norm").statistic < 0.05


def test_flat_regions_keep_leftmost():
    m = inverse_cdf_from_knots([0.0, 1.0, 2.0, 3.0, 4.0], [0.0, 0.5, 0.5, 0.5, 1.0])
    np.testing.assert_array_equal(m.y, [0.0, 1.0, 4.0])
    assert inverse_eval(m, 0.5) == 1.0
    assert inverse_eval(m, 0.5 + 1e-12) > 1.0 + 5e-12  # jumps over the flat run


def test_build_rejects_decreasing_cdf():
    with pytest.raises(ValueError, match="decreasing"):
        build_inverse_cdf(lambda y: 1.0 - std_normal_cdf(y), -1.0, 1.0, 0.5, K=16)


@pytest.mark.parametrize("c", [0.0, 1.0, -1.0])
def test_inverse_eval_rejects_boundary(c):
    m = inverse_cdf_from_knots([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        inverse_eval(m, c)


@settings(max_examples=30, deadline=None)
@given(loc=st.floats(-5, 5), scale=st.floats(0.1, 3), K=st.integers(256, 600))
def test_inverse_monotone_and_sup_error(loc, scale, K):
    F = lambda y: cauchy_cdf(y, loc, scale)
    m = build_inverse_cdf(F, loc - 20 * scale, loc + 20 * scale, 5 * scale, K)
    c = np.linspace(1e-6, 1 - 1e-6, 2001)
    assert np.all(np.diff(inverse_eval(m, c)) >= 0)
    draws = np.sort(inverse_eval(m, open_uniform(np.random.default_rng(K), 10_000)))
    ecdf = np.arange(1, draws.size + 1) / draws.size
    assert np.max(np.abs(ecdf - F(draws))) < 0.05


def test_serialisation_roundtrip():
    m = build_inverse_cdf(std_normal_cdf, -3.0, 3.0, 1.0, K=32)
    m2 = type(m).from_dict(m.to_dict())
    np.testing.assert_array_equal(m.y, m2.y)
    np.testing.assert_array_equal(m.c, m2.c)
