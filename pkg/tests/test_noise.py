import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sparsedp.noise import (NoiseSpec, RngHandle, clamp_nonnegative, geom_abs_mean, geom_pmf,
                            geom_variance, sample_binomial, sample_geometric)
from sparsedp.summary import Summary

# E|X| and Var X at alpha = e^-0.1, frozen from direct summation over |x| <= 2000
ABS_MEAN_E01 = 9.983352757296096
VARIANCE_E01 = 199.83341663360915


def spec_for_alpha(alpha):
    return NoiseSpec(-math.log(alpha))


def test_alpha_full_precision():
    spec = NoiseSpec(0.1, 3)
    assert spec.alpha == math.exp(-0.1 / 3)
    assert spec.scaled(2).sensitivity == 6


@pytest.mark.parametrize("eps, sens", [(0, 1), (-1, 1), (1, 0), (1, 1.5)])
def test_noise_spec_validation(eps, sens):
    with pytest.raises(ValueError):
        NoiseSpec(eps, sens)


def test_pmf_at_zero():
    assert geom_pmf(spec_for_alpha(0.5), 0) == pytest.approx(1 / 3, abs=1e-15)


def test_pmf_normalizes():
    x = np.arange(-60, 61)
    assert geom_pmf(spec_for_alpha(0.5), x).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 500))
def test_pmf_symmetric(alpha, x):
    spec = spec_for_alpha(alpha)
    assert geom_pmf(spec, x) == geom_pmf(spec, -x)


def test_moments_match_summation():
    spec = NoiseSpec(0.1)
    assert geom_abs_mean(spec) == pytest.approx(ABS_MEAN_E01, rel=1e-12)
    assert geom_variance(spec) == pytest.approx(VARIANCE_E01, rel=1e-12)


def test_sample_abs_mean_and_zero_rate():
    spec = NoiseSpec(0.1)
    x = sample_geometric(spec, np.random.default_rng(0), 10**6)
    mag = np.abs(x)
    se = mag.std() / math.sqrt(x.size)
    assert abs(mag.mean() - ABS_MEAN_E01) < 4 * se
    p0 = geom_pmf(spec, 0)
    zero = (x == 0).mean()
    assert abs(zero - p0) < 4 * math.sqrt(p0 * (1 - p0) / x.size)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.905])
def test_sampler_chi_square(alpha):
    spec = spec_for_alpha(alpha)
    x = sample_geometric(spec, np.random.default_rng(11), 200_000)
    # bins: each integer up to where expected counts stay >= 20, tails pooled
    k = 0
    while 200_000 * geom_pmf(spec, k + 1) >= 20:
        k += 1
    edges = np.arange(-k, k + 1)
    obs = np.array([(x < -k + 1).sum()] + [(x == v).sum() for v in edges[1:-1]] + [(x >= k).sum()])
    p = geom_pmf(spec, edges[1:-1])
    tail = (1 - p.sum()) / 2
    exp = 200_000 * np.concatenate([[tail], p, [tail]])
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_sampler_deterministic():
    spec = NoiseSpec(0.3)
    a = sample_geometric(spec, np.random.default_rng(4), 100)
    b = sample_geometric(spec, np.random.default_rng(4), 100)
    np.testing.assert_array_equal(a, b)
    assert isinstance(sample_geometric(spec, np.random.default_rng(4)), int)


def test_sampler_magnitude_cap():
    spec = NoiseSpec(1e-3)
    x = sample_geometric(spec, np.random.default_rng(0), 10_000)
    assert np.abs(x).max() <= spec.max_magnitude


def test_binomial_degenerate(rng):
    assert sample_binomial(100, 0.0, rng) == 0
    assert sample_binomial(100, 1.0, rng) == 100
    assert sample_binomial(0, 0.4, rng) == 0
    with pytest.raises(ValueError):
        sample_binomial(10, 1.5, rng)


def test_binomial_moments():
    rng = np.random.default_rng(8)
    trials, p = 10**6 - 10**5, 0.0096
    draws = np.array([sample_binomial(trials, p, rng) for _ in range(10_000)])
    mean = trials * p
    var = trials * p * (1 - p)
    assert abs(draws.mean() - mean) < 4 * math.sqrt(var / draws.size)
    # Var of the sample variance is about 2 var^2 / N for a near-normal law
    assert abs(draws.var() - var) < 4 * var * math.sqrt(2 / draws.size)


def test_binomial_matches_exact_pmf():
    rng = np.random.default_rng(21)
    draws = np.array([sample_binomial(20, 0.3, rng) for _ in range(100_000)])
    pmf = stats.binom.pmf(np.arange(21), 20, 0.3)
    obs = np.bincount(draws, minlength=21)
    keep = pmf * draws.size >= 5
    obs = np.append(obs[keep], obs[~keep].sum())
    exp = np.append(pmf[keep], pmf[~keep].sum()) * draws.size
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_clamp_values():
    assert clamp_nonnegative(-3) == 0
    assert clamp_nonnegative(7) == 7
    np.testing.assert_array_equal(clamp_nonnegative(np.array([-1, 2])), [0, 2])


def test_clamp_summary_drops_nonpositive():
    s = Summary.build([1, 4], [-2, 5], "filter2", NoiseSpec(1), 8, {"theta": 1})
    c = clamp_nonnegative(s)
    assert [tuple(e)[:2] for e in c] == [(4, 5)]
    assert clamp_nonnegative(c).equals(c)


def test_rng_streams():
    h = RngHandle(7)
    a = h.stream("anonymize").integers(0, 10**9, 5)
    b = RngHandle(7).stream("anonymize").integers(0, 10**9, 5)
    c = h.stream("other").integers(0, 10**9, 5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert h.spawn("x").seed == RngHandle(7).spawn("x").seed
