import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedp.harness import (BenchReport, EquivalenceReport, bench_throughput, brute_probability,
                              chi2_homogeneity, equivalence_test, merged_histogram,
                              mutated_summarize, oracle_support_bound, parse_config, rows_to_csv,
                              run_experiment, with_retry)
from sparsedp.noise import NoiseSpec
from sparsedp.summarizers import inclusion_probability


def alpha_spec(alpha):
    return NoiseSpec(-math.log(alpha))


def test_oracle_examples():
    assert brute_probability("threshold", alpha_spec(0.5), 0, 1).inclusion == pytest.approx(2 / 3, abs=1e-9)
    assert brute_probability("filter1", alpha_spec(0.5), 2).inclusion == pytest.approx(1 / 6, abs=1e-9)


def test_oracle_combined_theta_zero_is_threshold():
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = alpha_spec(rng.uniform(0.05, 0.95))
        tau = int(rng.integers(1, 60))
        a = brute_probability("combined", spec, 0, tau)
        b = brute_probability("threshold", spec, 0, tau)
        assert a.inclusion == pytest.approx(b.inclusion, abs=1e-12)
        np.testing.assert_allclose(a.pmf, b.pmf, atol=1e-12)


def test_oracle_pmf_normalized_and_support():
    b = brute_probability("filter2", alpha_spec(0.5), 3)
    assert b.pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(b.pmf[np.abs(b.support) < 3] == 0)
    assert b.cdf(-10**6) == 0.0 and b.cdf(10**6) == pytest.approx(1.0)


def test_support_bound_meets_tail():
    for a in (0.1, 0.5, math.exp(-0.1)):
        k = oracle_support_bound(a)
        assert 2 * a ** (k + 1) / ((1 + a) * (1 - a)) < 1e-12
        assert 2 * a**k / ((1 + a) * (1 - a)) >= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=300),
       st.lists(st.integers(0, 30), min_size=1, max_size=300))
def test_merged_histogram_conserves_counts(a, b):
    h = merged_histogram(np.array(a), np.array(b))
    assert h.sum(axis=1).tolist() == [len(a), len(b)]
    if h.shape[1] > 1:
        assert h.sum(axis=0).min() >= 20


def test_chi2_identical_samples():
    x = np.random.default_rng(0).poisson(30, 5000)
    assert chi2_homogeneity(x, x) == pytest.approx(1.0)
    assert chi2_homogeneity([1, 1, 1], [1, 1]) == 1.0


def test_equivalence_passes_and_mutant_fails(small_table, spec_half):
    rng = np.random.default_rng(1)
    rep = equivalence_test(small_table, "filter2", {"theta": 3}, spec_half, 1500, rng)
    assert isinstance(rep, EquivalenceReport)
    assert rep.passed(), rep.format()
    assert all(0 <= p <= 1 for p in rep.pvalues.values())
    bad = equivalence_test(small_table, "filter2", {"theta": 3}, spec_half, 1500, rng,
                           shortcut=mutated_summarize(1.2))
    assert bad.chi2_pvalue < 1e-6
    assert not bad.passed()


def test_mutation_is_scoped(spec_half):
    mutated_summarize(1.2)
    assert inclusion_probability("filter2", spec_half, 3) == pytest.approx(
        2 * spec_half.alpha**3 / (1 + spec_half.alpha))


def test_equivalence_priority_reports_tau(small_table, spec_half):
    rep = equivalence_test(small_table, "priority", {"s": 128}, spec_half, 300,
                           np.random.default_rng(2))
    assert rep.statistic == "upgraded_zeros"
    assert rep.tau_ks_pvalue is not None


def test_with_retry():
    calls = []

    def check(seed):
        calls.append(seed)
        return seed == 2

    assert with_retry(check, [1, 2, 3])
    assert calls == [1, 2]
    assert not with_retry(lambda s: False, [1, 2])


def test_bench_report_throughput():
    r = BenchReport("filter2", "shortcut", 10**6, 10**4, 0.01, 123)
    assert r.throughput == pytest.approx(10**6)


def test_bench_output_sizes_deterministic():
    def run():
        return [r.output_size for r in bench_throughput(
            ["filter2", "threshold", "priority"], [20_000], 500, NoiseSpec(0.5),
            np.random.default_rng(4), repeats=1)]

    assert run() == run()


def test_priority_slower_than_threshold():
    reps = bench_throughput(["threshold", "priority"], [10**6], 10**4, NoiseSpec(0.1),
                            np.random.default_rng(0), target=2 * 10**4, repeats=5)
    t = {r.method: r.seconds for r in reps}
    sizes = {r.method: r.output_size for r in reps}
    assert 0.5 < sizes["threshold"] / sizes["priority"] < 2
    assert t["priority"] > t["threshold"]


def test_parse_config():
    cfg = parse_config("experiment = dyadic\n# note\nm = 1e6\nquery_sizes = 10, 100\neps=0.5\n")
    assert cfg == {"experiment": "dyadic", "m": 10**6, "query_sizes": [10, 100], "eps": 0.5}
    with pytest.raises(ValueError, match="line 1"):
        parse_config("nonsense\n")


SMALL = {"m": 20_000, "rho": 0.05, "epsilon": 0.5, "queries": 5, "query_sizes": [200, 2000]}


@pytest.mark.parametrize("extra", [
    {"experiment": "error-vs-size", "methods": ["filter2", "threshold", "priority"], "sizes": [2000]},
    {"experiment": "filter-sided", "thetas": [5, 10]},
    {"experiment": "error-vs-query-size", "methods": ["filter-priority"], "target": 1500,
     "query_kind": "subset"},
    {"experiment": "subset-vs-geometric", "theta": 5, "s": 1000},
    {"experiment": "dyadic"},
    {"experiment": "consistency", "theta": 20, "placement": "skewed"},
    {"experiment": "throughput", "methods": ["filter2"], "m_grid": [10_000, 20_000], "n": 200,
     "paths": ["shortcut", "laborious"], "repeats": 1},
])
def test_run_experiment_families(extra):
    rows = run_experiment({**SMALL, **extra, "reps": 2})
    assert rows
    assert {r["rep"] for r in rows} == {0, 1}
    text = rows_to_csv(rows)
    assert len(text.splitlines()) == len(rows) + 1


def test_run_experiment_unknown():
    with pytest.raises(ValueError):
        run_experiment({**SMALL, "experiment": "nope"})


def test_filter_sided_two_sided_not_worse():
    rows = run_experiment({"experiment": "filter-sided", "m": 10**5, "rho": 0.1, "epsilon": 0.1,
                           "thetas": [20, 30, 40], "query_sizes": [500], "queries": 40,
                           "reps": 2, "seed": 1})
    wins = 0
    for rep in (0, 1):
        for theta in (20, 30, 40):
            err = {r["method"]: r["median_rel_error"] for r in rows
                   if r["rep"] == rep and r["theta"] == theta}
            wins += err["filter2"] <= err["filter1"]
    assert wins >= 4
