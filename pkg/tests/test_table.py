import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedp.table import (DEFAULT_PROFILE, DomainSpec, ExperimentProfile, SparseTable,
                            TableFormatError, load_sparse_table, save_sparse_table, synth_table,
                            table_stats)


def test_load_flat_lines():
    t = load_sparse_table("3,5\n6,2\n", DomainSpec.flat(8))
    assert t.n == 2
    assert t.l1 == 7
    assert t.to_dict() == {3: 5, 6: 2}


def test_load_multi_attribute_row_major():
    t = load_sparse_table("2,1,9\n", DomainSpec((4, 3)))
    assert t.to_dict() == {7: 9}


def test_duplicates_are_summed():
    t = load_sparse_table("3,5\n3,5\n", DomainSpec.flat(8))
    assert t.to_dict() == {3: 10}
    buf = io.StringIO()
    save_sparse_table(t, buf)
    assert load_sparse_table(buf.getvalue()) == t


def test_comments_and_domain_header():
    text = '# {"cardinalities": [4, 3]}\n# a comment\n\n0,2,4\n'
    t = load_sparse_table(text)
    assert t.m == 12
    assert t.to_dict() == {2: 4}


@pytest.mark.parametrize("text, fragment", [
    ("3,5\n9,1\n", "line 2"),
    ("3,0\n", "positive"),
    ("3,-2\n", "positive"),
    ("3,x\n", "non-integer"),
    ("1,1,1\n", "expected 2 fields"),
])
def test_load_rejects_bad_lines(text, fragment):
    with pytest.raises(TableFormatError, match=fragment):
        load_sparse_table(text, DomainSpec.flat(8))


def test_load_needs_domain():
    with pytest.raises(TableFormatError):
        load_sparse_table("1,1\n")


def test_table_stats():
    assert table_stats(SparseTable(DomainSpec.flat(100), [], [])) == (0, 100, 0.0, 0)
    t = SparseTable.from_mapping(8, {3: 5, 6: 2})
    assert table_stats(t) == (2, 8, 0.25, 7)


def test_table_invariants_enforced():
    with pytest.raises(ValueError):
        SparseTable(DomainSpec.flat(4), [1, 1], [2, 3])
    with pytest.raises(ValueError):
        SparseTable(DomainSpec.flat(4), [5], [1])
    with pytest.raises(ValueError):
        SparseTable(DomainSpec.flat(4), [1], [0])


def test_sums_and_lookup():
    t = SparseTable.from_mapping(10, {1: 4, 5: 2, 9: 7})
    assert t.range_sum(0, 5) == 6
    assert t.range_sum(6, 8) == 0
    assert t.subset_sum([9, 1, 1, 3]) == 11
    assert t.get(5) == 2 and t.get(4) == 0
    np.testing.assert_array_equal(t.is_nonzero([0, 1, 9]), [False, True, True])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4).filter(lambda c: np.prod(c) <= 10**4))
def test_linearize_delinearize_exhaustive(cards):
    dom = DomainSpec(tuple(cards))
    flat = np.arange(dom.m)
    multi = dom.delinearize(flat)
    np.testing.assert_array_equal(dom.linearize(multi.reshape(dom.m, dom.ndim)), flat)


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.integers(0, 499), st.integers(1, 1000), max_size=60))
def test_save_load_round_trip(cells):
    t = SparseTable.from_mapping(500, cells)
    buf = io.StringIO()
    save_sparse_table(t, buf)
    assert load_sparse_table(buf.getvalue()) == t


def test_synth_default_profile():
    t = synth_table(DEFAULT_PROFILE)
    assert t.n == 100_000 and t.m == 10**6
    assert t.density == 0.1
    assert 99 <= t.counts.mean() <= 101


def test_synth_degenerate_full_table():
    t = synth_table(ExperimentProfile(m=50, rho=1.0, mu=5, sigma=0))
    np.testing.assert_array_equal(t.to_dense(), np.full(50, 5))


def test_synth_clamps_to_one():
    t = synth_table(ExperimentProfile(m=5000, rho=0.5, mu=1, sigma=20, seed=2))
    assert t.counts.min() >= 1


def test_synth_reproducible_and_skewed_block():
    p = ExperimentProfile(m=10**5, rho=0.01, placement="skewed", seed=9)
    a, b = synth_table(p), synth_table(p)
    assert a == b
    assert a.indices[-1] - a.indices[0] < 2 * a.n


def test_profile_validation():
    with pytest.raises(ValueError):
        ExperimentProfile(rho=0)
    with pytest.raises(ValueError):
        ExperimentProfile(mu=0)
    with pytest.raises(ValueError):
        ExperimentProfile(sigma=-1)
