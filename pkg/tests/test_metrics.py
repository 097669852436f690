import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaca.metrics import (
    PairedSeries,
    UndefinedCorrelation,
    _count_inversions,
    average_ranks,
    cell_level,
    grid_level,
    kendall,
    kendall_bruteforce,
    pearson,
    report,
    spearman,
)


def pearson_oracle(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    return cov / math.sqrt(math.fsum((a - mx) ** 2 for a in x) * math.fsum((b - my) ** 2 for b in y))


def rank_oracle(v):
    # rank of v_i = 1 + #smaller + (#equal - 1) / 2
    v = list(v)
    return [1 + sum(w < x for w in v) + (sum(w == x for w in v) - 1) / 2 for x in v]


def test_pearson_examples():
    assert pearson([1, 2, 3], [1, 2, 3]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)


def test_spearman_examples():
    x = np.array([0.1, 0.5, 2.0, 3.0, 9.0])
    assert spearman(x, np.exp(x)) == 1.0
    assert spearman(x, -x) == -1.0
    x, y = [1, 2, 2, 3], [1, 2, 3, 4]
    assert spearman(x, y) == pytest.approx(pearson_oracle(rank_oracle(x), rank_oracle(y)), abs=1e-12)


def test_kendall_examples():
    assert kendall([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert kendall([4, 1, 7], [4, 1, 7]) == 1.0
    x = np.arange(10.0)
    assert kendall(x, -x) == -1.0


def test_kendall_tau_a_with_ties_below_one():
    x = [1, 1, 2, 3]
    assert kendall(x, x) == pytest.approx(5 / 6)
    assert kendall(x, x, variant="b") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        kendall(x, x, variant="c")


@given(data=st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=60))
@settings(max_examples=200, deadline=None)
def test_kendall_fast_path_equals_bruteforce(data):
    x, y = (np.array(v, float) for v in zip(*data))
    if np.all(x == x[0]) or np.all(y == y[0]):
        with pytest.raises(UndefinedCorrelation):
            kendall(x, y)
        return
    assert kendall(x, y) == kendall_bruteforce(x, y)


def test_count_inversions_small_permutations():
    for perm in itertools.permutations(range(5)):
        brute = sum(perm[i] > perm[j] for i in range(5) for j in range(i + 1, 5))
        assert _count_inversions(np.array(perm)) == brute


@given(v=st.lists(st.integers(-3, 3), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_average_ranks_oracle(v):
    np.testing.assert_array_equal(average_ranks(v), rank_oracle(v))


@given(seed=st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_invariances_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=30), rng.normal(size=30)
    a, b = rng.uniform(0.1, 5), rng.normal()
    assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-12
    assert abs(spearman(np.exp(x), y) - spearman(x, y)) <= 1e-12
    assert abs(kendall(x**3 + 2 * x, y) - kendall(x, y)) <= 1e-12
    for m in (pearson, spearman, kendall):
        assert abs(m(x, y) - m(y, x)) <= 1e-15


def test_constant_series_raise():
    for m in (pearson, spearman, kendall):
        with pytest.raises(UndefinedCorrelation):
            m([1, 1, 1], [1, 2, 3])
    rec = report(PairedSeries([2, 2], [1, 2]), "grid")
    assert math.isnan(rec["pearson"]) and rec["n"] == 2


def test_paired_series_validation():
    with pytest.raises(ValueError):
        PairedSeries([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        PairedSeries([1], [1])
    with pytest.raises(ValueError):
        PairedSeries([1, np.nan], [1, 2])


def test_cell_level_rules():
    pred = np.arange(4.0).reshape(2, 2)
    truth = pred[::-1] * 2
    one_each = cell_level(pred, truth, [3, 1, 0, 2])
    g = grid_level(pred, truth)
    assert sorted(zip(one_each.x, one_each.y)) == sorted(zip(g.x, g.y))
    doubled = cell_level(pred, truth, [1, 1, 2])
    assert list(zip(doubled.x, doubled.y)) == [(1.0, 6.0), (1.0, 6.0), (2.0, 0.0)]


def test_cell_level_matches_bruteforce_lookup():
    rng = np.random.default_rng(0)
    pred, truth = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    bins = rng.integers(0, 30, size=40)
    s = cell_level(pred, truth, bins)
    for i, b in enumerate(bins):
        assert s.x[i] == pred[b // 6, b % 6] and s.y[i] == truth[b // 6, b % 6]


def test_grid_level_is_row_major():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert list(grid_level(pred, pred).x) == [1.0, 2.0, 3.0, 4.0]


def test_report_record_shape():
    rec = report(grid_level(np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([[1.0, 3.0], [2.0, 4.0]])), "grid")
    assert set(rec) == {"level", "pearson", "spearman", "kendall", "n"}
    assert rec["level"] == "grid" and rec["n"] == 4
