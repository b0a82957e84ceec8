import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from farm.anova_test import (
    ScreenRule,
    _marginal,
    anova_components,
    marginal_screen,
    power_boundary,
    rank_size,
    sparse_adequacy_test,
    split_indices,
    split_sample,
)
from farm.errors import DegenerateColumn, ExponentTooLarge, InsufficientData
from farm.factor_model import DataSet, estimate_factors
from farm.simbench import generate, sparse_test_spec


def _sim(v=0.0, n=250, d=250, seed=0):
    return generate(sparse_test_spec(v, d=d, n=n, seed=seed))


def test_split_arithmetic_and_partition():
    first, second = split_indices(250, seed=3)
    assert first.size == math.ceil(250 ** 0.8) == 83
    assert second.size == 167
    assert np.intersect1d(first, second).size == 0
    assert_allclose(np.sort(np.concatenate([first, second])), np.arange(250))
    again = split_indices(250, seed=3)
    assert_allclose(again[0], first)
    assert not np.array_equal(split_indices(250, seed=4)[0], first)


def test_split_guards():
    with pytest.raises(InsufficientData):
        split_indices(29)
    # n = 30 with m = 29 leaves one row
    e = math.log(29) / math.log(30)
    assert math.ceil(30 ** e) == 29
    with pytest.raises(ExponentTooLarge):
        split_indices(30, exponent=e)
    with pytest.raises(ExponentTooLarge):
        split_indices(100, exponent=1.0)


def test_split_sample_recenters():
    data, _ = _sim(n=120, d=40)
    a, b = split_sample(data, seed=1)
    assert_allclose(a.X.mean(axis=0), 0, atol=1e-12)
    assert_allclose(b.Y.mean(), 0, atol=1e-12)
    assert a.n + b.n == 120


def test_rank_size():
    assert rank_size(83) == math.ceil(83 / math.log(83))
    assert rank_size(167) == 33


def test_marginal_matches_loop_oracle():
    rng = np.random.default_rng(0)
    U, y = rng.standard_normal((30, 7)), rng.standard_normal(30)
    expected = [float(np.dot(U[:, j], y) / np.dot(U[:, j], U[:, j])) for j in range(7)]
    assert_allclose(_marginal(U, y), expected, rtol=1e-12)
    U[:, 3] = 0
    with pytest.raises(DegenerateColumn) as info:
        _marginal(U, y)
    assert info.value.column == 3


def test_marginal_equals_ols_for_orthogonal_columns():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    y = rng.standard_normal(40)
    ols, *_ = np.linalg.lstsq(Q, y, rcond=None)
    assert_allclose(_marginal(Q, y), ols, atol=1e-12)


def test_rank_rule_sizes():
    data, _ = _sim(n=200, d=100, seed=2)
    plain = marginal_screen(data, 3, ScreenRule.rank(15, iterate=False))
    assert plain.selected.size == 15
    assert marginal_screen(data, 3, ScreenRule.rank(500, iterate=False)).selected.size == 100
    isis = marginal_screen(data, 3, ScreenRule.rank(15))
    assert isis.selected.size <= 15
    auto = marginal_screen(data, 3, ScreenRule.rank(iterate=False))
    assert auto.selected.size == rank_size(200)


def test_sure_screening():
    hits = 0
    for seed in range(20):
        data, _ = _sim(v=0.0, n=250, d=250, seed=seed)
        part1, _ = split_sample(data, seed=seed)
        S = marginal_screen(part1, 3, ScreenRule.rank(iterate=False)).selected
        hits += set(range(4)) <= set(S.tolist())
    assert hits >= 19


def test_threshold_rule_monotone():
    data, _ = _sim(n=150, d=80, seed=3)
    prev = None
    for phi in (0.0, 0.05, 0.1, 0.3, 1.0):
        sel = set(marginal_screen(data, 3, ScreenRule.thresholded(phi)).selected.tolist())
        if prev is not None:
            assert sel <= prev
        prev = sel
    assert len(marginal_screen(data, 3, ScreenRule.thresholded(0.0)).selected) == 80


def test_q_matches_dense_projection_oracle():
    data, _ = _sim(v=0.3, n=90, d=40, seed=4)
    S = np.array([0, 1, 2, 3, 17])
    fe = estimate_factors(data, 3)
    XS = data.X[:, S]
    Z = np.hstack([fe.Fhat, fe.Uhat[:, S]])
    P1 = XS @ np.linalg.pinv(XS)
    P2 = Z @ np.linalg.pinv(Z)
    Y = data.Y
    expected = Y @ (np.eye(90) - P1) @ Y - Y @ (np.eye(90) - P2) @ Y
    stat = anova_components(data, 3, S)
    assert_allclose(stat.raw, expected, rtol=1e-8, atol=1e-9)
    assert_allclose(stat.Q, max(stat.raw, 0.0), rtol=0)
    assert not stat.rank_deficient


def test_q_zero_response_and_clamp():
    data, _ = _sim(n=60, d=30, seed=5)
    zero = DataSet.from_arrays(data.X, np.zeros(60))
    stat = anova_components(zero, 3, [0, 1])
    assert stat.Q == 0.0 and stat.Q >= 0


def test_rank_deficient_design_warns():
    data, _ = _sim(n=60, d=30, seed=6)
    X = data.X.copy()
    X[:, 1] = X[:, 0]
    dup = DataSet.from_arrays(X, data.Y)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        stat = anova_components(dup, 2, [0, 1])
    assert stat.rank_deficient
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    with pytest.raises(ValueError):
        anova_components(data, 3, np.arange(57))


def test_no_split_uses_full_sample():
    data, _ = _sim(v=0.0, n=120, d=60, seed=7)
    res = sparse_adequacy_test(data, seed=1, no_split=True, K=3)
    assert res.no_split and res.stage1_rows is None and res.stage2_rows is None
    assert res.screening.m == 120
    assert_allclose(res.Q, anova_components(data, 3, res.screening.selected).Q)


def test_split_test_bookkeeping_and_determinism():
    data, _ = _sim(v=0.0, n=150, d=80, seed=8)
    res = sparse_adequacy_test(data, alpha=0.05, seed=2, K=3)
    assert res.stage1_rows.size == math.ceil(150 ** 0.8)
    assert res.df == 3
    from scipy import stats
    assert_allclose(res.p_value, stats.chi2.sf(res.Q / res.sigma_sq_hat, 3))
    assert res.reject == (res.p_value < 0.05)
    again = sparse_adequacy_test(data, alpha=0.05, seed=2, K=3)
    assert again.Q == res.Q and again.p_value == res.p_value
    with pytest.raises(ValueError):
        sparse_adequacy_test(data, alpha=0.0)


def test_strong_alternative_rejects():
    data, _ = _sim(v=0.4, n=250, d=250, seed=9)
    res = sparse_adequacy_test(data, seed=0, K=3)
    assert res.reject and res.p_value < 1e-4


def test_power_boundary_scaling():
    b1 = power_boundary(0.25, 3, 167, 33, 1.0)
    assert_allclose(power_boundary(0.5, 3, 167, 33, 1.0), 2 * b1, rtol=1e-12)
    assert_allclose(power_boundary(0.25, 3, 334, 33, 1.0), b1 / 2, rtol=1e-12)
    assert power_boundary(0.25, 3, 167, 33, 1.0, alpha=0.01) > b1
    assert power_boundary(0.25, 3, 167, 33, 2.0) < b1
