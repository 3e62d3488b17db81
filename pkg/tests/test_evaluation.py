import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrecover.errors import DegenerateVariance, EmptyBatchError, ShapeError, SplitError
from qrecover.evaluation import (
    aggregate_curves,
    dm_test,
    kfold_split,
    loocv_plan,
    read_residuals,
    significance_grid,
    write_grid,
    write_residuals,
)
from qrecover.hybrid import TrainHistory


def assert_partition(plan):
    seen = np.concatenate([plan.test_rows(f) for f in range(plan.k)])
    assert sorted(seen.tolist()) == list(range(plan.n_observations))


def test_kfold_small():
    plan = kfold_split(8, 4, seed=0)
    assert plan.fold_sizes() == [2, 2, 2, 2]
    assert_partition(plan)
    for f in range(4):
        assert set(plan.train_rows(f)).isdisjoint(plan.test_rows(f))
        assert len(plan.train_rows(f)) == 6


def test_kfold_default_dataset_sizes():
    # 1725 = 4 * 431 + 1, so exactly one fold carries the remainder
    assert kfold_split(1725, 4, seed=0).fold_sizes() == [432, 431, 431, 431]


def test_kfold_deterministic():
    a, b = kfold_split(100, 4, seed=7), kfold_split(100, 4, seed=7)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    assert not np.array_equal(a.assignments, kfold_split(100, 4, seed=8).assignments)


@pytest.mark.parametrize("n, k", [(3, 4), (10, 1), (0, 2)])
def test_kfold_errors(n, k):
    with pytest.raises(SplitError):
        kfold_split(n, k)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 300), k=st.integers(2, 12), seed=st.integers(0, 1000))
def test_kfold_is_balanced_partition(n, k, seed):
    if n < k:
        return
    plan = kfold_split(n, k, seed)
    assert_partition(plan)
    sizes = plan.fold_sizes()
    assert max(sizes) - min(sizes) <= 1


@pytest.mark.parametrize("n", [2, 3, 10])
def test_loocv(n):
    plan = loocv_plan(n)
    assert plan.k == n
    assert plan.fold_sizes() == [1] * n
    assert_partition(plan)


def test_loocv_too_small():
    with pytest.raises(SplitError):
        loocv_plan(1)


def test_dm_identical_residuals():
    r = [0.1, -0.4, 0.3]
    result = dm_test(r, r)
    assert (result.dm_statistic, result.p_value) == (0.0, 1.0)
    assert result.verdict() == "not-significant"


def test_dm_constant_difference_raises():
    with pytest.raises(DegenerateVariance):
        dm_test([0.1, -0.1, 0.1, -0.1], [0.2, -0.2, 0.2, -0.2])


def hand_dm(a, b):
    d = [abs(x) - abs(y) for x, y in zip(a, b)]
    m = len(d)
    mean = sum(d) / m
    var = sum((x - mean) ** 2 for x in d) / (m - 1)
    stat = mean / math.sqrt(var / m)
    p = math.erfc(abs(stat) / math.sqrt(2))
    return mean, math.sqrt(var), stat, p


def test_dm_hand_fixture():
    a, b = [0.1, 0.3, 0.2, 0.4], [0.2, 0.2, 0.3, 0.3]
    mean, sd, stat, p = hand_dm(a, b)
    assert sd == pytest.approx(0.11547005383792516, rel=1e-12)
    result = dm_test(a, b)
    assert abs(result.dm_statistic) <= 1e-12
    assert result.dm_statistic == pytest.approx(stat, abs=1e-14)
    assert result.p_value == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_dm_matches_hand_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=40), rng.normal(0, 1.3, size=40)
    mean, _, stat, p = hand_dm(a.tolist(), b.tolist())
    result = dm_test(a, b)
    assert result.dm_statistic == pytest.approx(stat, rel=1e-12)
    assert result.p_value == pytest.approx(p, rel=1e-10)
    assert result.mean_diff == pytest.approx(mean, rel=1e-12)
    assert result.n == 40


def test_dm_sign_convention():
    rng = np.random.default_rng(0)
    small = rng.normal(0, 0.1, 200)
    large = rng.normal(0, 1.0, 200)
    result = dm_test(small, large)
    assert result.dm_statistic < 0
    assert result.verdict() == "a-better"
    assert dm_test(large, small).verdict() == "b-better"


def test_dm_shape_errors():
    with pytest.raises(ShapeError):
        dm_test([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        dm_test([1], [2])


residual_vectors = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).normal(size=(2, 30)) * np.random.default_rng(s + 1).uniform(0.1, 3, size=(2, 1))
)


@settings(max_examples=50, deadline=None)
@given(residual_vectors)
def test_dm_antisymmetric(pair):
    a, b = pair
    assert dm_test(a, b).dm_statistic == -dm_test(b, a).dm_statistic


@settings(max_examples=50, deadline=None)
@given(residual_vectors, st.floats(0.01, 100))
def test_dm_scale_invariant(pair, c):
    a, b = pair
    assert abs(dm_test(c * a, c * b).dm_statistic - dm_test(a, b).dm_statistic) <= 1e-12


def test_p_value_decreases_with_abs_dm():
    rng = np.random.default_rng(5)
    results = [dm_test(rng.normal(size=50), rng.normal(0, s, size=50)) for s in np.linspace(0.2, 3, 30)]
    results.sort(key=lambda r: abs(r.dm_statistic))
    ps = [r.p_value for r in results]
    assert all(later <= earlier for earlier, later in zip(ps, ps[1:]))
    assert all(0.0 <= p <= 1.0 for p in ps)


def residual_history(seed, folds=3, epochs=4, m=25):
    rng = np.random.default_rng(seed)
    return [[rng.normal(size=m) for _ in range(epochs)] for _ in range(folds)]


def test_grid_identical_histories():
    hist = residual_history(0)
    grid = significance_grid(hist, hist)
    assert grid.shape == (3, 4)
    assert grid.counts()["not-significant"] == 12
    assert all(cell.dm_statistic == 0.0 for row in grid.cells for cell in row)


def test_grid_doubled_magnitudes():
    hist = residual_history(1)
    doubled = [[2 * r for r in fold] for fold in hist]
    grid = significance_grid(hist, doubled)
    assert all(v == "a-better" for row in grid.verdicts() for v in row)


def test_grid_shape_mismatch():
    with pytest.raises(ShapeError):
        significance_grid(residual_history(0, folds=3), residual_history(0, folds=2))
    with pytest.raises(ShapeError):
        significance_grid(residual_history(0, epochs=4), residual_history(0, epochs=5))


def test_grid_rows_use_one_based_epochs(tmp_path):
    hist = residual_history(2, folds=2, epochs=2)
    grid = significance_grid(hist, residual_history(3, folds=2, epochs=2))
    rows = list(grid.rows())
    assert [(f, e) for f, e, *_ in rows] == [(0, 1), (0, 2), (1, 1), (1, 2)]
    path = tmp_path / "grid.csv"
    write_grid(path, grid)
    lines = path.read_text().splitlines()
    assert lines[0] == "fold,epoch,dm,p,verdict"
    assert len(lines) == 5


def history_with(test_rmse):
    h = TrainHistory()
    h.test_rmse.extend(test_rmse)
    return h


def test_aggregate_single_fold():
    summary = aggregate_curves([history_with([0.5, 0.4, 0.45])])
    np.testing.assert_array_equal(summary.std, 0)
    assert (summary.best_epoch, summary.best_mean) == (2, 0.4)


def test_aggregate_constant_folds():
    summary = aggregate_curves([history_with([0.2] * 3), history_with([0.3] * 3)])
    np.testing.assert_allclose(summary.mean, 0.25, atol=1e-15)
    np.testing.assert_allclose(summary.std, 0.05, atol=1e-15)


def test_aggregate_matches_naive_loop():
    rng = np.random.default_rng(0)
    curves = rng.uniform(0.1, 0.5, size=(4, 100))
    summary = aggregate_curves([history_with(row.tolist()) for row in curves])
    for e in range(100):
        col = [curves[f][e] for f in range(4)]
        mean = sum(col) / 4
        std = math.sqrt(sum((x - mean) ** 2 for x in col) / 4)
        assert summary.mean[e] == pytest.approx(mean, rel=1e-13)
        assert summary.std[e] == pytest.approx(std, rel=1e-10, abs=1e-15)
    best = min(range(100), key=lambda e: summary.mean[e])
    assert summary.best_epoch == best + 1
    assert summary.std_at_best == summary.std[best]


def test_aggregate_errors():
    with pytest.raises(EmptyBatchError):
        aggregate_curves([])
    with pytest.raises(ShapeError):
        aggregate_curves([history_with([0.1, 0.2]), history_with([0.1])])


def test_residual_csv_round_trip(tmp_path):
    hist = residual_history(4, folds=2, epochs=3, m=5)
    histories = []
    for fold in hist:
        h = TrainHistory()
        h.test_residuals.extend(fold)
        histories.append(h)
    path = tmp_path / "res.csv"
    write_residuals(path, histories)
    back = read_residuals(path)
    assert len(back) == 2 and all(len(f) == 3 for f in back)
    for fold_a, fold_b in zip(hist, back):
        for a, b in zip(fold_a, fold_b):
            np.testing.assert_array_equal(a, b)
