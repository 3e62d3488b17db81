"""Cross-validation plans, RMSE-curve aggregation and Diebold-Mariano tests.

Folds are numbered from 0, epochs from 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import DataError, DegenerateVariance, EmptyBatchError, ShapeError, SplitError

DEFAULT_CRITICAL_VALUE = 1.959964
VERDICTS = ("a-better", "b-better", "not-significant")
RESIDUAL_COLUMNS = ("observation_id", "fold", "epoch", "residual")


@dataclass
class FoldPlan:
    n_observations: int
    assignments: np.ndarray
    k: int
    seed: int | None = None

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.assignments.shape != (self.n_observations,):
            raise ShapeError("one fold assignment per observation is required")

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold_split(n: int, k: int, seed: int = 0) -> FoldPlan:
    """Seeded shuffle followed by contiguous chunking; the first ``n % k`` folds get one extra row."""
    if k < 2:
        raise SplitError(f"k must be at least 2, got {k}")
    if n < k:
        raise SplitError(f"cannot split {n} observations into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(order, k)):
        assignments[chunk] = fold
    return FoldPlan(n, assignments, k, seed)


def loocv_plan(n: int) -> FoldPlan:
    if n < 2:
        raise SplitError("leave-one-out needs at least 2 observations")
    return FoldPlan(n, np.arange(n), n)


# ---------------------------------------------------------------------------
# Diebold-Mariano
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DmResult:
    dm_statistic: float
    p_value: float
    mean_diff: float
    n: int

    def verdict(self, critical_value: float = DEFAULT_CRITICAL_VALUE) -> str:
        if abs(self.dm_statistic) <= critical_value:
            return "not-significant"
        return "a-better" if self.dm_statistic < 0 else "b-better"


def dm_test(residuals_a, residuals_b) -> DmResult:
    """DM statistic on ``d = |a| - |b|``; negative values favour ``a``.

    Uses the unbiased sample variance of ``d`` divided by ``m`` and a
    two-sided normal p-value.
    """
    a = np.asarray(residuals_a, dtype=float).ravel()
    b = np.asarray(residuals_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"residual vectors differ in length: {a.size} vs {b.size}")
    m = a.size
    if m < 2:
        raise ShapeError("the DM test needs at least 2 residual pairs")
    d = np.abs(a) - np.abs(b)
    mean = float(d.mean())
    var = float(d.var(ddof=1))
    if var == 0.0:
        if mean == 0.0:
            return DmResult(0.0, 1.0, 0.0, m)
        raise DegenerateVariance(f"loss differences are constant ({mean!r}); DM is undefined")
    stat = mean / np.sqrt(var / m)
    p = float(2.0 * norm.sf(abs(stat)))
    return DmResult(float(stat), p, mean, m)


@dataclass
class SignificanceGrid:
    cells: list[list[DmResult]]
    critical_value: float = DEFAULT_CRITICAL_VALUE

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cells), len(self.cells[0]) if self.cells else 0

    def verdicts(self) -> list[list[str]]:
        return [[c.verdict(self.critical_value) for c in row] for row in self.cells]

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(VERDICTS, 0)
        for row in self.verdicts():
            for v in row:
                out[v] += 1
        return out

    def rows(self):
        """``(fold, epoch, dm, p, verdict)`` tuples in fold-major order."""
        for fold, row in enumerate(self.cells):
            for epoch, cell in enumerate(row, start=1):
                yield fold, epoch, cell.dm_statistic, cell.p_value, cell.verdict(self.critical_value)


def significance_grid(history_a, history_b, critical_value: float = DEFAULT_CRITICAL_VALUE) -> SignificanceGrid:
    """One DM test per (fold, epoch).

    Each history is indexed ``[fold][epoch]`` and yields a residual vector.
    """
    if len(history_a) != len(history_b):
        raise ShapeError(f"{len(history_a)} folds vs {len(history_b)}")
    cells = []
    for fold_a, fold_b in zip(history_a, history_b):
        if len(fold_a) != len(fold_b):
            raise ShapeError(f"{len(fold_a)} epochs vs {len(fold_b)}")
        cells.append([dm_test(ra, rb) for ra, rb in zip(fold_a, fold_b)])
    return SignificanceGrid(cells, critical_value)


# ---------------------------------------------------------------------------
# Curve aggregation
# ---------------------------------------------------------------------------

@dataclass
class CurveSummary:
    mean: np.ndarray
    std: np.ndarray
    best_epoch: int
    best_mean: float

    @property
    def std_at_best(self) -> float:
        return float(self.std[self.best_epoch - 1])


def aggregate_curves(histories: Sequence) -> CurveSummary:
    """Pointwise mean and population std of the test-RMSE curves across folds.

    Accepts ``TrainHistory`` objects or plain per-epoch sequences.
    """
    if len(histories) == 0:
        raise EmptyBatchError("no histories to aggregate")
    curves = [np.asarray(getattr(h, "test_rmse", h), dtype=float) for h in histories]
    if len({c.shape for c in curves}) != 1 or curves[0].ndim != 1 or curves[0].size == 0:
        raise ShapeError("all folds must report the same number of epochs")
    mat = np.vstack(curves)
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    best = int(np.argmin(mean))
    return CurveSummary(mean, std, best + 1, float(mean[best]))


# ---------------------------------------------------------------------------
# Cross-validation driver
# ---------------------------------------------------------------------------

@dataclass
class CvResult:
    plan: FoldPlan
    histories: list = field(default_factory=list)

    def summary(self) -> CurveSummary:
        return aggregate_curves(self.histories)

    def residual_history(self) -> list[list[np.ndarray]]:
        return [h.test_residuals for h in self.histories]


def cross_validate(
    spec,
    dataset,
    plan: FoldPlan,
    config,
    scaling: str = "zscore",
    grad_fn=None,
    predict_fn=None,
    clock=None,
    folds: Sequence[int] | None = None,
    on_fold=None,
) -> CvResult:
    """Train a fresh model (same init seed) on every fold of ``plan``.

    Features are rescaled per fold with statistics from that fold's training
    rows only.  ``on_fold(fold, history, model, scaler)`` is called after
    each fold with the trained model.
    """
    from . import hybrid
    from .data import standardize

    if plan.n_observations != dataset.n_obs:
        raise ShapeError(f"plan covers {plan.n_observations} rows, dataset has {dataset.n_obs}")
    kwargs = {}
    if grad_fn is not None:
        kwargs["grad_fn"] = grad_fn
    if predict_fn is not None:
        kwargs["predict_fn"] = predict_fn
    if clock is not None:
        kwargs["clock"] = clock
    result = CvResult(plan)
    for fold in range(plan.k) if folds is None else folds:
        train_rows, test_rows = plan.train_rows(fold), plan.test_rows(fold)
        scaled = standardize(dataset, train_rows, scaling) if scaling != "none" else dataset
        model = hybrid.build_model(spec)
        history = hybrid.train(
            model,
            (scaled.features[train_rows], scaled.targets[train_rows]),
            (scaled.features[test_rows], scaled.targets[test_rows]),
            config,
            **kwargs,
        )
        history.test_index = test_rows
        result.histories.append(history)
        if on_fold is not None:
            on_fold(fold, history, model, scaled.scaler)
    return result


# ---------------------------------------------------------------------------
# Residual CSV
# ---------------------------------------------------------------------------

def write_residuals(path, histories: Sequence) -> None:
    """Write ``observation_id, fold, epoch, residual`` rows for every fold/epoch."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESIDUAL_COLUMNS)
        for fold, h in enumerate(histories):
            index = h.test_index if h.test_index is not None else np.arange(len(h.test_residuals[0]))
            for epoch, res in enumerate(h.test_residuals, start=1):
                for obs, r in zip(index, res):
                    writer.writerow((int(obs), fold, epoch, repr(float(r))))


def read_residuals(path) -> list[list[np.ndarray]]:
    """Load a residual CSV into ``[fold][epoch] -> residuals`` ordered by observation id.

    The file may come from any external model as long as it has the four
    columns; rows can be in any order.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RESIDUAL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        table: dict[tuple[int, int], list[tuple[int, float]]] = {}
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["fold"]), int(row["epoch"]))
                table.setdefault(key, []).append((int(row["observation_id"]), float(row["residual"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}, line {line}: {exc}") from None
    if not table:
        raise DataError(f"{path}: no residual rows")
    folds = sorted({f for f, _ in table})
    epochs = sorted({e for _, e in table})
    out = []
    for f in folds:
        per_epoch = []
        for e in epochs:
            if (f, e) not in table:
                raise DataError(f"{path}: fold {f} has no rows for epoch {e}")
            per_epoch.append(np.array([r for _, r in sorted(table[(f, e)])]))
        out.append(per_epoch)
    return out


def write_grid(path, grid: SignificanceGrid) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold", "epoch", "dm", "p", "verdict"))
        for fold, epoch, dm, p, verdict in grid.rows():
            writer.writerow((fold, epoch, repr(dm), repr(p), verdict))
