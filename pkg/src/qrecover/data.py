"""Dataset ingestion, scaling, padding, and the synthetic recovery-rate generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyFile, MissingColumn, MissingFile, NonNumericCell, SpecError

DEFAULT_TARGET = "recovery_rate"
TARGET_CAP = 1.1

# Feature-category sizes for the default 256-column layout: bond, firm,
# credit-risk, categorical dummies (industry + region/currency), macro.
CATEGORY_SIZES = {"bond": 29, "firm": 17, "credit": 78, "industry": 55, "region": 43, "macro": 34}

# Mixing-logit steepness and offset: a steeper logit makes the high/low
# component more predictable from the features.
LOGIT_SCALE = 5.0
LOGIT_OFFSET = -0.6


@dataclass
class Scaler:
    method: str
    center: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) / self.scale


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    target_name: str = DEFAULT_TARGET
    scaler: Scaler | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise SpecError(f"features must be a non-empty 2-D matrix, got {self.features.shape}")
        if self.targets.shape != (self.features.shape[0],):
            raise SpecError("targets length must equal the number of rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise SpecError("feature_names length must equal the number of columns")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise SpecError("dataset contains NaN or Inf")

    @property
    def n_obs(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, features=self.features[rows], targets=self.targets[rows])


def _parse_cell(text: str, line: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(line, col, text) from None
    if not math.isfinite(value):
        raise NonNumericCell(line, col, text)
    return value


def load_csv(path, target_column: str = DEFAULT_TARGET, delimiter: str = ",") -> Dataset:
    """Read a header-first numeric CSV.

    Error rows are reported by file line number (the header is line 1).
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if not header:
            raise EmptyFile(f"{path} has no header row")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise MissingColumn(f"target column {target_column!r} not in {path}")
        rows = []
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise NonNumericCell(line, "<row>", delimiter.join(record))
            rows.append([_parse_cell(cell.strip(), line, col) for cell, col in zip(record, header)])
    if not rows:
        raise EmptyFile(f"{path} has no data rows")
    table = np.array(rows, dtype=float)
    t_idx = header.index(target_column)
    names = [h for i, h in enumerate(header) if i != t_idx]
    return Dataset(np.delete(table, t_idx, axis=1), table[:, t_idx], names, target_column)


def save_csv(ds: Dataset, path, delimiter: str = ",") -> None:
    # repr() gives the shortest round-tripping decimal for each float.
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(list(ds.feature_names) + [ds.target_name])
        for row, y in zip(ds.features, ds.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def fit_scaler(x: np.ndarray, method: str = "zscore") -> Scaler:
    n = x.shape[1]
    if method == "none":
        return Scaler(method, np.zeros(n), np.ones(n))
    if method == "zscore":
        center, scale = x.mean(axis=0), x.std(axis=0)
    elif method == "minmax":
        center, scale = x.min(axis=0), x.max(axis=0) - x.min(axis=0)
    else:
        raise SpecError(f"unknown scaling method {method!r}")
    constant = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
    # constant columns pass through untouched
    center = np.where(constant, 0.0, center)
    scale = np.where(constant, 1.0, scale)
    return Scaler(method, center, scale)


def standardize(ds: Dataset, train_rows, method: str = "zscore") -> Dataset:
    train_rows = np.asarray(train_rows)
    if train_rows.size == 0:
        raise SpecError("train_rows must be non-empty")
    scaler = fit_scaler(ds.features[train_rows], method)
    return replace(ds, features=scaler.transform(ds.features), scaler=scaler)


def pad_pow2(x) -> np.ndarray:
    """Zero-pad the last axis up to the next power of two."""
    x = np.asarray(x, dtype=float)
    length = x.shape[-1]
    if length < 1:
        raise SpecError("cannot pad an empty vector")
    target = 1 << (length - 1).bit_length()
    if target == length:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, target - length)]
    return np.pad(x, pad)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _category_layout(n_features: int) -> dict[str, int]:
    if n_features == 256:
        return dict(CATEGORY_SIZES)
    total = sum(CATEGORY_SIZES.values())
    sizes = {k: int(v * n_features // total) for k, v in CATEGORY_SIZES.items()}
    # leftover columns go to the continuous blocks, credit first
    for key in ("credit", "bond", "macro", "firm"):
        if sum(sizes.values()) >= n_features:
            break
        sizes[key] += 1
    while sum(sizes.values()) < n_features:
        sizes["credit"] += 1
    if sizes["industry"] == 1:
        sizes["credit"] += 1
        sizes["industry"] = 0
    if sizes["region"] == 1:
        sizes["credit"] += 1
        sizes["region"] = 0
    return sizes


def _correlated_block(rng: np.random.Generator, n_obs: int, width: int, rho: float) -> np.ndarray:
    if width == 0:
        return np.empty((n_obs, 0))
    factor = rng.standard_normal((n_obs, 1))
    loadings = rng.uniform(0.5, 1.0, size=(1, width)) * rng.choice([-1.0, 1.0], size=(1, width))
    noise = rng.standard_normal((n_obs, width))
    return math.sqrt(rho) * factor * loadings + math.sqrt(1 - rho) * noise


def _one_hot(rng: np.random.Generator, n_obs: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    if width == 0:
        return np.empty((n_obs, 0)), np.zeros(n_obs, dtype=int)
    weights = rng.dirichlet(np.full(width, 2.0))
    labels = rng.choice(width, size=n_obs, p=weights)
    out = np.zeros((n_obs, width))
    out[np.arange(n_obs), labels] = 1.0
    return out, labels


def _beta_from_mean(rng, mean, concentration):
    return rng.beta(mean * concentration, (1.0 - mean) * concentration)


def synth_recovery(n_obs: int = 1725, n_features: int = 256, seed: int = 0) -> Dataset:
    """Synthetic defaulted-bond recovery data.

    Continuous blocks are factor-correlated Gaussians, categorical blocks are
    one-hot dummies.  The target is drawn from a low/high Beta mixture whose
    mixing logit is a nonlinear function of a handful of features, including
    a three-way product, then jittered and clipped to ``[0, 1.1]``.
    """
    if n_obs < 10:
        raise SpecError("n_obs must be >= 10")
    if n_features < 2:
        raise SpecError("n_features must be >= 2")
    rng = np.random.default_rng(seed)
    sizes = _category_layout(n_features)

    blocks, names = {}, []
    for key, rho in (("bond", 0.3), ("firm", 0.4), ("credit", 0.6)):
        blocks[key] = _correlated_block(rng, n_obs, sizes[key], rho)
    blocks["industry"], industry = _one_hot(rng, n_obs, sizes["industry"])
    blocks["region"], region = _one_hot(rng, n_obs, sizes["region"])
    blocks["macro"] = _correlated_block(rng, n_obs, sizes["macro"], 0.5)
    order = ("bond", "firm", "credit", "industry", "region", "macro")
    for key in order:
        names.extend(f"{key}_{i:03d}" for i in range(sizes[key]))
    features = np.concatenate([blocks[k] for k in order], axis=1)

    continuous = np.concatenate([blocks[k] for k in ("bond", "firm", "credit", "macro")], axis=1)
    c = continuous
    width = c.shape[1]

    def col(i):
        return c[:, i % width]

    credit = blocks["credit"]
    credit_level = credit.mean(axis=1) if credit.shape[1] else col(0)
    credit_level = credit_level / (credit_level.std() + 1e-12)

    industry_effect = rng.normal(0.0, 0.6, size=max(sizes["industry"], 1))[industry]
    region_effect = rng.normal(0.0, 0.3, size=max(sizes["region"], 1))[region]

    signal = (
        -1.0 * credit_level
        + 0.8 * col(10)
        - 0.6 * col(11)
        + 0.5 * np.tanh(col(0) * col(1) * col(2))
        + 0.4 * col(3) * col(4)
        + 0.5 * np.sin(2.0 * col(5))
        + 0.4 * np.where(col(6) > 0, col(7), -0.5 * col(7))
        + industry_effect
        + region_effect
    )
    signal = (signal - signal.mean()) / (signal.std() + 1e-12)
    p_high = 1.0 / (1.0 + np.exp(-(LOGIT_SCALE * signal + LOGIT_OFFSET)))
    high = rng.random(n_obs) < p_high

    low_mean = np.clip(0.22 + 0.04 * np.tanh(col(8)), 0.05, 0.5)
    high_mean = np.clip(0.87 + 0.03 * np.tanh(col(9)), 0.5, 0.97)
    low = _beta_from_mean(rng, low_mean, 9.0)
    top = _beta_from_mean(rng, high_mean, 11.0)
    y = np.where(high, top, low) + rng.normal(0.0, 0.03, size=n_obs)
    y = np.clip(y, 0.0, TARGET_CAP)

    meta = {
        "seed": seed,
        "n_obs": n_obs,
        "n_features": n_features,
        "target_mean": float(y.mean()),
        "target_std": float(y.std()),
        "target_min": float(y.min()),
        "target_max": float(y.max()),
        "high_component_share": float(high.mean()),
    }
    return Dataset(features, y, names, DEFAULT_TARGET, meta=meta)
