"""Command-line entry point: ``qrecover {run,compare,paramcount,gen-data,noise-eval}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, load_csv, save_csv, standardize, synth_recovery
from .errors import ConfigError, MissingFile, ProtocolMismatch, QRecoverError, SpecError
from .evaluation import (
    DEFAULT_CRITICAL_VALUE,
    aggregate_curves,
    cross_validate,
    kfold_split,
    loocv_plan,
    read_residuals,
    significance_grid,
    write_grid,
    write_residuals,
)
from .hybrid import ModelSpec, TrainConfig, count_params, load_checkpoint, predict, save_checkpoint
from .noise import NoiseParams, noisy_grad_fn, noisy_predict, noisy_predict_fn

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "QRECOVER_SEED"

DEFAULTS: dict = {
    "seed": 0,
    "model": {
        "kind": "QmlAmplitude",
        "input_dim": 0,  # 0: take the data width
        "hidden_dim": 0,  # 0: same as input_dim
        "n_qubits": 8,
        "fnn_second_hidden": 8,
        "pqc_layers": 1,
        "leaky_slope": -0.3,
    },
    "train": {"epochs": 100, "batch_size": 64, "learning_rate": 1e-3},
    "data": {
        "source": "synth",
        "path": "",
        "target_column": "recovery_rate",
        "delimiter": ",",
        "scaling": "zscore",
        "n_obs": 1725,
        "n_features": 256,
        "seed": 0,
    },
    "protocol": {"scheme": "cv", "k": 4},
    "noise": {
        "enabled": False,
        "noisy_encoding": True,
        **NoiseParams().to_dict(),
    },
    "report": {"timing": False, "critical_value": DEFAULT_CRITICAL_VALUE, "checkpoints": True},
}

# Reference configurations printed by ``paramcount --table``: (group, label, spec kwargs).
PARAM_TABLE = [
    ("baseline", "FNN", {"kind": "FNN"}),
    ("baseline", "QmlAngle", {"kind": "QmlAngle"}),
    ("baseline", "QmlAmplitude", {"kind": "QmlAmplitude"}),
    *[("fnn-width", f"FNN second_hidden={h}", {"kind": "FNN", "fnn_second_hidden": h}) for h in (16, 128, 512, 2048, 8192)],
    *[("angle-qubits", f"QmlAngle n_qubits={n}", {"kind": "QmlAngle", "n_qubits": n}) for n in (6, 7, 8, 10, 12, 14)],
]


class UsageError(QRecoverError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _check_type(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def merge_config(base: dict, updates: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in updates.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{name!r} must be a table")
            out[key] = merge_config(base[key], value, f"{name}.")
        else:
            out[key] = _check_type(name, value, base[key])
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return merge_config(DEFAULTS, doc)


def parse_override(text: str) -> dict:
    """``section.key=value`` to a nested dict; the value is read as TOML, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = dotted.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def resolve_config(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else copy.deepcopy(DEFAULTS)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    for item in getattr(args, "set", None) or []:
        cfg = merge_config(cfg, parse_override(item))
    shortcuts = {
        "seed": ("seed",),
        "kind": ("model", "kind"),
        "epochs": ("train", "epochs"),
        "qubits": ("model", "n_qubits"),
        "data": ("data", "path"),
    }
    for attr, keys in shortcuts.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        update = value
        for key in reversed(keys):
            update = {key: update}
        cfg = merge_config(cfg, update)
    if getattr(args, "data", None):
        cfg["data"]["source"] = "csv"
    if getattr(args, "timing", False):
        cfg["report"]["timing"] = True
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    data = cfg["data"]
    if data["source"] not in ("synth", "csv"):
        raise ConfigError(f"data.source must be 'synth' or 'csv', got {data['source']!r}")
    if data["source"] == "csv" and not data["path"]:
        raise ConfigError("data.source = 'csv' needs data.path")
    if data["source"] == "synth" and data["path"]:
        raise ConfigError("data.path is set but data.source is 'synth'; choose one data source")
    if data["scaling"] not in ("zscore", "minmax", "none"):
        raise ConfigError(f"data.scaling must be zscore, minmax or none, got {data['scaling']!r}")
    if cfg["protocol"]["scheme"] not in ("cv", "loocv"):
        raise ConfigError(f"protocol.scheme must be 'cv' or 'loocv', got {cfg['protocol']['scheme']!r}")
    if cfg["noise"]["enabled"] and cfg["model"]["kind"].lower() == "fnn":
        raise ConfigError("noise.enabled needs a quantum model kind")
    noise_keys = {k: v for k, v in cfg["noise"].items() if k.startswith("p_")}
    try:
        NoiseParams(**noise_keys)
    except QRecoverError as exc:
        raise ConfigError(f"noise: {exc}") from None
    try:
        TrainConfig(cfg["train"]["epochs"], cfg["train"]["batch_size"], cfg["train"]["learning_rate"])
    except SpecError as exc:
        raise ConfigError(f"train: {exc}") from None
    return cfg


def load_dataset(cfg: dict) -> Dataset:
    data = cfg["data"]
    if data["source"] == "csv":
        return load_csv(data["path"], data["target_column"], data["delimiter"])
    return synth_recovery(data["n_obs"], data["n_features"], data["seed"])


def model_spec(cfg: dict, input_dim: int) -> ModelSpec:
    m = cfg["model"]
    in_dim = m["input_dim"] or input_dim
    if in_dim != input_dim:
        raise ConfigError(f"model.input_dim is {in_dim} but the data has {input_dim} features")
    return ModelSpec(
        kind=m["kind"],
        input_dim=in_dim,
        hidden_dim=m["hidden_dim"] or None,
        n_qubits=m["n_qubits"],
        fnn_second_hidden=m["fnn_second_hidden"],
        pqc_layers=m["pqc_layers"],
        leaky_slope=m["leaky_slope"],
        seed=cfg["seed"],
    ).validate()


def fold_plan(cfg: dict, n_obs: int):
    if cfg["protocol"]["scheme"] == "loocv":
        return loocv_plan(n_obs)
    return kfold_split(n_obs, cfg["protocol"]["k"], cfg["seed"])


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def provenance(cfg: dict, command: str, threads: int) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "seed": cfg["seed"],
        "data_seed": cfg["data"]["seed"] if cfg["data"]["source"] == "synth" else None,
        "config_sha256": config_digest(cfg),
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def prepare_out_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"{out} is not empty; pass --force to overwrite its reports")
    out.mkdir(parents=True, exist_ok=True)
    return out


def prepare_out_file(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise UsageError(f"{out} exists; pass --force to overwrite it")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rmse_csv(path, histories, timing: bool) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold", "epoch", "train_rmse", "test_rmse", "seconds"))
        for fold, h in enumerate(histories):
            for epoch in range(h.epochs):
                seconds = h.seconds[epoch] if timing else 0.0
                writer.writerow(
                    (fold, epoch + 1, _fmt(h.train_rmse[epoch]), _fmt(h.test_rmse[epoch]), _fmt(seconds))
                )


def write_curve_csv(path, summary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "mean_test_rmse", "std_test_rmse"))
        for epoch, (m, s) in enumerate(zip(summary.mean, summary.std), start=1):
            writer.writerow((epoch, _fmt(m), _fmt(s)))


def write_folds_csv(path, plan) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("observation_id", "fold"))
        for obs, fold in enumerate(plan.assignments):
            writer.writerow((obs, int(fold)))


def _set_threads(n: int) -> int:
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if n > 1:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args)
    threads = _set_threads(args.threads)
    dataset = load_dataset(cfg)
    spec = model_spec(cfg, dataset.n_features)
    plan = fold_plan(cfg, dataset.n_obs)
    out = prepare_out_dir(args.out, args.force)
    train_cfg = TrainConfig(
        cfg["train"]["epochs"], cfg["train"]["batch_size"], cfg["train"]["learning_rate"], shuffle_seed=cfg["seed"]
    )
    hooks = {}
    if cfg["noise"]["enabled"]:
        noise = NoiseParams(**{k: v for k, v in cfg["noise"].items() if k.startswith("p_")})
        hooks["grad_fn"] = noisy_grad_fn(noise, cfg["noise"]["noisy_encoding"])
        hooks["predict_fn"] = noisy_predict_fn(noise, cfg["noise"]["noisy_encoding"])
        if spec.n_qubits > 4:
            print("warning: noisy training above 4 qubits is very slow", file=sys.stderr)

    write_json(out / "config.json", cfg)
    write_folds_csv(out / "folds.csv", plan)

    def on_fold(fold, history, model, scaler):
        if cfg["report"]["checkpoints"]:
            extra = {"fold": fold, "config": cfg}
            if scaler is not None:
                extra["scaler_center"] = scaler.center.tolist()
                extra["scaler_scale"] = scaler.scale.tolist()
            save_checkpoint(model, out / f"model_fold{fold}.json", extra=extra)
        if not args.quiet:
            print(
                f"fold {fold}: best test RMSE {min(history.test_rmse):.4f} "
                f"at epoch {int(np.argmin(history.test_rmse)) + 1}",
                file=sys.stderr,
            )

    result = cross_validate(spec, dataset, plan, train_cfg, cfg["data"]["scaling"], on_fold=on_fold, **hooks)
    summary = aggregate_curves(result.histories)
    write_rmse_csv(out / "rmse.csv", result.histories, cfg["report"]["timing"])
    write_curve_csv(out / "curve.csv", summary)
    write_residuals(out / "residuals.csv", result.histories)
    doc = {
        "kind": spec.kind,
        "param_count": count_params(spec),
        "best_avg_rmse": summary.best_mean,
        "best_epoch": summary.best_epoch,
        "avg_std": float(np.mean(summary.std)),
        "std_at_best_epoch": summary.std_at_best,
        "folds": plan.k,
        "epochs": train_cfg.epochs,
        "n_observations": dataset.n_obs,
        "provenance": provenance(cfg, "run", threads),
    }
    write_json(out / "summary.json", doc)
    print(json.dumps({k: doc[k] for k in ("kind", "param_count", "best_avg_rmse", "best_epoch")}))
    return 0


def _run_residuals(path: Path):
    """Residual history and protocol description of a run directory or a residual CSV."""
    if path.is_dir():
        summary_path = path / "summary.json"
        if not summary_path.exists():
            raise MissingFile(f"{path} has no summary.json")
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        folds = (path / "folds.csv").read_text(encoding="utf-8") if (path / "folds.csv").exists() else None
        return read_residuals(path / "residuals.csv"), {"summary": summary, "folds": folds}
    if not path.exists():
        raise MissingFile(f"no such run directory or residual file: {path}")
    return read_residuals(path), {"summary": None, "folds": None}


def cmd_compare(args) -> int:
    path_a, path_b = Path(args.run_a), Path(args.run_b)
    hist_a, info_a = _run_residuals(path_a)
    hist_b, info_b = _run_residuals(path_b)
    if len(hist_a) != len(hist_b):
        raise ProtocolMismatch(f"fold counts differ: {len(hist_a)} vs {len(hist_b)}")
    for fold, (fa, fb) in enumerate(zip(hist_a, hist_b)):
        if len(fa) != len(fb):
            raise ProtocolMismatch(f"fold {fold}: epoch counts differ ({len(fa)} vs {len(fb)})")
        if fa[0].shape != fb[0].shape:
            raise ProtocolMismatch(f"fold {fold}: test-set sizes differ")
    if info_a["folds"] is not None and info_b["folds"] is not None and info_a["folds"] != info_b["folds"]:
        raise ProtocolMismatch("the two runs used different fold plans")
    grid = significance_grid(hist_a, hist_b, args.critical_value)
    out = prepare_out_file(args.out, args.force)
    write_grid(out, grid)
    counts = grid.counts()
    doc = {"run_a": str(path_a), "run_b": str(path_b), "cells": sum(counts.values()), **counts}
    write_json(out.with_suffix(".summary.json"), doc)
    print(json.dumps(doc))
    return 0


def cmd_paramcount(args) -> int:
    if args.table:
        for group, label, kwargs in PARAM_TABLE:
            print(f"{group}\t{label}\t{count_params(ModelSpec(**kwargs))}")
        return 0
    spec = ModelSpec(
        kind=args.kind,
        input_dim=args.input_dim,
        hidden_dim=args.hidden_dim,
        n_qubits=args.qubits,
        fnn_second_hidden=args.second_hidden,
        pqc_layers=args.layers,
    )
    print(count_params(spec))
    return 0


def cmd_gen_data(args) -> int:
    ds = synth_recovery(args.n_obs, args.n_features, args.seed)
    out = prepare_out_file(args.out, args.force)
    prov = prepare_out_file(out.with_suffix(".provenance.json"), args.force)
    save_csv(ds, out)
    write_json(prov, {**ds.meta, "generator": "synth_recovery", "package_version": __version__})
    print(f"wrote {out} ({ds.n_obs} x {ds.n_features + 1})")
    return 0


def _noise_from_args(args, cfg: dict | None) -> NoiseParams:
    values = NoiseParams().to_dict()
    if cfg is not None:
        values.update({k: v for k, v in cfg["noise"].items() if k.startswith("p_")})
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return NoiseParams(**values)


def cmd_noise_eval(args) -> int:
    threads = _set_threads(args.threads)
    model, _ = load_checkpoint(args.checkpoint) if Path(args.checkpoint).exists() else (None, None)
    if model is None:
        raise MissingFile(f"checkpoint not found: {args.checkpoint}")
    if model.spec.kind == "FNN":
        raise UsageError("noise-eval needs a quantum model checkpoint")
    extra = json.loads(Path(args.checkpoint).read_text(encoding="utf-8")).get("extra", {})
    cfg = load_config(args.config) if args.config else extra.get("config")
    if cfg is None:
        raise ConfigError("checkpoint carries no run config; pass --config")
    cfg = validate_config(merge_config(DEFAULTS, cfg))
    noise = _noise_from_args(args, cfg)
    noisy_encoding = cfg["noise"]["noisy_encoding"] if args.noisy_encoding is None else args.noisy_encoding
    dataset = load_dataset(cfg)
    if "scaler_center" in extra:
        center = np.array(extra["scaler_center"])
        scale = np.array(extra["scaler_scale"])
        features = (dataset.features - center) / scale
    else:
        features = dataset.features
    fold = extra.get("fold")
    rows = fold_plan(cfg, dataset.n_obs).test_rows(fold) if fold is not None else np.arange(dataset.n_obs)
    if args.limit:
        rows = rows[: args.limit]
    X, y = features[rows], dataset.targets[rows]
    out = prepare_out_dir(args.out, args.force)
    clean = predict(model, X)
    noisy = noisy_predict(model, X, noise, noisy_encoding)
    with open(out / "noise_predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("observation_id", "target", "noiseless", "noisy"))
        for obs, t, c, n in zip(rows, y, clean, noisy):
            writer.writerow((int(obs), _fmt(t), _fmt(c), _fmt(n)))
    doc = {
        "rows": int(len(rows)),
        "noiseless_rmse": float(np.sqrt(np.mean((clean - y) ** 2))),
        "noisy_rmse": float(np.sqrt(np.mean((noisy - y) ** 2))),
        "mean_abs_prediction_shift": float(np.mean(np.abs(noisy - clean))),
        "noise": noise.to_dict(),
        "noisy_encoding": noisy_encoding,
        "provenance": provenance(cfg, "noise-eval", threads),
    }
    write_json(out / "noise_summary.json", doc)
    print(json.dumps({k: doc[k] for k in ("rows", "noiseless_rmse", "noisy_rmse")}))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrecover", description="Hybrid quantum-classical recovery-rate experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a model under the configured CV protocol")
    run.add_argument("--config", help="TOML config file")
    run.add_argument("--out", required=True, help="run directory for the reports")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    run.add_argument("--kind", help="model kind (fnn, qml-angle, qml-amplitude)")
    run.add_argument("--epochs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--qubits", type=int)
    run.add_argument("--data", help="CSV dataset (switches data.source to csv)")
    run.add_argument("--timing", action="store_true", help="record wall-clock seconds per epoch")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--force", action="store_true", help="overwrite reports in a non-empty run directory")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="fold x epoch Diebold-Mariano grid between two runs")
    cmp_.add_argument("run_a", help="run directory or residual CSV")
    cmp_.add_argument("run_b", help="run directory or residual CSV")
    cmp_.add_argument("--out", required=True, help="grid CSV path")
    cmp_.add_argument("--critical-value", type=float, default=DEFAULT_CRITICAL_VALUE)
    cmp_.add_argument("--force", action="store_true")
    cmp_.set_defaults(func=cmd_compare)

    pc = sub.add_parser("paramcount", help="count trainable parameters")
    pc.add_argument("--kind", default="QmlAmplitude")
    pc.add_argument("--input-dim", type=int, default=256)
    pc.add_argument("--hidden-dim", type=int)
    pc.add_argument("--qubits", type=int, default=8)
    pc.add_argument("--second-hidden", type=int, default=8)
    pc.add_argument("--layers", type=int, default=1)
    pc.add_argument("--table", action="store_true", help="print every reference row")
    pc.set_defaults(func=cmd_paramcount)

    gen = sub.add_parser("gen-data", help="write a synthetic recovery-rate CSV")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n-obs", type=int, default=1725)
    gen.add_argument("--n-features", type=int, default=256)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_gen_data)

    ne = sub.add_parser("noise-eval", help="evaluate a checkpoint under the noise model")
    ne.add_argument("--checkpoint", required=True)
    ne.add_argument("--out", required=True)
    ne.add_argument("--config", help="config overriding the one stored in the checkpoint")
    ne.add_argument("--limit", type=int, help="evaluate only the first N rows")
    for key in NoiseParams().to_dict():
        ne.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    ne.add_argument("--noisy-encoding", dest="noisy_encoding", action="store_true", default=None)
    ne.add_argument("--clean-encoding", dest="noisy_encoding", action="store_false")
    ne.add_argument("--threads", type=int, default=1)
    ne.add_argument("--force", action="store_true")
    ne.set_defaults(func=cmd_noise_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MissingFile, UsageError, SpecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (QRecoverError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
