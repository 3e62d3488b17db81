"""The three regression architectures, their gradients, and the training loop.

FNN:           dense(in->hidden)+LReLU -> dense(hidden->h2)+LReLU -> dense(h2->1)
QmlAmplitude:  dense(in->hidden)+LReLU -> amplitude encode -> PQC -> <Z> -> dense(n->1)
QmlAngle:      dense(in->hidden)+LReLU -> dense(hidden->n, no bias) -> RX encode
               -> PQC -> <Z> -> dense(n->1)
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classical import (
    DEFAULT_SLOPE,
    AdamState,
    DenseLayer,
    adam_step,
    dense_backward,
    dense_forward,
    leaky_relu,
    leaky_relu_grad,
    mse_and_rmse,
)
from .encoders import amplitude_vjp, angle_product_states, normalized_amplitudes
from .errors import EmptyBatchError, ShapeError, SpecError
from .pqc import PqcParams, adjoint_gradient_batch, circuit_adjoint, pqc_forward_batch, pqc_ops
from .statesim import MAX_QUBITS, Op, z_expectations

KINDS = ("FNN", "QmlAngle", "QmlAmplitude")
_KIND_ALIASES = {
    "fnn": "FNN",
    "qml-angle": "QmlAngle",
    "qmlangle": "QmlAngle",
    "angle": "QmlAngle",
    "qml-amplitude": "QmlAmplitude",
    "qmlamplitude": "QmlAmplitude",
    "amplitude": "QmlAmplitude",
}

CHECKPOINT_FORMAT = "qrecover.checkpoint"
CHECKPOINT_VERSION = 1


def normalize_kind(kind: str) -> str:
    if kind in KINDS:
        return kind
    try:
        return _KIND_ALIASES[kind.lower()]
    except KeyError:
        raise SpecError(f"unknown model kind {kind!r}") from None


@dataclass
class ModelSpec:
    kind: str = "QmlAmplitude"
    input_dim: int = 256
    hidden_dim: int | None = None
    n_qubits: int = 8
    fnn_second_hidden: int = 8
    pqc_layers: int = 1
    leaky_slope: float = DEFAULT_SLOPE
    seed: int = 0

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        if self.hidden_dim is None:
            self.hidden_dim = self.input_dim

    def validate(self) -> "ModelSpec":
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise SpecError("input_dim and hidden_dim must be positive")
        if self.kind == "FNN":
            if self.fnn_second_hidden < 1:
                raise SpecError("fnn_second_hidden must be positive")
            return self
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise SpecError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        if self.pqc_layers < 1:
            raise SpecError("pqc_layers must be >= 1")
        if self.kind == "QmlAmplitude" and self.hidden_dim > 2**self.n_qubits:
            raise SpecError(
                f"hidden_dim {self.hidden_dim} does not fit in {self.n_qubits} qubits"
            )
        return self


def param_shapes(spec: ModelSpec) -> dict[str, tuple]:
    spec.validate()
    h = spec.hidden_dim
    shapes = {"hidden.W": (h, spec.input_dim), "hidden.b": (h,)}
    if spec.kind == "FNN":
        h2 = spec.fnn_second_hidden
        shapes.update({"fnn2.W": (h2, h), "fnn2.b": (h2,), "out.W": (1, h2), "out.b": (1,)})
        return shapes
    n = spec.n_qubits
    if spec.kind == "QmlAngle":
        shapes["aux.W"] = (n, h)
    shapes.update({"pqc.thetas": (spec.pqc_layers, n, 3), "out.W": (1, n), "out.b": (1,)})
    return shapes


def count_params(spec: ModelSpec) -> int:
    return int(sum(np.prod(s) for s in param_shapes(spec).values()))


@dataclass
class HybridModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def layer(self, name: str) -> DenseLayer:
        return DenseLayer(self.params[f"{name}.W"], self.params.get(f"{name}.b"))

    def pqc(self) -> PqcParams:
        return PqcParams(self.spec.n_qubits, self.spec.pqc_layers, self.params["pqc.thetas"])


def build_model(spec: ModelSpec) -> HybridModel:
    shapes = param_shapes(spec)
    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name == "pqc.thetas":
            params[name] = rng.uniform(0.0, 2 * np.pi, size=shape)
        elif name.endswith(".W"):
            layer = DenseLayer.init(shape[1], shape[0], f"{name[:-2]}.b" in shapes, rng)
            params[name] = layer.weights
            if layer.bias is not None:
                params[f"{name[:-2]}.b"] = layer.bias
    # keep the declared order
    params = {name: params[name] for name in shapes}
    return HybridModel(spec, params)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _as_batch(model: HybridModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != model.spec.input_dim:
        raise ShapeError(f"expected {model.spec.input_dim} features, got {X.shape[-1]}")
    return X


def angle_encoding_ops(angles: np.ndarray) -> list[Op]:
    return [Op("RX", (q,), angles[:, q], tag=("enc", q)) for q in range(angles.shape[1])]


def quantum_features(model: HybridModel, hidden: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Map the first hidden layer's activations to the PQC's ``<Z>`` vector."""
    spec = model.spec
    if spec.kind == "QmlAmplitude":
        amps = normalized_amplitudes(hidden, spec.n_qubits)
        final = pqc_forward_batch(amps, model.pqc())
        if cache is not None:
            cache["amps"], cache["final"] = amps, final
    else:
        angles = hidden @ model.params["aux.W"].T
        if cache is not None:
            cache["angles"] = angles
        final = pqc_forward_batch(angle_product_states(angles), model.pqc())
    return z_expectations(final, spec.n_qubits)


def forward_batch(model: HybridModel, X, cache: dict | None = None, feature_fn=None) -> np.ndarray:
    """Predictions for a ``(B, input_dim)`` batch.

    ``feature_fn(model, hidden)`` replaces the noiseless quantum block when given.
    """
    spec = model.spec
    X = _as_batch(model, X)
    pre1 = dense_forward(model.layer("hidden"), X)
    h1 = leaky_relu(pre1, spec.leaky_slope)
    if cache is not None:
        cache.update(X=X, pre1=pre1, h1=h1)
    if spec.kind == "FNN":
        pre2 = dense_forward(model.layer("fnn2"), h1)
        feats = leaky_relu(pre2, spec.leaky_slope)
        if cache is not None:
            cache["pre2"] = pre2
    elif feature_fn is not None:
        feats = feature_fn(model, h1)
    else:
        feats = quantum_features(model, h1, cache)
    if cache is not None:
        cache["feats"] = feats
    return dense_forward(model.layer("out"), feats)[:, 0]


def forward(model: HybridModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("forward takes a single feature vector")
    return float(forward_batch(model, x)[0])


def predict(model: HybridModel, X, chunk: int = 512, feature_fn=None) -> np.ndarray:
    X = _as_batch(model, X)
    return np.concatenate(
        [forward_batch(model, X[i : i + chunk], feature_fn=feature_fn) for i in range(0, len(X), chunk)]
    )


def _classical_tail(model, cache, grads, grad_h1):
    """Back-propagate from the first hidden activation to the input layer."""
    grad_pre1 = grad_h1 * leaky_relu_grad(cache["pre1"], model.spec.leaky_slope)
    _, gw, gb = dense_backward(model.layer("hidden"), cache["X"], grad_pre1)
    grads["hidden.W"], grads["hidden.b"] = gw, gb


def backward(model: HybridModel, X, y) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the batch MSE for every parameter.  Returns ``(grads, preds)``."""
    X = _as_batch(model, X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    spec = model.spec
    cache: dict = {}
    preds = forward_batch(model, X, cache)
    g = 2.0 * (preds - y) / len(y)
    grads: dict[str, np.ndarray] = {}
    feats = cache["feats"]
    grad_feats, gw, gb = dense_backward(model.layer("out"), feats, g[:, None])
    grads["out.W"], grads["out.b"] = gw, gb

    if spec.kind == "FNN":
        grad_pre2 = grad_feats * leaky_relu_grad(cache["pre2"], spec.leaky_slope)
        grad_h1, gw, gb = dense_backward(model.layer("fnn2"), cache["h1"], grad_pre2)
        grads["fnn2.W"], grads["fnn2.b"] = gw, gb
    elif spec.kind == "QmlAmplitude":
        _, grad_thetas, grad_input = adjoint_gradient_batch(
            cache["amps"], model.pqc(), grad_feats, cache["final"]
        )
        grads["pqc.thetas"] = grad_thetas
        grad_h1 = amplitude_vjp(cache["h1"], grad_input.real)
    else:
        angles = cache["angles"]
        ops = angle_encoding_ops(angles) + pqc_ops(model.pqc())
        init = np.zeros((len(y), 2**spec.n_qubits), dtype=complex)
        init[:, 0] = 1.0
        _, tag_grads, _ = circuit_adjoint(ops, spec.n_qubits, init, grad_feats)
        grad_thetas = np.zeros_like(model.params["pqc.thetas"])
        grad_angles = np.zeros_like(angles)
        for tag, val in tag_grads.items():
            if tag[0] == "enc":
                grad_angles[:, tag[1]] = val
            else:
                grad_thetas[tag] = val.sum(axis=0)
        grads["pqc.thetas"] = grad_thetas
        grads["aux.W"] = grad_angles.T @ cache["h1"]
        grad_h1 = grad_angles @ model.params["aux.W"]

    _classical_tail(model, cache, grads, grad_h1)
    return {name: grads[name] for name in model.params}, preds


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise SpecError("epochs and batch_size must be >= 1")


@dataclass
class TrainHistory:
    train_rmse: list[float] = field(default_factory=list)
    test_rmse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    test_residuals: list[np.ndarray] = field(default_factory=list)
    test_index: np.ndarray | None = None

    @property
    def final_residuals(self) -> np.ndarray:
        return self.test_residuals[-1]

    @property
    def epochs(self) -> int:
        return len(self.test_rmse)


GradFn = Callable[[HybridModel, np.ndarray, np.ndarray], "tuple[dict, np.ndarray]"]
PredictFn = Callable[[HybridModel, np.ndarray], np.ndarray]


def train(
    model: HybridModel,
    train_set: tuple[np.ndarray, np.ndarray],
    test_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    grad_fn: GradFn = backward,
    predict_fn: PredictFn = predict,
    clock: Callable[[], float] = time.perf_counter,
) -> TrainHistory:
    """Mini-batch Adam over shuffled epochs; the model's params are updated in place.

    Residuals are ``target - prediction`` on the test set after each epoch.
    """
    X_tr, y_tr = (np.asarray(a, dtype=float) for a in train_set)
    X_te, y_te = (np.asarray(a, dtype=float) for a in test_set)
    if len(y_tr) == 0 or len(y_te) == 0:
        raise EmptyBatchError("train and test sets must be non-empty")
    if X_tr.shape[1] != X_te.shape[1]:
        raise ShapeError("train/test feature widths differ")
    rng = np.random.default_rng(config.shuffle_seed)
    adam = AdamState(learning_rate=config.learning_rate)
    history = TrainHistory()
    for _ in range(config.epochs):
        start = clock()
        order = rng.permutation(len(y_tr))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            grads, _ = grad_fn(model, X_tr[idx], y_tr[idx])
            model.params, adam = adam_step(model.params, grads, adam)
        elapsed = clock() - start
        history.train_rmse.append(mse_and_rmse(predict_fn(model, X_tr), y_tr)[1])
        test_pred = predict_fn(model, X_te)
        history.test_rmse.append(mse_and_rmse(test_pred, y_te)[1])
        history.test_residuals.append(y_te - test_pred)
        history.seconds.append(elapsed)
    return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=blob["dtype"]).reshape(blob["shape"]).astype(float)


def save_checkpoint(model: HybridModel, path, rng_state: dict | None = None, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "params": {name: _encode_array(p) for name, p in model.params.items()},
        "rng_state": rng_state,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[HybridModel, dict | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SpecError(f"{path} is not a qrecover checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SpecError(f"unsupported checkpoint version {doc.get('version')}")
    spec = ModelSpec(**doc["spec"])
    params = {name: _decode_array(blob) for name, blob in doc["params"].items()}
    expected = param_shapes(spec)
    if {k: tuple(v.shape) for k, v in params.items()} != {k: tuple(v) for k, v in expected.items()}:
        raise SpecError("checkpoint tensors do not match the stored spec")
    return HybridModel(spec, params), doc.get("rng_state")
