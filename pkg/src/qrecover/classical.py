"""Dense layers, LeakyReLU, MSE/RMSE and Adam, with hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBatchError, ShapeError

DEFAULT_SLOPE = -0.3


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ShapeError("weights must be a matrix [out x in]")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float)
            if self.bias.shape != (self.weights.shape[0],):
                raise ShapeError(f"bias must have shape ({self.weights.shape[0]},)")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + (0 if self.bias is None else self.bias.size)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, bias: bool, rng: np.random.Generator) -> "DenseLayer":
        bound = np.sqrt(1.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim) if bias else None
        return cls(w, b)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """``W x + b`` for a vector, or row-wise for a ``(B, in)`` batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"expected input width {layer.in_dim}, got {x.shape[-1]}")
    out = x @ layer.weights.T
    if layer.bias is not None:
        out = out + layer.bias
    return out


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_weights, grad_bias)`` for a ``(B, in)`` batch."""
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0) if layer.bias is not None else None
    return grad_out @ layer.weights, grad_w, grad_b


def leaky_relu(x, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    # slope is applied verbatim, sign included
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0, slope)


def mse_and_rmse(preds, targets) -> tuple[float, float]:
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if preds.size == 0:
        raise EmptyBatchError("cannot score an empty batch")
    if preds.shape != targets.shape:
        raise ShapeError("preds and targets differ in length")
    mse = float(np.mean((preds - targets) ** 2))
    return mse, float(np.sqrt(mse))


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update.  ``params``/``grads`` map names to arrays."""
    if params.keys() != grads.keys():
        raise ShapeError("params and grads have different keys")
    for name in params:
        if np.shape(params[name]) != np.shape(grads[name]):
            raise ShapeError(f"gradient shape mismatch for {name!r}")
    state.step_count += 1
    t = state.step_count
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    updated = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        updated[name] = p - state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return updated, state
