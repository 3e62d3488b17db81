"""Density-matrix simulation of the circuits under a per-gate noise model.

A density matrix on ``n`` qubits is stored row-major as a vector of length
``4**n``: qubits ``0..n-1`` index rows and ``n..2n-1`` index columns, so
``K rho K^dagger`` is the local operator ``K (x) conj(K)`` on the qubit pairs
``(q, n + q)``.  Gates and the channels that follow them are fused into one
such superoperator before being applied.

Noise placement: after every single-qubit gate the touched qubit passes
through Depol1Q, AmpDamp, Dephase (in that order); after every CNOT the pair
passes through Depol2Q.  Readout error is symmetric and scales each ``<Z>``
by ``1 - 2 p_readout``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from ._kernels import apply_local
from .encoders import mottonen_angles, mottonen_ops, normalized_amplitudes, amplitude_vjp
from .errors import ChannelError, ConfigError, EmptyBatchError, ShapeError, SpecError
from .pqc import PqcParams, pqc_ops
from .statesim import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    Op,
    QuantumState,
    cnot_permutation,
    op_matrix,
    z_sign_table,
)

KRAUS_TOL = 1e-10
CHANNEL_KINDS = ("Depol1Q", "Depol2Q", "AmpDamp", "Dephase")
_PAULIS = (np.eye(2, dtype=complex), PAULI_X, PAULI_Y, PAULI_Z)


@dataclass
class NoiseParams:
    p_depol_1q: float = 0.0009
    p_depol_2q: float = 0.0142
    p_amp_damp: float = 0.00023
    p_dephase: float = 0.00037
    p_readout: float = 0.051

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not 0.0 <= value <= 1.0:
                raise ChannelError(f"{f.name} must be a probability, got {value}")
            setattr(self, f.name, value)

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_mapping(cls, values: Mapping) -> "NoiseParams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown noise keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DensityMatrix:
    n_qubits: int
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        dim = 2**self.n_qubits
        if self.rho.shape != (dim, dim):
            raise ShapeError(f"rho must be {dim}x{dim}, got {self.rho.shape}")

    @classmethod
    def from_state(cls, state: QuantumState) -> "DensityMatrix":
        psi = state.amplitudes
        return cls(state.n_qubits, np.outer(psi, psi.conj()))

    def trace(self) -> complex:
        return complex(np.trace(self.rho))

    def physical_violations(self, tol: float = 1e-9) -> list[str]:
        """Empty when rho is Hermitian, unit-trace and PSD within tolerance."""
        problems = []
        if np.max(np.abs(self.rho - self.rho.conj().T)) > 1e-12:
            problems.append("not Hermitian")
        if abs(self.trace() - 1.0) > tol:
            problems.append(f"trace {self.trace():.3g}")
        hermitian = (self.rho + self.rho.conj().T) / 2
        if np.linalg.eigvalsh(hermitian).min() < -tol:
            problems.append("negative eigenvalue")
        return problems

    def expval_z(self) -> np.ndarray:
        probs = np.real(np.diag(self.rho))
        return probs @ z_sign_table(self.n_qubits)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ChannelError(f"channel probability must be in [0, 1], got {p}")
    return p


def channel(kind: str, p: float) -> list[np.ndarray]:
    """Kraus operators for one of the supported noise channels."""
    p = _check_p(p)
    eye = np.eye(2, dtype=complex)
    if kind == "Depol1Q":
        return [np.sqrt(1 - p) * eye] + [np.sqrt(p / 3) * P for P in _PAULIS[1:]]
    if kind == "Depol2Q":
        ops = [np.sqrt(1 - p) * np.eye(4, dtype=complex)]
        for a, b in product(range(4), repeat=2):
            if (a, b) != (0, 0):
                ops.append(np.sqrt(p / 15) * np.kron(_PAULIS[a], _PAULIS[b]))
        return ops
    if kind == "AmpDamp":
        k0 = np.array([[1, 0], [0, np.sqrt(1 - p)]], dtype=complex)
        k1 = np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex)
        return [k0, k1]
    if kind == "Dephase":
        return [np.sqrt(1 - p) * eye, np.sqrt(p) * PAULI_Z]
    raise ChannelError(f"unknown channel kind {kind!r}")


def kraus_completeness_error(kraus_set: Sequence[np.ndarray]) -> float:
    kraus_set = [np.asarray(k, dtype=complex) for k in kraus_set]
    dim = kraus_set[0].shape[0]
    total = sum(k.conj().T @ k for k in kraus_set)
    return float(np.max(np.abs(total - np.eye(dim))))


def superoperator(kraus_set: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i K_i (x) conj(K_i)``, acting on (row qubits, column qubits)."""
    return sum(np.kron(k, k.conj()) for k in np.asarray(kraus_set, dtype=complex))


def _apply_super(vec: np.ndarray, n_qubits: int, qubits: Sequence[int], mats: np.ndarray) -> np.ndarray:
    wires = np.array(list(qubits) + [n_qubits + q for q in qubits], dtype=np.int64)
    size = 4 ** len(qubits)
    mats = np.ascontiguousarray(mats, dtype=complex).reshape((-1, size, size))
    src = np.ascontiguousarray(vec)
    if mats.shape[0] not in (1, src.shape[0]):
        raise ShapeError(f"{mats.shape[0]} superoperators for {src.shape[0]} states")
    dst = np.empty_like(src)
    apply_local(src, dst, 2 * n_qubits, wires, mats)
    return dst


def apply_kraus(rho: DensityMatrix, qubits: Sequence[int] | int, kraus_set: Sequence[np.ndarray]) -> DensityMatrix:
    qubits = [qubits] if np.isscalar(qubits) else list(qubits)
    if len(set(qubits)) != len(qubits) or any(not 0 <= q < rho.n_qubits for q in qubits):
        raise ChannelError(f"invalid qubits {qubits} for a {rho.n_qubits}-qubit register")
    kraus_set = [np.asarray(k, dtype=complex) for k in kraus_set]
    size = 2 ** len(qubits)
    if not kraus_set or any(k.shape != (size, size) for k in kraus_set):
        raise ChannelError(f"Kraus operators must be {size}x{size}")
    err = kraus_completeness_error(kraus_set)
    if err > KRAUS_TOL:
        raise ChannelError(f"Kraus set is not trace preserving (completeness error {err:.3g})")
    vec = rho.rho.reshape(1, -1)
    out = _apply_super(vec, rho.n_qubits, qubits, superoperator(kraus_set))
    return DensityMatrix(rho.n_qubits, out.reshape(rho.rho.shape))


# ---------------------------------------------------------------------------
# Noisy circuit execution
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _noise_supers(noise_key: tuple) -> tuple[np.ndarray, np.ndarray]:
    p1, p2, pa, pd = noise_key
    single = (
        superoperator(channel("Dephase", pd))
        @ superoperator(channel("AmpDamp", pa))
        @ superoperator(channel("Depol1Q", p1))
    )
    return single, superoperator(channel("Depol2Q", p2))


def _gate_super(u: np.ndarray) -> np.ndarray:
    """Batched ``U (x) conj(U)`` for matrices of shape ``(..., 2, 2)``."""
    return np.einsum("...ij,...kl->...ikjl", u, u.conj()).reshape(u.shape[:-2] + (4, 4))


def pure_density_vectors(amps: np.ndarray) -> np.ndarray:
    """Row-major ``vec(|psi><psi|)`` for a batch of states, shape ``(B, 4**n)``."""
    amps = np.atleast_2d(np.asarray(amps, dtype=complex))
    return (amps[:, :, None] * amps.conj()[:, None, :]).reshape(amps.shape[0], -1)


def run_noisy_ops(vec: np.ndarray, n_qubits: int, ops: Sequence[Op], noise: NoiseParams, noisy=None) -> np.ndarray:
    """Push a batch of vectorised density matrices through ``ops``.

    ``noisy`` is an optional per-op sequence of booleans; gates flagged False
    are applied without their trailing channels.
    """
    single, double = _noise_supers((noise.p_depol_1q, noise.p_depol_2q, noise.p_amp_damp, noise.p_dephase))
    for i, op in enumerate(ops):
        with_noise = True if noisy is None else noisy[i]
        if op.kind == "CNOT":
            perm = cnot_permutation(n_qubits, *op.wires)
            dim = 2**n_qubits
            vec = vec.reshape(-1, dim, dim)[:, perm][:, :, perm].reshape(vec.shape)
            if with_noise and noise.p_depol_2q > 0:
                vec = _apply_super(vec, n_qubits, op.wires, double)
            continue
        sup = _gate_super(op_matrix(op))
        if with_noise:
            sup = single @ sup
        vec = _apply_super(vec, n_qubits, op.wires, sup)
    return vec


def readout_expvals(vec: np.ndarray, n_qubits: int, p_readout: float) -> np.ndarray:
    dim = 2**n_qubits
    probs = np.real(vec.reshape(-1, dim, dim).diagonal(axis1=1, axis2=2))
    return (1.0 - 2.0 * p_readout) * (probs @ z_sign_table(n_qubits))


def noisy_pqc_expvals(input_state: QuantumState, params: PqcParams, noise: NoiseParams) -> np.ndarray:
    """Noisy ``<Z_i>`` after the PQC, starting from the pure input state."""
    if input_state.n_qubits != params.n_qubits:
        raise ShapeError(f"state has {input_state.n_qubits} qubits, circuit expects {params.n_qubits}")
    vec = pure_density_vectors(input_state.amplitudes)
    vec = run_noisy_ops(vec, params.n_qubits, pqc_ops(params), noise)
    return readout_expvals(vec, params.n_qubits, noise.p_readout)[0]


def noisy_pqc_expvals_batch(amps: np.ndarray, params: PqcParams, noise: NoiseParams) -> np.ndarray:
    vec = pure_density_vectors(amps)
    vec = run_noisy_ops(vec, params.n_qubits, pqc_ops(params), noise)
    return readout_expvals(vec, params.n_qubits, noise.p_readout)


# ---------------------------------------------------------------------------
# Noisy hybrid models
# ---------------------------------------------------------------------------

def _zero_vectors(batch: int, n_qubits: int) -> np.ndarray:
    vec = np.zeros((batch, 4**n_qubits), dtype=complex)
    vec[:, 0] = 1.0
    return vec


def _encoded_expvals(kind: str, encoded: np.ndarray, params: PqcParams, noise: NoiseParams, noisy_encoding: bool):
    """``<Z>`` for a batch given the encoder input.

    ``encoded`` holds unit-norm padded amplitudes (QmlAmplitude) or RX angles
    (QmlAngle).
    """
    n = params.n_qubits
    if kind == "QmlAmplitude":
        if noisy_encoding:
            enc_ops = mottonen_ops(mottonen_angles(encoded, n), n)
            vec = _zero_vectors(len(encoded), n)
        else:
            enc_ops = []
            vec = pure_density_vectors(encoded)
    else:
        enc_ops = [Op("RX", (q,), encoded[:, q]) for q in range(n)]
        vec = _zero_vectors(len(encoded), n)
    body = pqc_ops(params)
    flags = [noisy_encoding] * len(enc_ops) + [True] * len(body)
    vec = run_noisy_ops(vec, n, enc_ops + body, noise, flags)
    return readout_expvals(vec, n, noise.p_readout)


def _check_quantum(model) -> None:
    if model.spec.kind not in ("QmlAmplitude", "QmlAngle"):
        raise SpecError("noisy evaluation needs a QmlAmplitude or QmlAngle model")


def _encoder_input(model, hidden: np.ndarray) -> np.ndarray:
    if model.spec.kind == "QmlAmplitude":
        return normalized_amplitudes(hidden, model.spec.n_qubits)
    return hidden @ model.params["aux.W"].T


def noisy_feature_fn(noise: NoiseParams, noisy_encoding: bool = True):
    """A ``feature_fn`` hook for ``hybrid.forward_batch``/``predict``."""

    def features(model, hidden):
        _check_quantum(model)
        return _encoded_expvals(
            model.spec.kind, _encoder_input(model, hidden), model.pqc(), noise, noisy_encoding
        )

    return features


def noisy_predict(model, X, noise: NoiseParams, noisy_encoding: bool = True, chunk: int = 64) -> np.ndarray:
    from .hybrid import predict

    _check_quantum(model)
    return predict(model, X, chunk=chunk, feature_fn=noisy_feature_fn(noise, noisy_encoding))


def noisy_train_gradient(model, X, y, noise: NoiseParams, noisy_encoding: bool = True, fd_step: float = 1e-5):
    """Batch-MSE gradients with the quantum block evaluated under noise.

    PQC angles use the two-term shift rule, which stays exact because the
    channels after each gate do not depend on its angle.  The RX angles of
    the angle encoder are shifted the same way.  For amplitude encoding the
    Jacobian w.r.t. the encoded vector is taken by central differences and
    chained through the normalisation.  Returns ``(grads, preds)``.
    """
    from .classical import dense_backward, dense_forward, leaky_relu, leaky_relu_grad

    _check_quantum(model)
    spec = model.spec
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    params = model.pqc()
    pre1 = dense_forward(model.layer("hidden"), X)
    h1 = leaky_relu(pre1, spec.leaky_slope)
    encoded = _encoder_input(model, h1)

    def expvals(enc, pqc=params):
        return _encoded_expvals(spec.kind, enc, pqc, noise, noisy_encoding)

    feats = expvals(encoded)
    preds = dense_forward(model.layer("out"), feats)[:, 0]
    g = 2.0 * (preds - y) / len(y)
    grads: dict[str, np.ndarray] = {}
    grad_feats, grads["out.W"], grads["out.b"] = dense_backward(model.layer("out"), feats, g[:, None])

    shift = np.pi / 2
    grad_thetas = np.zeros_like(params.thetas)
    for idx in np.ndindex(params.thetas.shape):
        plus, minus = params.thetas.copy(), params.thetas.copy()
        plus[idx] += shift
        minus[idx] -= shift
        diff = expvals(encoded, params.with_thetas(plus)) - expvals(encoded, params.with_thetas(minus))
        grad_thetas[idx] = np.sum(grad_feats * diff) / 2
    grads["pqc.thetas"] = grad_thetas

    if spec.kind == "QmlAmplitude":
        grad_amps = np.zeros_like(encoded)
        for j in range(h1.shape[1]):
            plus, minus = encoded.copy(), encoded.copy()
            plus[:, j] += fd_step
            minus[:, j] -= fd_step
            plus /= np.linalg.norm(plus, axis=1, keepdims=True)
            minus /= np.linalg.norm(minus, axis=1, keepdims=True)
            diff = (expvals(plus) - expvals(minus)) / (2 * fd_step)
            grad_amps[:, j] = np.sum(grad_feats * diff, axis=1)
        grad_h1 = amplitude_vjp(h1, grad_amps)
    else:
        grad_angles = np.zeros_like(encoded)
        for q in range(spec.n_qubits):
            plus, minus = encoded.copy(), encoded.copy()
            plus[:, q] += shift
            minus[:, q] -= shift
            diff = (expvals(plus) - expvals(minus)) / 2
            grad_angles[:, q] = np.sum(grad_feats * diff, axis=1)
        grads["aux.W"] = grad_angles.T @ h1
        grad_h1 = grad_angles @ model.params["aux.W"]

    grad_pre1 = grad_h1 * leaky_relu_grad(pre1, spec.leaky_slope)
    _, grads["hidden.W"], grads["hidden.b"] = dense_backward(model.layer("hidden"), X, grad_pre1)
    return {name: grads[name] for name in model.params}, preds


def noisy_grad_fn(noise: NoiseParams, noisy_encoding: bool = True):
    """A ``grad_fn`` hook for ``hybrid.train``."""

    def grad_fn(model, X, y):
        return noisy_train_gradient(model, X, y, noise, noisy_encoding)

    return grad_fn


def noisy_predict_fn(noise: NoiseParams, noisy_encoding: bool = True):
    """A ``predict_fn`` hook for ``hybrid.train``."""

    def predict_fn(model, X):
        return noisy_predict(model, X, noise, noisy_encoding)

    return predict_fn
