"""Exact state-vector simulation.

Basis index ``i`` of an ``n``-qubit register stores qubit 0 in its most
significant bit, so ``|b_0 b_1 ... b_{n-1}>`` has index ``sum(b_k << (n-1-k))``.

The low-level kernels (``apply_matrix``, ``apply_cnot_array``,
``z_expectations``) operate on arrays shaped ``(..., 2**n)`` so a whole batch
of states can be pushed through one circuit at once.  ``QuantumState`` and the
``apply_1q``/``apply_cnot``/``expval_z`` functions are the single-state API on
top of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._kernels import apply_2x2
from .errors import ArityError, CapacityError, QubitIndexError, ShapeError

MAX_QUBITS = 24

_I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass
class QuantumState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ShapeError(
                f"{self.n_qubits} qubits need {2**self.n_qubits} amplitudes, "
                f"got shape {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "QuantumState":
        return QuantumState(self.n_qubits, self.amplitudes.copy())


@dataclass(frozen=True)
class Gate1Q:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ShapeError(f"single-qubit gate must be 2x2, got {m.shape}")
        if np.max(np.abs(m.conj().T @ m - _I2)) > 1e-12:
            raise ValueError("gate matrix is not unitary")
        object.__setattr__(self, "matrix", m)


def _check_n(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")


def _check_qubit(n_qubits: int, qubit: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range for {n_qubits} qubits")


def new_zero_state(n_qubits: int) -> QuantumState:
    _check_n(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return QuantumState(n_qubits, amps)


# Rotation matrices.  Each accepts a scalar or an array of angles; array input
# yields a stack of matrices with shape angles.shape + (2, 2).

def rx_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    out[..., 1, 1] = c
    return out


def ry_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def rz_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * theta)
    out[..., 1, 1] = np.exp(0.5j * theta)
    return out


def rot_matrix(alpha, beta, gamma):
    """``RZ(gamma) @ RY(beta) @ RZ(alpha)``: RZ(alpha) acts first."""
    return rz_matrix(gamma) @ ry_matrix(beta) @ rz_matrix(alpha)


_ROTATIONS = {"RX": (1, rx_matrix), "RY": (1, ry_matrix), "RZ": (1, rz_matrix), "ROT": (3, rot_matrix)}


def make_rotation(kind: str, angles: Sequence[float] | float) -> Gate1Q:
    kind = kind.upper()
    if kind not in _ROTATIONS:
        raise ValueError(f"unknown rotation kind {kind!r}")
    arity, build = _ROTATIONS[kind]
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.shape != (arity,):
        raise ArityError(f"{kind} takes {arity} angle(s), got {angles.size}")
    return Gate1Q(build(*angles))


# ---------------------------------------------------------------------------
# Array kernels
# ---------------------------------------------------------------------------

def apply_matrix(amps: np.ndarray, n_qubits: int, qubit: int, matrix: np.ndarray) -> np.ndarray:
    """Apply a 2x2 matrix (or a per-state stack of them) to ``qubit``.

    ``amps`` has shape ``(..., 2**n)``.  ``matrix`` is ``(2, 2)`` or
    ``(..., 2, 2)`` matching the leading axes of ``amps``.  Returns a new array.
    """
    lead = amps.shape[:-1]
    src = np.ascontiguousarray(amps, dtype=complex).reshape((-1, 2**n_qubits))
    mats = np.ascontiguousarray(matrix, dtype=complex).reshape((-1, 2, 2))
    if mats.shape[0] not in (1, src.shape[0]):
        raise ShapeError(f"{mats.shape[0]} gate matrices for {src.shape[0]} states")
    dst = np.empty_like(src)
    apply_2x2(src, dst, n_qubits, qubit, mats)
    return dst.reshape(lead + (2**n_qubits,))


@lru_cache(maxsize=None)
def cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    cbit = 1 << (n_qubits - 1 - control)
    tbit = 1 << (n_qubits - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


def apply_cnot_array(amps: np.ndarray, n_qubits: int, control: int, target: int) -> np.ndarray:
    return amps[..., cnot_permutation(n_qubits, control, target)]


def z_expectation(amps: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    probs = (amps.real**2 + amps.imag**2).reshape(amps.shape[:-1] + (2**qubit, 2, -1))
    return probs[..., 0, :].sum(axis=(-2, -1)) - probs[..., 1, :].sum(axis=(-2, -1))


def z_expectations(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """All single-qubit ``<Z_q>``; output shape ``amps.shape[:-1] + (n,)``."""
    probs = amps.real**2 + amps.imag**2
    tensor = probs.reshape(probs.shape[:-1] + (2,) * n_qubits)
    lead = probs.ndim - 1
    out = np.empty(probs.shape[:-1] + (n_qubits,))
    for q in range(n_qubits):
        axes = tuple(lead + k for k in range(n_qubits) if k != q)
        marg = tensor.sum(axis=axes) if axes else tensor
        out[..., q] = marg[..., 0] - marg[..., 1]
    return out


@lru_cache(maxsize=None)
def z_sign_table(n_qubits: int) -> np.ndarray:
    """``table[i, q]`` is the eigenvalue of ``Z_q`` on basis state ``i``."""
    idx = np.arange(2**n_qubits)
    bits = (idx[:, None] >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1
    table = 1.0 - 2.0 * bits
    table.setflags(write=False)
    return table


def apply_z_weighted(amps: np.ndarray, n_qubits: int, weights: np.ndarray) -> np.ndarray:
    """Compute ``(sum_q w_q Z_q) |psi>`` with per-state weights ``(..., n)``."""
    diag = np.asarray(weights, dtype=float) @ z_sign_table(n_qubits).T
    return diag * amps


# ---------------------------------------------------------------------------
# Gate lists
# ---------------------------------------------------------------------------

class Op(NamedTuple):
    """One elementary gate.

    ``kind`` is one of RX, RY, RZ, ROT, CNOT.  ``wires`` is ``(qubit,)`` or
    ``(control, target)``.  ``param`` is a float or a per-state array of
    angles (ROT: a length-3 sequence of those), or None for CNOT.  ``tag`` lets callers map gradients back to their own
    parameter layout.
    """

    kind: str
    wires: tuple
    param: object = None
    tag: object = None


_OP_MATRIX = {"RX": rx_matrix, "RY": ry_matrix, "RZ": rz_matrix}
GENERATORS = {"RX": PAULI_X, "RY": PAULI_Y, "RZ": PAULI_Z}


def op_matrix(op: Op, inverse: bool = False) -> np.ndarray:
    if op.kind == "ROT":
        m = rot_matrix(*op.param)
        return np.swapaxes(m, -1, -2).conj() if inverse else m
    angle = np.asarray(op.param, dtype=float)
    return _OP_MATRIX[op.kind](-angle if inverse else angle)


def apply_op(amps: np.ndarray, n_qubits: int, op: Op, inverse: bool = False) -> np.ndarray:
    if op.kind == "CNOT":
        return apply_cnot_array(amps, n_qubits, *op.wires)
    return apply_matrix(amps, n_qubits, op.wires[0], op_matrix(op, inverse))


def run_ops(amps: np.ndarray, n_qubits: int, ops: Iterable[Op]) -> np.ndarray:
    for op in ops:
        amps = apply_op(amps, n_qubits, op)
    return amps


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------

def apply_1q(state: QuantumState, qubit: int, gate: Gate1Q) -> QuantumState:
    _check_qubit(state.n_qubits, qubit)
    state.amplitudes = apply_matrix(state.amplitudes, state.n_qubits, qubit, gate.matrix)
    return state


def apply_cnot(state: QuantumState, control: int, target: int) -> QuantumState:
    _check_qubit(state.n_qubits, control)
    _check_qubit(state.n_qubits, target)
    if control == target:
        raise QubitIndexError("control and target must differ")
    state.amplitudes = apply_cnot_array(state.amplitudes, state.n_qubits, control, target)
    return state


def expval_z(state: QuantumState, qubit: int) -> float:
    _check_qubit(state.n_qubits, qubit)
    val = float(z_expectation(state.amplitudes, state.n_qubits, qubit))
    return min(1.0, max(-1.0, val))
