"""Classical-to-quantum data encoders.

Amplitude encoding uses the Möttönen et al. construction restricted to R_y
rotations: one uniformly-controlled R_y per qubit, each decomposed into
alternating R_y / CNOT pairs along a Gray-code sequence.  The last level
uses a signed ``atan2`` so real amplitudes of either sign are reproduced
without an R_z phase stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import pad_pow2
from .errors import EncodingError
from .statesim import Op, QuantumState, new_zero_state, run_ops

ZERO_NORM_TOL = 1e-12


@dataclass
class EncodingPlan:
    n_qubits: int
    scheme: str  # "Amplitude" or "Angle"
    ry_angle_tree: np.ndarray | None = None
    angles: np.ndarray | None = None

    def ops(self) -> list[Op]:
        if self.scheme == "Amplitude":
            return mottonen_ops(self.ry_angle_tree, self.n_qubits)
        return [Op("RX", (q,), self.angles[..., q]) for q in range(self.n_qubits)]


def _prepare_amplitudes(features, n_qubits: int) -> np.ndarray:
    v = np.asarray(features, dtype=float)
    if v.shape[-1] > 2**n_qubits:
        raise EncodingError("Overflow", f"{v.shape[-1]} features exceed 2**{n_qubits} amplitudes")
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < ZERO_NORM_TOL):
        raise EncodingError("ZeroNorm", "cannot amplitude-encode a zero vector")
    padded = np.zeros(v.shape[:-1] + (2**n_qubits,))
    padded[..., : v.shape[-1]] = v / norms
    return padded


def normalized_amplitudes(features, n_qubits: int) -> np.ndarray:
    """Zero-pad to ``2**n_qubits`` and L2-normalise (batched over leading axes)."""
    return _prepare_amplitudes(features, n_qubits)


def mottonen_angles(amplitudes: np.ndarray, n_qubits: int) -> np.ndarray:
    """Level-order tree of uniformly-controlled R_y angles, shape ``(..., 2**n - 1)``.

    Level ``k`` (controls ``0..k-1``, target ``k``) contributes ``2**k``
    angles indexed by the control value.
    """
    a = np.asarray(amplitudes, dtype=float)
    lead = a.shape[:-1]
    levels = []
    for k in range(n_qubits):
        block = a.reshape(lead + (2**k, 2, 2 ** (n_qubits - k - 1)))
        if k == n_qubits - 1:
            r0, r1 = block[..., 0, 0], block[..., 1, 0]
        else:
            r0 = np.linalg.norm(block[..., 0, :], axis=-1)
            r1 = np.linalg.norm(block[..., 1, :], axis=-1)
        levels.append(2.0 * np.arctan2(r1, r0))
    return np.concatenate(levels, axis=-1)


def gray_code(i: int) -> int:
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def _ucr_tables(k: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Angle transform and CNOT controls for a ``k``-control uniformly-controlled rotation.

    Returns ``(transform, controls)`` with ``thetas = alphas @ transform`` and
    ``controls[i]`` the control qubit of the CNOT following rotation ``i``.
    """
    size = 2**k
    codes = [gray_code(i) for i in range(size)]
    signs = np.array(
        [[(-1) ** bin(j & g).count("1") for g in codes] for j in range(size)], dtype=float
    )
    transform = signs / size
    controls = []
    for i in range(size):
        flipped = codes[i] ^ codes[(i + 1) % size]
        pos = flipped.bit_length() - 1
        controls.append(k - 1 - pos)
    transform.setflags(write=False)
    return transform, tuple(controls)


def mottonen_ops(angle_tree: np.ndarray, n_qubits: int) -> list[Op]:
    """Elementary gate list preparing the state described by ``angle_tree`` from |0...0>.

    Angles may carry leading batch axes, in which case every gate parameter
    is a per-state array.
    """
    tree = np.asarray(angle_tree, dtype=float)
    ops: list[Op] = []
    start = 0
    for k in range(n_qubits):
        alphas = tree[..., start : start + 2**k]
        start += 2**k
        if k == 0:
            ops.append(Op("RY", (0,), alphas[..., 0]))
            continue
        transform, controls = _ucr_tables(k)
        thetas = alphas @ transform
        for i, ctrl in enumerate(controls):
            ops.append(Op("RY", (k,), thetas[..., i]))
            ops.append(Op("CNOT", (ctrl, k)))
    return ops


def amplitude_plan(features, n_qubits: int) -> EncodingPlan:
    amps = _prepare_amplitudes(features, n_qubits)
    return EncodingPlan(n_qubits, "Amplitude", ry_angle_tree=mottonen_angles(amps, n_qubits))


def amplitude_encode(features, n_qubits: int) -> QuantumState:
    """Prepare ``|psi>`` whose amplitudes are the padded, normalised features.

    The state is built by running the Möttönen circuit on ``|0...0>``.
    """
    plan = amplitude_plan(features, n_qubits)
    if plan.ry_angle_tree.ndim != 1:
        raise EncodingError("Overflow", "amplitude_encode takes a single feature vector")
    state = new_zero_state(n_qubits)
    state.amplitudes = run_ops(state.amplitudes, n_qubits, plan.ops())
    return state


def angle_encode(xs) -> QuantumState:
    xs = np.asarray(xs, dtype=float).ravel()
    n = xs.size
    state = new_zero_state(n)
    plan = EncodingPlan(n, "Angle", angles=xs)
    state.amplitudes = run_ops(state.amplitudes, n, plan.ops())
    return state


def angle_product_states(angles: np.ndarray) -> np.ndarray:
    """Batched ``prod_q RX(x_q)|0>`` as amplitude arrays, shape ``(B, 2**n)``."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    out = np.ones((angles.shape[0], 1), dtype=complex)
    for q in range(angles.shape[1]):
        local = np.stack([np.cos(angles[:, q] / 2), -1j * np.sin(angles[:, q] / 2)], axis=-1)
        out = (out[:, :, None] * local[:, None, :]).reshape(angles.shape[0], -1)
    return out


def amplitude_state_jacobian(features, n_qubits: int) -> np.ndarray:
    """Jacobian of the pad-and-normalise map, shape ``(2**n, len(features))``."""
    v = np.asarray(features, dtype=float)
    _prepare_amplitudes(v, n_qubits)
    r = np.linalg.norm(v)
    block = (np.eye(v.size) * r - np.outer(v, v) / r) / r**2
    jac = np.zeros((2**n_qubits, v.size))
    jac[: v.size] = block
    return jac


def amplitude_vjp(features: np.ndarray, grad_amplitudes: np.ndarray) -> np.ndarray:
    """Row-wise ``J(v)^T g`` without forming J.

    ``features`` is ``(B, m)``; ``grad_amplitudes`` is ``(B, >=m)`` and any
    padding columns are ignored (their Jacobian rows are zero).
    """
    v = np.asarray(features, dtype=float)
    g = np.asarray(grad_amplitudes, dtype=float)[..., : v.shape[-1]]
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    a = v / r
    return (g - a * np.sum(a * g, axis=-1, keepdims=True)) / r


__all__ = [
    "EncodingPlan",
    "amplitude_encode",
    "amplitude_plan",
    "amplitude_state_jacobian",
    "amplitude_vjp",
    "angle_encode",
    "angle_product_states",
    "mottonen_angles",
    "mottonen_ops",
    "normalized_amplitudes",
    "pad_pow2",
]
