"""Strongly-entangling parameterised circuit and its gradient engines.

Each layer applies ``ROT(alpha, beta, gamma) = RZ(gamma) RY(beta) RZ(alpha)``
to every qubit and then a ring of CNOTs ``q -> (q + 1) mod n``.  Every angle
enters through a single Pauli-generated exponential, which is what makes the
two-term shift rule exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError
from ._kernels import weighted_overlap_imag
from .statesim import (
    GENERATORS,
    PAULI_Y,
    Op,
    QuantumState,
    apply_matrix,
    apply_op,
    apply_z_weighted,
    op_matrix,
    run_ops,
    rz_matrix,
    z_expectations,
    z_sign_table,
)


@dataclass
class PqcParams:
    n_qubits: int
    n_layers: int
    thetas: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.thetas.shape != (self.n_layers, self.n_qubits, 3):
            raise ShapeError(
                f"thetas must have shape {(self.n_layers, self.n_qubits, 3)}, got {self.thetas.shape}"
            )

    @property
    def n_params(self) -> int:
        return self.thetas.size

    @classmethod
    def random(cls, n_qubits: int, n_layers: int = 1, rng=None) -> "PqcParams":
        rng = np.random.default_rng(rng)
        return cls(n_qubits, n_layers, rng.uniform(0.0, 2 * np.pi, size=(n_layers, n_qubits, 3)))

    @classmethod
    def zeros(cls, n_qubits: int, n_layers: int = 1) -> "PqcParams":
        return cls(n_qubits, n_layers, np.zeros((n_layers, n_qubits, 3)))

    def with_thetas(self, thetas) -> "PqcParams":
        return PqcParams(self.n_qubits, self.n_layers, thetas)


def pqc_ops(params: PqcParams) -> list[Op]:
    n = params.n_qubits
    ops = []
    for layer in range(params.n_layers):
        for q in range(n):
            ops.append(Op("ROT", (q,), params.thetas[layer, q], tag=(layer, q)))
        if n > 1:
            for q in range(n):
                ops.append(Op("CNOT", (q, (q + 1) % n)))
    return ops


def _check(state_qubits: int, params: PqcParams) -> None:
    if state_qubits != params.n_qubits:
        raise ShapeError(f"state has {state_qubits} qubits, circuit expects {params.n_qubits}")


def pqc_forward(state: QuantumState, params: PqcParams) -> QuantumState:
    _check(state.n_qubits, params)
    return QuantumState(state.n_qubits, run_ops(state.amplitudes, state.n_qubits, pqc_ops(params)))


def pqc_forward_batch(amps: np.ndarray, params: PqcParams) -> np.ndarray:
    return run_ops(np.asarray(amps, dtype=complex), params.n_qubits, pqc_ops(params))


def measure_all_z(state: QuantumState) -> np.ndarray:
    return np.clip(z_expectations(state.amplitudes, state.n_qubits), -1.0, 1.0)


def circuit_adjoint(
    ops: list[Op],
    n_qubits: int,
    init_amps: np.ndarray,
    upstream: np.ndarray,
    final_amps: np.ndarray | None = None,
):
    """Adjoint-mode derivative of ``sum_q upstream_q <Z_q>`` for a gate list.

    ``init_amps`` is ``(B, 2**n)`` and ``upstream`` is ``(B, n)``.  Pass
    ``final_amps`` to reuse an already computed forward pass.  Returns
    ``(final_amps, grads, grad_init)``: ``grads`` maps each parametrised op's
    tag to per-state derivatives, ``(B,)`` for single-angle gates and
    ``(B, 3)`` for ROT; ``grad_init`` is ``2 (U^dagger Lambda U) psi``.
    """
    if final_amps is None:
        final_amps = run_ops(np.asarray(init_amps, dtype=complex), n_qubits, ops)
    phi = final_amps
    lam = apply_z_weighted(phi, n_qubits, upstream)
    signs = z_sign_table(n_qubits)
    grads = {}
    for op in reversed(ops):
        if op.kind == "CNOT":
            phi = apply_op(phi, n_qubits, op)
            lam = apply_op(lam, n_qubits, op)
            continue
        q = op.wires[0]
        if op.kind == "ROT":
            z_q = np.ascontiguousarray(signs[:, q])
            g = np.empty((phi.shape[0], 3))
            g[:, 2] = weighted_overlap_imag(lam, phi, z_q)
            undo_gamma = rz_matrix(-np.asarray(op.param[2]))
            phi_m = apply_matrix(phi, n_qubits, q, undo_gamma)
            lam_m = apply_matrix(lam, n_qubits, q, undo_gamma)
            y_phi = apply_matrix(phi_m, n_qubits, q, PAULI_Y)
            g[:, 1] = np.einsum("bi,bi->b", lam_m.conj(), y_phi).imag
            u_dag = op_matrix(op, inverse=True)
            phi = apply_matrix(phi, n_qubits, q, u_dag)
            lam = apply_matrix(lam, n_qubits, q, u_dag)
            g[:, 0] = weighted_overlap_imag(lam, phi, z_q)
            grads[op.tag] = g
            continue
        # d/dtheta of exp(-i theta G / 2) gives Im<lam| G |phi_after>
        g_phi = apply_matrix(phi, n_qubits, q, GENERATORS[op.kind])
        grads[op.tag] = np.einsum("bi,bi->b", lam.conj(), g_phi).imag
        phi = apply_op(phi, n_qubits, op, inverse=True)
        lam = apply_op(lam, n_qubits, op, inverse=True)
    return final_amps, grads, 2.0 * lam


def adjoint_gradient_batch(amps: np.ndarray, params: PqcParams, upstream: np.ndarray, final_amps=None):
    """Batched adjoint gradient.

    Returns ``(expvals (B, n), grad_thetas summed over the batch, grad_input (B, 2**n))``.
    """
    amps = np.atleast_2d(amps)
    upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
    if amps.shape[-1] != 2**params.n_qubits or upstream.shape != (amps.shape[0], params.n_qubits):
        raise ShapeError("input amplitudes / upstream shapes do not match the circuit")
    final, grads, grad_input = circuit_adjoint(
        pqc_ops(params), params.n_qubits, amps, upstream, final_amps
    )
    grad_thetas = np.zeros_like(params.thetas)
    for (layer, q), g in grads.items():
        grad_thetas[layer, q] = g.sum(axis=0)
    return z_expectations(final, params.n_qubits), grad_thetas, grad_input


def adjoint_gradient(input_state: QuantumState, params: PqcParams, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum_i upstream_i <Z_i>`` w.r.t. the thetas and the input amplitudes.

    ``grad_input`` is the complex vector ``2 (U^dagger Lambda U) psi``; for
    real input amplitudes its real part is the derivative.
    """
    _check(input_state.n_qubits, params)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (params.n_qubits,):
        raise ShapeError(f"upstream must have length {params.n_qubits}")
    _, grad_thetas, grad_input = adjoint_gradient_batch(
        input_state.amplitudes[None, :], params, upstream[None, :]
    )
    return grad_thetas, grad_input[0]


def parameter_shift_gradient(eval_fn: Callable[[PqcParams], float], params: PqcParams) -> np.ndarray:
    """Two-term shift rule, ``[f(t + pi/2) - f(t - pi/2)] / 2`` per component."""
    grad = np.zeros_like(params.thetas)
    shift = np.pi / 2
    for idx in np.ndindex(params.thetas.shape):
        plus = params.thetas.copy()
        plus[idx] += shift
        minus = params.thetas.copy()
        minus[idx] -= shift
        grad[idx] = (eval_fn(params.with_thetas(plus)) - eval_fn(params.with_thetas(minus))) / 2
    return grad
