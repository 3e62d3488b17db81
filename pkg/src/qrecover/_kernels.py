"""numba kernels for the hot loops of the state-vector simulator."""

import numpy as np
from numba import njit


@njit(cache=True)
def apply_2x2(src, dst, n_qubits, qubit, mats):
    """Apply ``mats[k]`` to ``qubit`` of every row of ``src``, writing ``dst``.

    ``src``/``dst`` are ``(N, 2**n)`` complex arrays (may alias).  ``mats`` is
    ``(1, 2, 2)`` for a shared gate or ``(N, 2, 2)`` for one gate per row.
    """
    stride = 1 << (n_qubits - 1 - qubit)
    dim = src.shape[1]
    shared = mats.shape[0] == 1
    for b in range(src.shape[0]):
        k = 0 if shared else b
        a00 = mats[k, 0, 0]
        a01 = mats[k, 0, 1]
        a10 = mats[k, 1, 0]
        a11 = mats[k, 1, 1]
        for base in range(0, dim, 2 * stride):
            for i1 in range(base, base + stride):
                x = src[b, i1]
                y = src[b, i1 + stride]
                dst[b, i1] = a00 * x + a01 * y
                dst[b, i1 + stride] = a10 * x + a11 * y


@njit(cache=True)
def weighted_overlap_imag(bra, ket, signs):
    """Row-wise ``Im <bra| diag(signs) |ket>``; ``signs`` is ``(2**n,)``."""
    out = np.zeros(bra.shape[0])
    for b in range(bra.shape[0]):
        acc = 0.0
        for i in range(bra.shape[1]):
            u = bra[b, i]
            v = ket[b, i]
            acc += signs[i] * (u.real * v.imag - u.imag * v.real)
        out[b] = acc
    return out


@njit(cache=True)
def apply_local(src, dst, n_qubits, qubits, mats):
    """Apply a ``2**k x 2**k`` matrix to the listed ``qubits`` of every row.

    ``qubits[0]`` is the most significant bit of the local index.  ``mats``
    is ``(1, m, m)`` or ``(N, m, m)``.  ``src`` and ``dst`` must not alias.
    """
    k = qubits.shape[0]
    m = 1 << k
    masks = np.empty(k, np.int64)
    allmask = 0
    for j in range(k):
        masks[j] = 1 << (n_qubits - 1 - qubits[j])
        allmask |= masks[j]
    offs = np.zeros(m, np.int64)
    for s in range(m):
        o = 0
        for j in range(k):
            if (s >> (k - 1 - j)) & 1:
                o |= masks[j]
        offs[s] = o
    shared = mats.shape[0] == 1
    buf = np.empty(m, np.complex128)
    for b in range(src.shape[0]):
        kk = 0 if shared else b
        for base in range(src.shape[1]):
            if base & allmask:
                continue
            for s in range(m):
                buf[s] = src[b, base + offs[s]]
            for r in range(m):
                acc = 0j
                for s in range(m):
                    acc += mats[kk, r, s] * buf[s]
                dst[b, base + offs[r]] = acc
