"""Mismatch and polar Jacobian kernels.

Two interchangeable paths: numba loops over the CSR arrays of ``Y_bus`` and a
vectorised scipy.sparse formulation. ``GRIDSAN_DISABLE_JIT=1`` selects the latter.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from gridsan._jit import JIT_ENABLED, njit


# -- numba path --------------------------------------------------------------

@njit(cache=True, nogil=True)
def _bus_power_jit(indptr, indices, data, v):
    n = v.shape[0]
    s = np.empty(n, dtype=np.complex128)
    for i in range(n):
        acc = 0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * v[indices[k]]
        s[i] = v[i] * np.conj(acc)
    return s


@njit(cache=True, nogil=True)
def _jacobian_coo_jit(indptr, indices, data, v, pos, m):
    """COO triplets of the 2m x 2m polar Jacobian of ``S_bus`` restricted to non-slack buses."""
    n = v.shape[0]
    cur = np.empty(n, dtype=np.complex128)
    for i in range(n):
        acc = 0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * v[indices[k]]
        cur[i] = acc
    nnz = 0
    for i in range(n):
        if pos[i] < 0:
            continue
        for k in range(indptr[i], indptr[i + 1]):
            if pos[indices[k]] >= 0:
                nnz += 4
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    e = 0
    for i in range(n):
        r = pos[i]
        if r < 0:
            continue
        vi = v[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            c = pos[j]
            if c < 0:
                continue
            vj = v[j]
            yv = data[k] * vj
            vn = vj / abs(vj)
            if i == j:
                d_ang = 1j * vi * np.conj(cur[i] - yv)
                d_mag = vi * np.conj(data[k] * vn) + np.conj(cur[i]) * vn
            else:
                d_ang = -1j * vi * np.conj(yv)
                d_mag = vi * np.conj(data[k] * vn)
            rows[e] = r
            cols[e] = c
            vals[e] = d_ang.real
            rows[e + 1] = r
            cols[e + 1] = m + c
            vals[e + 1] = d_mag.real
            rows[e + 2] = m + r
            cols[e + 2] = c
            vals[e + 2] = d_ang.imag
            rows[e + 3] = m + r
            cols[e + 3] = m + c
            vals[e + 3] = d_mag.imag
            e += 4
    return rows, cols, vals


# -- numpy path --------------------------------------------------------------

def _bus_power_np(ybus: sp.csr_matrix, v: np.ndarray) -> np.ndarray:
    return v * np.conj(ybus @ v)


def _jacobian_np(ybus: sp.csr_matrix, v: np.ndarray, order: np.ndarray) -> sp.csr_matrix:
    cur = ybus @ v
    dv = sp.diags(v)
    vn = v / np.abs(v)
    d_ang = 1j * dv @ np.conj(sp.diags(cur) - ybus @ dv)
    d_mag = dv @ np.conj(ybus @ sp.diags(vn)) + np.conj(sp.diags(cur)) @ sp.diags(vn)
    d_ang = sp.csr_matrix(d_ang)[order][:, order]
    d_mag = sp.csr_matrix(d_mag)[order][:, order]
    return sp.bmat([[d_ang.real, d_mag.real], [d_ang.imag, d_mag.imag]], format="csr")


# -- dispatch ----------------------------------------------------------------

def bus_power(ybus: sp.csr_matrix, v: np.ndarray, use_jit: bool | None = None) -> np.ndarray:
    """Complex power ``S_bus = V * conj(Y V)`` drawn into the network at every bus."""
    if JIT_ENABLED if use_jit is None else use_jit:
        return _bus_power_jit(ybus.indptr, ybus.indices, ybus.data, np.asarray(v, dtype=np.complex128))
    return _bus_power_np(ybus, v)


def jacobian_matrix(ybus: sp.csr_matrix, v: np.ndarray, order: np.ndarray, use_jit: bool | None = None) -> sp.csr_matrix:
    """Jacobian of ``[Re S_bus; Im S_bus]`` w.r.t. ``[angles; magnitudes]`` over ``order``.

    ``order`` lists the non-slack buses in unknown/equation order.
    """
    m = len(order)
    if JIT_ENABLED if use_jit is None else use_jit:
        pos = np.full(ybus.shape[0], -1, dtype=np.int64)
        pos[order] = np.arange(m)
        rows, cols, vals = _jacobian_coo_jit(ybus.indptr, ybus.indices, ybus.data,
                                             np.asarray(v, dtype=np.complex128), pos, m)
        jac = sp.csr_matrix((vals, (rows, cols)), shape=(2 * m, 2 * m))
        jac.sort_indices()
        return jac
    return _jacobian_np(ybus, v, order)
