"""Pointwise Hermitian linear algebra over lattice sites.

Every kernel takes stacked matrices of shape ``(S, n, n)`` (one per site) and
exists twice: a numba ``@njit`` version and a vectorised numpy version.  The
backend is chosen by the ``JFLOW_NUMBA`` environment variable (``0`` forces
numpy) or at runtime through :func:`set_backend`.  Both backends return
per-site arrays only; global reductions are left to numpy so that results do
not depend on thread scheduling.
"""

import os
import warnings

import numpy as np

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
else:
    # numba falls back to another threading layer when the system TBB is old.
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

_BACKEND = None


def _default_backend():
    flag = os.environ.get("JFLOW_NUMBA", "1").strip().lower()
    if numba is None or flag in ("0", "false", "no", "off"):
        return "numpy"
    return "numba"


def get_backend():
    global _BACKEND
    if _BACKEND is None:
        _BACKEND = _default_backend()
        _apply_thread_cap()
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    previous = get_backend()
    _BACKEND = name
    return previous


def _apply_thread_cap():
    cap = os.environ.get("JFLOW_THREADS")
    if numba is None or not cap:
        return
    try:
        k = int(cap)
    except ValueError:
        return
    if k > 0:
        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


# --------------------------------------------------------------------------
# numba kernels

if numba is not None:

    @njit(cache=True)
    def _chol_inverse(a, inv, low):
        # Returns det(a) > 0 on success, -1.0 when a is not positive definite.
        n = a.shape[0]
        for i in range(n):
            for j in range(n):
                low[i, j] = 0.0
                inv[i, j] = 0.0
        det = 1.0
        for j in range(n):
            d = a[j, j].real
            for k in range(j):
                d -= (low[j, k] * np.conj(low[j, k])).real
            if not d > 0.0:
                return -1.0
            ljj = np.sqrt(d)
            low[j, j] = ljj
            det *= d
            for i in range(j + 1, n):
                s = a[i, j]
                for k in range(j):
                    s -= low[i, k] * np.conj(low[j, k])
                low[i, j] = s / ljj
        # low <- low^{-1} in place via forward substitution into inv, then
        # a^{-1} = low^{-H} low^{-1}.
        for j in range(n):
            inv[j, j] = 1.0 / low[j, j]
            for i in range(j + 1, n):
                s = 0.0 * inv[0, 0]
                for k in range(j, i):
                    s -= low[i, k] * inv[k, j]
                inv[i, j] = s / low[i, i]
        for i in range(n):
            for j in range(n):
                low[i, j] = inv[i, j]
        for i in range(n):
            for j in range(n):
                s = 0.0 * inv[0, 0]
                for k in range(max(i, j), n):
                    s += np.conj(low[k, i]) * low[k, j]
                inv[i, j] = s
        return det

    @njit(cache=True)
    def _chunks(S, nthreads):
        # Contiguous site blocks, one scratch buffer per block.
        nb = max(1, min(S, 4 * nthreads))
        bounds = np.empty(nb + 1, dtype=np.int64)
        for b in range(nb + 1):
            bounds[b] = (b * S) // nb
        return bounds

    @njit(cache=True, parallel=True)
    def _inverse_det_nb(chi, nthreads):
        S, n = chi.shape[0], chi.shape[1]
        inv = np.empty_like(chi)
        det = np.empty(S)
        bounds = _chunks(S, nthreads)
        for b in prange(bounds.size - 1):
            low = np.empty((n, n), dtype=chi.dtype)
            for s in range(bounds[b], bounds[b + 1]):
                det[s] = _chol_inverse(chi[s], inv[s], low)
        return inv, det

    @njit(cache=True, parallel=True)
    def _sigma_det_nb(chi, g, nthreads):
        S, n = chi.shape[0], chi.shape[1]
        sigma = np.empty(S)
        det = np.empty(S)
        bounds = _chunks(S, nthreads)
        for b in prange(bounds.size - 1):
            low = np.empty((n, n), dtype=chi.dtype)
            inv = np.empty((n, n), dtype=chi.dtype)
            for s in range(bounds[b], bounds[b + 1]):
                det[s] = _chol_inverse(chi[s], inv, low)
                acc = 0.0
                for i in range(n):
                    for j in range(n):
                        acc += (inv[i, j] * g[j, i]).real
                sigma[s] = acc / n
        return sigma, det

    @njit(cache=True, parallel=True)
    def _weighted_inverse_nb(chi, g, nthreads):
        S, n = chi.shape[0], chi.shape[1]
        out = np.empty_like(chi)
        det = np.empty(S)
        bounds = _chunks(S, nthreads)
        for b in prange(bounds.size - 1):
            low = np.empty((n, n), dtype=chi.dtype)
            inv = np.empty((n, n), dtype=chi.dtype)
            for s in range(bounds[b], bounds[b + 1]):
                det[s] = _chol_inverse(chi[s], inv, low)
                # low <- inv @ g, out <- low @ inv
                for i in range(n):
                    for j in range(n):
                        acc = 0.0 * inv[0, 0]
                        for k in range(n):
                            acc += inv[i, k] * g[k, j]
                        low[i, j] = acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0 * inv[0, 0]
                        for k in range(n):
                            acc += low[i, k] * inv[k, j]
                        out[s, i, j] = acc
        return out, det

    @njit(cache=True, parallel=True)
    def _contract_nb(m, h):
        S, n = m.shape[0], m.shape[1]
        out = np.empty(S)
        for s in prange(S):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += (m[s, i, j] * h[s, j, i]).real
            out[s] = acc
        return out

    @njit(cache=True, parallel=True)
    def _min_eig_nb(chi):
        S, n = chi.shape[0], chi.shape[1]
        out = np.empty(S)
        for s in prange(S):
            if n == 1:
                out[s] = chi[s, 0, 0].real
            elif n == 2:
                a = chi[s, 0, 0].real
                d = chi[s, 1, 1].real
                b2 = (chi[s, 0, 1] * np.conj(chi[s, 0, 1])).real
                half = 0.5 * (a - d)
                out[s] = 0.5 * (a + d) - np.sqrt(half * half + b2)
            else:
                out[s] = np.linalg.eigvalsh(np.ascontiguousarray(chi[s]))[0]
        return out


# --------------------------------------------------------------------------
# numpy kernels


def _inverse_det_np(chi):
    try:
        low = np.linalg.cholesky(chi)
    except np.linalg.LinAlgError:
        # slow path: isolate the offending sites, matching the numba kernel's per-site flag
        ok = np.linalg.eigvalsh(chi)[:, 0] > 0
        inv = np.full_like(chi, np.nan)
        det = np.full(chi.shape[0], -1.0)
        if np.any(ok):
            inv[ok], det[ok] = _inverse_det_np(chi[ok])
        return inv, det
    diag = np.diagonal(low, axis1=-2, axis2=-1).real
    det = np.prod(diag * diag, axis=-1)
    return np.linalg.inv(chi), det


def _sigma_det_np(chi, g):
    inv, det = _inverse_det_np(chi)
    n = chi.shape[-1]
    sigma = np.einsum("sij,ji->s", inv, g).real / n
    return sigma, det


def _weighted_inverse_np(chi, g):
    inv, det = _inverse_det_np(chi)
    return inv @ g @ inv, det


def _contract_np(m, h):
    return np.einsum("sij,sji->s", m, h).real


def _min_eig_np(chi):
    return np.linalg.eigvalsh(chi)[:, 0]


# --------------------------------------------------------------------------
# dispatch


def _prep(a):
    return np.ascontiguousarray(a)


def _common_dtype(*arrays):
    return np.result_type(*arrays, np.float64)


def inverse_det(chi):
    """Per-site inverse and determinant; ``det <= 0`` marks a non-positive site."""
    chi = _prep(chi)
    if get_backend() == "numba":
        return _inverse_det_nb(chi, numba.get_num_threads())
    return _inverse_det_np(chi)


def sigma_det(chi, g):
    """Per-site ``(1/n) tr(chi^{-1} g)`` and ``det chi``.

    Sites where ``chi`` is not positive definite come back with ``det = -1``.
    """
    dt = _common_dtype(chi, g)
    chi = _prep(chi.astype(dt, copy=False))
    g = _prep(np.asarray(g, dtype=dt))
    if get_backend() == "numba":
        return _sigma_det_nb(chi, g, numba.get_num_threads())
    return _sigma_det_np(chi, g)


def weighted_inverse(chi, g):
    """Per-site ``chi^{-1} g chi^{-1}`` and ``det chi``."""
    dt = _common_dtype(chi, g)
    chi = _prep(chi.astype(dt, copy=False))
    g = _prep(np.asarray(g, dtype=dt))
    if get_backend() == "numba":
        return _weighted_inverse_nb(chi, g, numba.get_num_threads())
    return _weighted_inverse_np(chi, g)


def contract(m, h):
    """Per-site ``Re tr(m h)``."""
    dt = _common_dtype(m, h)
    m = _prep(m.astype(dt, copy=False))
    h = _prep(h.astype(dt, copy=False))
    if get_backend() == "numba":
        return _contract_nb(m, h)
    return _contract_np(m, h)


def min_eig(chi):
    """Per-site smallest eigenvalue (closed form for n <= 2 under numba)."""
    chi = _prep(chi)
    # batched LAPACK beats per-site eigvalsh calls from numba for n >= 3
    if get_backend() == "numba" and chi.shape[-1] <= 2:
        return _min_eig_nb(chi)
    return _min_eig_np(chi)
