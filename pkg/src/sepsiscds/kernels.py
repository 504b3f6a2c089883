"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The numba path is used when numba imports cleanly; set SEPSISCDS_NO_NUMBA=1
to force the numpy path (benchmarks/bench_kernels.py compares the two).
Both paths break argmin ties toward the lowest index.
"""
from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("SEPSISCDS_NO_NUMBA", "") == "1"

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled by SEPSISCDS_NO_NUMBA")
    from numba import njit, prange
    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------- numpy path

def _assign_nearest_numpy(X: np.ndarray, C: np.ndarray, chunk: int = 8192):
    """Nearest centroid per row of X. Returns (labels, squared distance)."""
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    c_sq = np.einsum("ij,ij->i", C, C)
    for start in range(0, n, chunk):
        xb = X[start:start + chunk]
        d = xb @ C.T
        d *= -2.0
        d += c_sq[None, :]
        d += np.einsum("ij,ij->i", xb, xb)[:, None]
        lab = np.argmin(d, axis=1)
        labels[start:start + chunk] = lab
        best[start:start + chunk] = d[np.arange(xb.shape[0]), lab]
    np.maximum(best, 0.0, out=best)
    return labels, best


def _centroid_sums_numpy(X: np.ndarray, labels: np.ndarray, k: int):
    d = X.shape[1]
    sums = np.zeros((k, d), dtype=np.float64)
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def _hist_gradients_numpy(codes: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                          rows: np.ndarray, n_bins: int):
    d = codes.shape[1]
    gsum = np.empty((d, n_bins), dtype=np.float64)
    hsum = np.empty((d, n_bins), dtype=np.float64)
    sub = codes[rows]
    g = grad[rows]
    h = hess[rows]
    for f in range(d):
        gsum[f] = np.bincount(sub[:, f], weights=g, minlength=n_bins)
        hsum[f] = np.bincount(sub[:, f], weights=h, minlength=n_bins)
    return gsum, hsum


# ---------------------------------------------------------------- numba path

if NUMBA_ENABLED:

    @njit(parallel=True, cache=True)
    def _assign_nearest_numba(X, C):
        n, d = X.shape
        k = C.shape[0]
        labels = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in prange(n):
            bi = -1
            bd = np.inf
            for c in range(k):
                s = 0.0
                for j in range(d):
                    diff = X[i, j] - C[c, j]
                    s += diff * diff
                if s < bd:
                    bd = s
                    bi = c
            labels[i] = bi
            best[i] = bd
        return labels, best

    @njit(cache=True)
    def _centroid_sums_numba(X, labels, k):
        n, d = X.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            lab = labels[i]
            counts[lab] += 1
            for j in range(d):
                sums[lab, j] += X[i, j]
        return sums, counts

    @njit(cache=True)
    def _hist_gradients_numba(codes, grad, hess, rows, n_bins):
        d = codes.shape[1]
        gsum = np.zeros((d, n_bins), dtype=np.float64)
        hsum = np.zeros((d, n_bins), dtype=np.float64)
        for ii in range(rows.shape[0]):
            i = rows[ii]
            g = grad[i]
            h = hess[i]
            for f in range(d):
                c = codes[i, f]
                gsum[f, c] += g
                hsum[f, c] += h
        return gsum, hsum


# ---------------------------------------------------------------- dispatch

def assign_nearest(X: np.ndarray, C: np.ndarray):
    """labels[i] = argmin_c ||X[i] - C[c]||^2, ties to the lowest c."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if NUMBA_ENABLED:
        return _assign_nearest_numba(X, C)
    return _assign_nearest_numpy(X, C)


def centroid_sums(X: np.ndarray, labels: np.ndarray, k: int):
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if NUMBA_ENABLED:
        return _centroid_sums_numba(X, labels, k)
    return _centroid_sums_numpy(X, labels, k)


def hist_gradients(codes: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                   rows: np.ndarray, n_bins: int):
    """Per-feature histograms of gradient/hessian sums over the given rows."""
    if NUMBA_ENABLED:
        return _hist_gradients_numba(codes, grad, hess, rows, n_bins)
    return _hist_gradients_numpy(codes, grad, hess, rows, n_bins)
