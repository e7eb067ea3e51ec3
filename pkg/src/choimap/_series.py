"""
Truncated power series with square-matrix coefficients.

A series is an array ``a`` of shape ``(n, m, k)`` standing for
``sum_j a[j] z^j``. Products are non-commutative and evaluated by FFT
convolution; inverses by Newton iteration ``G <- G + G (I - A G)``.
Both give the same coefficients as the naive recursions, in
``O(n log n)`` instead of ``O(n^2)`` block products.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

_DIRECT = 16


def _fwd(a, length):
    if np.isrealobj(a):
        return sfft.rfft(a, n=length, axis=0)
    return sfft.fft(a, n=length, axis=0)


def _bwd(fa, length, real):
    if real:
        return sfft.irfft(fa, n=length, axis=0)
    return sfft.ifft(fa, axis=0)


def _cyclic(a, b, length):
    """Cyclic convolution of length ``length`` (zero-padding ``a`` and ``b``)."""
    real = np.isrealobj(a) and np.isrealobj(b)
    if not real:
        a = a.astype(np.complex128, copy=False)
        b = b.astype(np.complex128, copy=False)
    return _bwd(_fwd(a, length) @ _fwd(b, length), length, real)


def mul(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` coefficients of ``a(z) b(z)``."""
    a = a[:n]
    b = b[:n]
    p, q = len(a), len(b)
    out = np.zeros((n,) + a.shape[1:-1] + b.shape[-1:], dtype=np.result_type(a, b))
    if min(p, q) <= _DIRECT:
        for i in range(p):
            hi = min(q, n - i)
            if hi > 0:
                out[i:i + hi] += a[i] @ b[:hi]
        return out
    full = _cyclic(a, b, sfft.next_fast_len(p + q - 1))
    k = min(n, p + q - 1)
    out[:k] = full[:k]
    return out


def _log_growth(g):
    """Least-squares slope of ``log max|g_k|`` against ``k``."""
    nrm = np.log(np.maximum(np.abs(g).max(axis=(1, 2)), 1e-300))
    return float(np.polyfit(np.arange(len(nrm)), nrm, 1)[0])


def inv(a: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` coefficients of ``a(z)^{-1}``; ``a[0]`` must be invertible.

    Newton doubling loses accuracy like ``|g|^2`` when the inverse grows
    geometrically, so a growing inverse is recomputed for ``a(z / r)``, whose
    inverse is balanced, and scaled back.
    """
    if n <= _DIRECT:
        return _inv(a, n)
    m = min(len(a), n)
    k = np.arange(n, dtype=float)
    limit = np.log(10.0) / (n - 1)
    log_r = 0.0
    for _ in range(8):
        gs = _inv(a[:m] * np.exp(-log_r * k[:m])[:, None, None], n)
        slope = _log_growth(gs)
        if slope <= limit and (log_r == 0.0 or slope >= -limit):
            break
        log_r += slope
    return gs * np.exp(log_r * k)[:, None, None]


def _inv(a: np.ndarray, n: int) -> np.ndarray:
    m = a.shape[-1]
    dtype = np.float64 if np.isrealobj(a) else np.complex128
    g = np.zeros((n, m, m), dtype=dtype)
    g[0] = np.linalg.inv(a[0])
    # short prefix by the direct recursion g_k = -g_0 sum_{i>=1} a_i g_{k-i}
    pre = min(n, _DIRECT)
    for k in range(1, pre):
        acc = np.zeros((m, m), dtype=dtype)
        for i in range(1, min(k, len(a) - 1) + 1):
            acc += a[i] @ g[k - i]
        g[k] = -g[0] @ acc
    have = pre
    real = dtype is np.float64
    while have < n:
        new = min(2 * have, n)
        length = sfft.next_fast_len(new)
        # coefficients have..new-1 of a g; the low part wraps harmlessly
        fg = _fwd(g[:have], length)
        ag = _bwd(_fwd(a[:new].astype(dtype, copy=False), length) @ fg, length, real)[have:new]
        g[have:new] = -_bwd(fg @ _fwd(ag, length), length, real)[: new - have]
        have = new
    return g


def shift(a: np.ndarray, k: int = 1) -> np.ndarray:
    """Coefficients of ``z^k a(z)`` truncated to the original length."""
    out = np.zeros_like(a)
    if k < len(a):
        out[k:] = a[: len(a) - k]
    return out
