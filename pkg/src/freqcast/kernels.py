"""Hot numeric kernels: batched 1-D/2-D DFTs and semi-Lagrangian advection.

Each kernel has a numba ``@njit`` variant and a pure-numpy variant; the active
one is chosen by :mod:`freqcast.backend`. Both variants consume the same
precomputed twiddle/permutation tables and apply operations in the same order,
so they agree bitwise on power-of-two sizes.

Transform convention: ``fft1_batch``/``fft2`` are UNNORMALIZED in both
directions. ``sign=-1`` is the forward kernel exp(-2*pi*i*j*k/n); ``sign=+1``
is the unnormalized inverse; callers divide by the transform length where a
normalized inverse is needed.

Algorithm: iterative radix-2 decimation for power-of-two lengths, recursive
Cooley-Tukey splitting by the smallest prime factor for other composites, and
a dense DFT matrix for primes.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from . import backend

_TABLE_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
_PRIME_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _pow2_tables(n: int, sign: int) -> tuple[np.ndarray, np.ndarray]:
    """Bit-reversal permutation and root-of-unity table exp(sign*2pi*i*j/n)."""
    key = (n, sign)
    if key not in _TABLE_CACHE:
        bits = n.bit_length() - 1
        brev = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r = 0
            x = i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            brev[i] = r
        w = np.exp(sign * 2j * np.pi * np.arange(n // 2) / n)
        _TABLE_CACHE[key] = (brev, w)
    return _TABLE_CACHE[key]


def _prime_matrix(n: int, sign: int) -> np.ndarray:
    key = (n, sign)
    if key not in _PRIME_CACHE:
        jk = np.outer(np.arange(n), np.arange(n))
        _PRIME_CACHE[key] = np.exp(sign * 2j * np.pi * jk / n)
    return _PRIME_CACHE[key]


@njit(cache=True)
def _fft_pow2_nb(z, brev, w):  # pragma: no cover - exercised via backend tests
    B, n = z.shape
    for b in range(B):
        for i in range(n):
            j = brev[i]
            if j > i:
                tmp = z[b, i]
                z[b, i] = z[b, j]
                z[b, j] = tmp
        size = 2
        while size <= n:
            half = size >> 1
            step = n // size
            for start in range(0, n, size):
                for k in range(half):
                    lo = z[b, start + k]
                    hi = z[b, start + k + half] * w[k * step]
                    z[b, start + k] = lo + hi
                    z[b, start + k + half] = lo - hi
            size <<= 1
    return z


def _fft_pow2_np(z, brev, w):
    z = z[:, brev]
    n = z.shape[1]
    size = 2
    while size <= n:
        half = size >> 1
        step = n // size
        tw = w[: half * step : step]
        zv = z.reshape(z.shape[0], n // size, size)
        lo = zv[:, :, :half].copy()
        hi = zv[:, :, half:] * tw
        zv[:, :, :half] = lo + hi
        zv[:, :, half:] = lo - hi
        size <<= 1
    return z


def _fft_composite(z: np.ndarray, sign: int, p: int) -> np.ndarray:
    """Cooley-Tukey split n = p*m over the smallest prime factor p."""
    n = z.shape[1]
    m = n // p
    subs = np.stack([fft1_batch(z[:, r::p], sign) for r in range(p)], axis=1)
    k = np.arange(n)
    twiddle = np.exp(sign * 2j * np.pi * np.outer(k, np.arange(p)) / n)
    gathered = subs[:, :, k % m]
    return np.einsum("kp,bpk->bk", twiddle, gathered)


def fft1_batch(z: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT of each row of ``z`` (shape [B, n], complex128)."""
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 (forward) or +1 (inverse)")
    z = np.array(z, dtype=np.complex128, copy=True, order="C")
    n = z.shape[1]
    if n == 1:
        return z
    if n & (n - 1) == 0:
        brev, w = _pow2_tables(n, sign)
        if backend.use_numba():
            return _fft_pow2_nb(z, brev, w)
        return _fft_pow2_np(z, brev, w)
    p = _smallest_prime_factor(n)
    if p == n:
        return z @ _prime_matrix(n, sign)
    return _fft_composite(z, sign, p)


def fft2(z: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized 2-D DFT over the trailing two axes of ``z``."""
    z = np.asarray(z, dtype=np.complex128)
    lead = z.shape[:-2]
    M, N = z.shape[-2], z.shape[-1]
    B = int(np.prod(lead)) if lead else 1
    out = fft1_batch(z.reshape(B * M, N), sign)
    out = np.ascontiguousarray(out.reshape(B, M, N).swapaxes(-1, -2))
    out = fft1_batch(out.reshape(B * N, M), sign)
    out = out.reshape(B, N, M).swapaxes(-1, -2)
    return np.ascontiguousarray(out.reshape(*lead, M, N))


@njit(cache=True)
def _advect_nb(f, out, s_m, s_n, t_m, t_n):  # pragma: no cover - backend tests
    B, M, N = f.shape
    for b in range(B):
        for m in range(M):
            a0 = (m + s_m) % M
            a1 = (a0 + 1) % M
            for n in range(N):
                c0 = (n + s_n) % N
                c1 = (c0 + 1) % N
                out[b, m, n] = (
                    (1.0 - t_m) * (1.0 - t_n) * f[b, a0, c0]
                    + (1.0 - t_m) * t_n * f[b, a0, c1]
                    + t_m * (1.0 - t_n) * f[b, a1, c0]
                    + t_m * t_n * f[b, a1, c1]
                )
    return out


def _advect_np(f, s_m, s_n, t_m, t_n):
    def shifted(i, j):
        return np.roll(f, shift=(-(s_m + i), -(s_n + j)), axis=(-2, -1))

    return (
        (1.0 - t_m) * (1.0 - t_n) * shifted(0, 0)
        + (1.0 - t_m) * t_n * shifted(0, 1)
        + t_m * (1.0 - t_n) * shifted(1, 0)
        + t_m * t_n * shifted(1, 1)
    )


def advect_bilinear(field: np.ndarray, disp_rows: float, disp_cols: float) -> np.ndarray:
    """Semi-Lagrangian step: move the pattern by (disp_rows, disp_cols) cells.

    Periodic in both axes; departure values are bilinearly interpolated, so an
    integer displacement is an exact circular shift.
    """
    f = np.asarray(field, dtype=np.float64)
    s_m = int(np.floor(-disp_rows))
    s_n = int(np.floor(-disp_cols))
    t_m = float(-disp_rows - s_m)
    t_n = float(-disp_cols - s_n)
    if backend.use_numba():
        lead = f.shape[:-2]
        M, N = f.shape[-2], f.shape[-1]
        B = int(np.prod(lead)) if lead else 1
        fb = np.ascontiguousarray(f.reshape(B, M, N))
        out = np.empty_like(fb)
        _advect_nb(fb, out, s_m, s_n, t_m, t_n)
        return out.reshape(f.shape)
    return _advect_np(f, s_m, s_n, t_m, t_n)
