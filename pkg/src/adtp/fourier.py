"""Discrete Fourier transforms built on the power-of-two kernel lane.

``dft_naive`` is the O(n^2) textbook transform kept as an independent
cross-check for ``fft``. Arbitrary lengths go through Bluestein's chirp-z
reformulation, so the fast transform operates at the exact signal length
(no zero padding of the input) and ``ifft(fft(x))`` recovers ``x``.
"""

from __future__ import annotations

import numpy as np

from ._kernels import fft_pow2_many


def dft_naive(signal) -> np.ndarray:
    """Textbook O(n^2) DFT; the oracle for the fast transform."""
    x = np.asarray(signal, dtype=np.complex128)
    n = x.shape[0]
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def _next_pow2(v: int) -> int:
    return 1 if v <= 1 else 1 << (v - 1).bit_length()


_bluestein_cache: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}


def _bluestein_tables(n: int) -> tuple[int, np.ndarray, np.ndarray]:
    cached = _bluestein_cache.get(n)
    if cached is None:
        m = _next_pow2(2 * n - 1)
        k = np.arange(n)
        # k^2 reduced mod 2n keeps the chirp angle accurate for long signals
        chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
        b = np.zeros(m, dtype=np.complex128)
        b[:n] = np.conj(chirp)
        b[m - n + 1:] = np.conj(chirp[1:])[::-1]
        fb = fft_pow2_many(b[None, :])[0]
        cached = (m, chirp, fb)
        _bluestein_cache[n] = cached
    return cached


def _ifft_pow2_many(spectra: np.ndarray) -> np.ndarray:
    n = spectra.shape[1]
    return np.conj(fft_pow2_many(np.conj(spectra))) / n


def fft_many(signals: np.ndarray) -> np.ndarray:
    """Fast transform of each row of a (batch, n) array, any n >= 1."""
    x = np.asarray(signals, dtype=np.complex128)
    n = x.shape[1]
    if n & (n - 1) == 0:
        return fft_pow2_many(x)
    m, chirp, fb = _bluestein_tables(n)
    a = np.zeros((x.shape[0], m), dtype=np.complex128)
    a[:, :n] = x * chirp
    conv = _ifft_pow2_many(fft_pow2_many(a) * fb)
    return conv[:, :n] * chirp


def ifft_many(spectra: np.ndarray) -> np.ndarray:
    x = np.asarray(spectra, dtype=np.complex128)
    return np.conj(fft_many(np.conj(x))) / x.shape[1]


def fft(signal) -> np.ndarray:
    """Fast DFT of a 1-D signal of any length."""
    x = np.asarray(signal, dtype=np.complex128)
    return fft_many(x[None, :])[0]


def ifft(spectrum) -> np.ndarray:
    """Inverse of :func:`fft` on the original length."""
    x = np.asarray(spectrum, dtype=np.complex128)
    return ifft_many(x[None, :])[0]
