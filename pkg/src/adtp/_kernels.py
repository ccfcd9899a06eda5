"""Hot numeric kernels: recurrent-cell rollouts and power-of-two FFT cores.

Two interchangeable lanes exist for every kernel: a numba ``@njit`` build and
a pure-numpy build. The numba lane is used when numba imports successfully,
unless the environment variable ``ADTP_NUMBA`` is set to ``0``/``false``/
``no``/``off``. Setting it truthy while numba is missing raises immediately
rather than silently degrading. ``benchmarks/bench_kernels.py`` times the two
lanes against each other.

Both lanes perform the same floating-point operations in the same order
wherever feasible, so results agree to rounding noise; bit-level determinism
is guaranteed within a lane, not across lanes.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ADTP_NUMBA", "").strip().lower()
if _FLAG in {"0", "false", "no", "off"}:
    USING_NUMBA = False
else:
    try:
        from numba import njit  # type: ignore

        USING_NUMBA = True
    except ImportError:
        if _FLAG in {"1", "true", "yes", "on"}:
            raise RuntimeError("ADTP_NUMBA requested but numba is not installed")
        USING_NUMBA = False


def _sigmoid(z):
    z = np.minimum(np.maximum(z, -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# LSTM sequence kernels
# ---------------------------------------------------------------------------

def _lstm_seq_forward_numpy(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    L, w = xs.shape
    h = bc.shape[0]
    d = h + w
    A = np.empty((L, d))
    CT = np.empty((L, h))
    GU = np.empty((L, h))
    GF = np.empty((L, h))
    GO = np.empty((L, h))
    C = np.empty((L, h))
    TC = np.empty((L, h))
    H = np.empty((L, h))
    y = np.empty(L)
    hprev = h0
    cprev = c0
    for t in range(L):
        A[t, :h] = hprev
        A[t, h:] = xs[t]
        a = A[t]
        ct_ = np.tanh(wc @ a + bc)
        gu = _sigmoid(wu @ a + bu)
        gf = _sigmoid(wf @ a + bf)
        go = _sigmoid(wo @ a + bo)
        c = gu * ct_ + gf * cprev
        tc = np.tanh(c)
        hvec = go * tc
        CT[t] = ct_
        GU[t] = gu
        GF[t] = gf
        GO[t] = go
        C[t] = c
        TC[t] = tc
        H[t] = hvec
        y[t] = wy @ hvec + by
        hprev = hvec
        cprev = c
    return A, CT, GU, GF, GO, C, TC, H, y


def _lstm_seq_backward_numpy(wc, wu, wf, wo, wy, c0, A, CT, GU, GF, GO, C, TC, H, dy):
    L, d = A.shape
    h = wy.shape[0]
    w = d - h
    dwc = np.zeros_like(wc)
    dwu = np.zeros_like(wu)
    dwf = np.zeros_like(wf)
    dwo = np.zeros_like(wo)
    dbc = np.zeros(h)
    dbu = np.zeros(h)
    dbf = np.zeros(h)
    dbo = np.zeros(h)
    dwy = np.zeros(h)
    dby = 0.0
    dxs = np.zeros((L, w))
    dh = np.zeros(h)
    dc = np.zeros(h)
    for t in range(L - 1, -1, -1):
        dwy += dy[t] * H[t]
        dby += dy[t]
        dht = dh + dy[t] * wy
        dgo = dht * TC[t]
        dct = dc + dht * GO[t] * (1.0 - TC[t] * TC[t])
        dgu = dct * CT[t]
        cprev = C[t - 1] if t > 0 else c0
        dgf = dct * cprev
        dc = dct * GF[t]
        dzc = dct * GU[t] * (1.0 - CT[t] * CT[t])
        dzu = dgu * GU[t] * (1.0 - GU[t])
        dzf = dgf * GF[t] * (1.0 - GF[t])
        dzo = dgo * GO[t] * (1.0 - GO[t])
        a = A[t]
        dwc += np.outer(dzc, a)
        dwu += np.outer(dzu, a)
        dwf += np.outer(dzf, a)
        dwo += np.outer(dzo, a)
        dbc += dzc
        dbu += dzu
        dbf += dzf
        dbo += dzo
        da = dzc @ wc + dzu @ wu + dzf @ wf + dzo @ wo
        dh = da[:h]
        dxs[t] = da[h:]
    return dwc, dwu, dwf, dwo, dbc, dbu, dbf, dbo, dwy, dby, dxs


def _lstm_seq_predict_numpy(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    L = xs.shape[0]
    h = bc.shape[0]
    y = np.empty(L)
    hprev = h0.copy()
    cprev = c0.copy()
    a = np.empty(h + xs.shape[1])
    for t in range(L):
        a[:h] = hprev
        a[h:] = xs[t]
        ct_ = np.tanh(wc @ a + bc)
        gu = _sigmoid(wu @ a + bu)
        gf = _sigmoid(wf @ a + bf)
        go = _sigmoid(wo @ a + bo)
        cprev = gu * ct_ + gf * cprev
        hprev = go * np.tanh(cprev)
        y[t] = wy @ hprev + by
    return y, hprev, cprev


def _lstm_seq_forward_loops(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    L, w = xs.shape
    h = bc.shape[0]
    d = h + w
    A = np.empty((L, d))
    CT = np.empty((L, h))
    GU = np.empty((L, h))
    GF = np.empty((L, h))
    GO = np.empty((L, h))
    C = np.empty((L, h))
    TC = np.empty((L, h))
    H = np.empty((L, h))
    y = np.empty(L)
    hprev = h0.copy()
    cprev = c0.copy()
    for t in range(L):
        for i in range(h):
            A[t, i] = hprev[i]
        for j in range(w):
            A[t, h + j] = xs[t, j]
        a = A[t]
        zc = np.dot(wc, a) + bc
        zu = np.dot(wu, a) + bu
        zf = np.dot(wf, a) + bf
        zo = np.dot(wo, a) + bo
        yt = by
        for i in range(h):
            ct_ = np.tanh(zc[i])
            gu = 1.0 / (1.0 + np.exp(-min(max(zu[i], -500.0), 500.0)))
            gf = 1.0 / (1.0 + np.exp(-min(max(zf[i], -500.0), 500.0)))
            go = 1.0 / (1.0 + np.exp(-min(max(zo[i], -500.0), 500.0)))
            c = gu * ct_ + gf * cprev[i]
            tc = np.tanh(c)
            hv = go * tc
            CT[t, i] = ct_
            GU[t, i] = gu
            GF[t, i] = gf
            GO[t, i] = go
            C[t, i] = c
            TC[t, i] = tc
            H[t, i] = hv
            yt += wy[i] * hv
        y[t] = yt
        hprev = H[t]
        cprev = C[t]
    return A, CT, GU, GF, GO, C, TC, H, y


def _lstm_seq_backward_loops(wc, wu, wf, wo, wy, c0, A, CT, GU, GF, GO, C, TC, H, dy):
    L, d = A.shape
    h = wy.shape[0]
    w = d - h
    dwc = np.zeros_like(wc)
    dwu = np.zeros_like(wu)
    dwf = np.zeros_like(wf)
    dwo = np.zeros_like(wo)
    dbc = np.zeros(h)
    dbu = np.zeros(h)
    dbf = np.zeros(h)
    dbo = np.zeros(h)
    dwy = np.zeros(h)
    dby = 0.0
    dxs = np.zeros((L, w))
    dh = np.zeros(h)
    dc = np.zeros(h)
    da = np.zeros(d)
    dzc = np.zeros(h)
    dzu = np.zeros(h)
    dzf = np.zeros(h)
    dzo = np.zeros(h)
    for t in range(L - 1, -1, -1):
        dyt = dy[t]
        dby += dyt
        for j in range(d):
            da[j] = 0.0
        for i in range(h):
            dwy[i] += dyt * H[t, i]
            dht = dh[i] + dyt * wy[i]
            dgo = dht * TC[t, i]
            dct = dc[i] + dht * GO[t, i] * (1.0 - TC[t, i] * TC[t, i])
            dgu = dct * CT[t, i]
            cprev = C[t - 1, i] if t > 0 else c0[i]
            dgf = dct * cprev
            dc[i] = dct * GF[t, i]
            dzc[i] = dct * GU[t, i] * (1.0 - CT[t, i] * CT[t, i])
            dzu[i] = dgu * GU[t, i] * (1.0 - GU[t, i])
            dzf[i] = dgf * GF[t, i] * (1.0 - GF[t, i])
            dzo[i] = dgo * GO[t, i] * (1.0 - GO[t, i])
        for i in range(h):
            ci = dzc[i]
            ui = dzu[i]
            fi = dzf[i]
            oi = dzo[i]
            dbc[i] += ci
            dbu[i] += ui
            dbf[i] += fi
            dbo[i] += oi
            for j in range(d):
                aj = A[t, j]
                dwc[i, j] += ci * aj
                dwu[i, j] += ui * aj
                dwf[i, j] += fi * aj
                dwo[i, j] += oi * aj
                da[j] += wc[i, j] * ci + wu[i, j] * ui + wf[i, j] * fi + wo[i, j] * oi
        for i in range(h):
            dh[i] = da[i]
        for j in range(w):
            dxs[t, j] = da[h + j]
    return dwc, dwu, dwf, dwo, dbc, dbu, dbf, dbo, dwy, dby, dxs


def _lstm_seq_predict_loops(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    L, w = xs.shape
    h = bc.shape[0]
    d = h + w
    y = np.empty(L)
    hprev = h0.copy()
    cprev = c0.copy()
    a = np.empty(d)
    for t in range(L):
        for i in range(h):
            a[i] = hprev[i]
        for j in range(w):
            a[h + j] = xs[t, j]
        zc = np.dot(wc, a) + bc
        zu = np.dot(wu, a) + bu
        zf = np.dot(wf, a) + bf
        zo = np.dot(wo, a) + bo
        yt = by
        for i in range(h):
            ct_ = np.tanh(zc[i])
            gu = 1.0 / (1.0 + np.exp(-min(max(zu[i], -500.0), 500.0)))
            gf = 1.0 / (1.0 + np.exp(-min(max(zf[i], -500.0), 500.0)))
            go = 1.0 / (1.0 + np.exp(-min(max(zo[i], -500.0), 500.0)))
            cprev[i] = gu * ct_ + gf * cprev[i]
            hprev[i] = go * np.tanh(cprev[i])
            yt += wy[i] * hprev[i]
        y[t] = yt
    return y, hprev, cprev


# ---------------------------------------------------------------------------
# Power-of-two FFT core (arbitrary lengths are layered on top in fourier.py)
# ---------------------------------------------------------------------------

def _fft_pow2_many_numpy(out, rev, tw):
    # out is a private copy, already bit-reversal-permuted by the caller
    B, n = out.shape
    size = 2
    while size <= n:
        half = size // 2
        stride = n // size
        twid = tw[: half * stride : stride]
        blocks = out.reshape(B, n // size, size)
        even = blocks[:, :, :half].copy()
        odd = blocks[:, :, half:] * twid
        blocks[:, :, :half] = even + odd
        blocks[:, :, half:] = even - odd
        size *= 2
    return out


def _fft_pow2_many_loops(out, rev, tw):
    B, n = out.shape
    for b in range(B):
        for i in range(n):
            j = rev[i]
            if j > i:
                tmp = out[b, i]
                out[b, i] = out[b, j]
                out[b, j] = tmp
        size = 2
        while size <= n:
            half = size >> 1
            stride = n // size
            start = 0
            while start < n:
                for k in range(half):
                    wv = tw[k * stride]
                    u = out[b, start + k]
                    v = out[b, start + k + half] * wv
                    out[b, start + k] = u + v
                    out[b, start + k + half] = u - v
                start += size
            size <<= 1
    return out


if USING_NUMBA:
    _lstm_seq_forward_numba = njit(cache=True)(_lstm_seq_forward_loops)
    _lstm_seq_backward_numba = njit(cache=True)(_lstm_seq_backward_loops)
    _lstm_seq_predict_numba = njit(cache=True)(_lstm_seq_predict_loops)
    _fft_pow2_many_numba = njit(cache=True)(_fft_pow2_many_loops)
else:
    _lstm_seq_forward_numba = None
    _lstm_seq_backward_numba = None
    _lstm_seq_predict_numba = None
    _fft_pow2_many_numba = None


_tables_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _tables_cache.get(n)
    if cached is None:
        bits = n.bit_length() - 1
        rev = np.zeros(n, dtype=np.int64)
        for i in range(1, n):
            rev[i] = (rev[i >> 1] >> 1) | ((i & 1) << (bits - 1))
        tw = np.exp(-2j * np.pi * np.arange(n // 2) / n)
        cached = (rev, tw)
        _tables_cache[n] = cached
    return cached


def fft_pow2_many(data: np.ndarray) -> np.ndarray:
    """Transform each row of a (batch, n) array; n must be a power of two."""
    n = data.shape[1]
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    rev, tw = _tables(n)
    out = data.astype(np.complex128)  # always copies
    if USING_NUMBA:
        return _fft_pow2_many_numba(np.ascontiguousarray(out), rev, tw)
    return _fft_pow2_many_numpy(out[:, rev], rev, tw)


def lstm_seq_forward(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    """Roll the cell over a sequence, keeping per-step caches for backprop."""
    if USING_NUMBA:
        return _lstm_seq_forward_numba(wc, wu, wf, wo, bc, bu, bf, bo, wy,
                                       by, xs, h0, c0)
    return _lstm_seq_forward_numpy(wc, wu, wf, wo, bc, bu, bf, bo, wy,
                                   by, xs, h0, c0)


def lstm_seq_backward(wc, wu, wf, wo, wy, c0, A, CT, GU, GF, GO, C, TC, H, dy):
    """Backpropagate through the full rollout; dy is dLoss/dy per step."""
    if USING_NUMBA:
        return _lstm_seq_backward_numba(wc, wu, wf, wo, wy, c0, A, CT, GU,
                                        GF, GO, C, TC, H, dy)
    return _lstm_seq_backward_numpy(wc, wu, wf, wo, wy, c0, A, CT, GU,
                                    GF, GO, C, TC, H, dy)


def lstm_seq_predict(wc, wu, wf, wo, bc, bu, bf, bo, wy, by, xs, h0, c0):
    """Cache-free rollout for inference; returns (y, final h, final c)."""
    if USING_NUMBA:
        return _lstm_seq_predict_numba(wc, wu, wf, wo, bc, bu, bf, bo, wy,
                                       by, xs, h0, c0)
    return _lstm_seq_predict_numpy(wc, wu, wf, wo, bc, bu, bf, bo, wy,
                                   by, xs, h0, c0)
