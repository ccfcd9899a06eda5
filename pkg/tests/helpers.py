"""Shared oracles and fixtures for the test suite.

Everything here is written independently of the library's own algorithms:
brute-force scans, direct formula evaluations, and finite differences.
"""

import numpy as np

from adtp import model, training


def make_gradcheck_instance(seed, window=8, enc_hidden=6, latent_dim=2,
                            lstm_hidden=5, seq_len=4):
    """Random small joint-model instance for finite-difference checks."""
    rng = np.random.default_rng(seed)
    params = model.init_params(window, enc_hidden, latent_dim, lstm_hidden,
                               rng, output_bias=5.0)
    xs = rng.uniform(4.0, 6.0, (seq_len, window))
    wn = rng.uniform(0.2, 0.95, (seq_len, window))
    wbar = wn.mean(axis=1)
    x_next = rng.uniform(4.0, 6.0, seq_len)
    eps = rng.standard_normal((seq_len, latent_dim))
    return params, xs, wn, wbar, x_next, eps


def sequence_loss(params, xs, wn, wbar, x_next, eps, kl_weight, pred_weight):
    breakdown, _ = training._sequence_pass(
        params, xs, wn, wbar, x_next, eps, kl_weight, pred_weight,
        want_grads=False)
    return breakdown.total


def finite_difference_grads(params, loss_fn, step=1e-5):
    """Central differences of loss_fn(params) for every tensor element."""
    out = []
    for name, p in params.tensors():
        fd = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            hi = loss_fn(params)
            p[idx] = orig - step
            lo = loss_fn(params)
            p[idx] = orig
            fd[idx] = (hi - lo) / (2.0 * step)
        out.append((name, fd))
    return out


def max_relative_error(analytic, numeric, floor=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_force_delay_counts(flags, labels, delay):
    """Point-by-point re-implementation of delay-adjusted scoring.

    Walks the label array, collects each anomaly interval, checks the
    detection window, and classifies every single point explicitly.
    """
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    n = len(labels)
    tp = fp = fn = tn = 0
    i = 0
    while i < n:
        if not labels[i]:
            if flags[i]:
                fp += 1
            else:
                tn += 1
            i += 1
            continue
        j = i
        while j < n and labels[j]:
            j += 1
        detected = False
        for t in range(i, min(i + delay + 1, j)):
            if flags[t]:
                detected = True
                break
        if detected:
            tp += j - i
        else:
            fn += j - i
        i = j
    return tp, fp, fn, tn


def reference_saliency(segment, avg_window=3):
    """Saliency map computed with explicit O(n^2) DFT sums and loops."""
    x = np.asarray(segment, dtype=np.float64)
    n = len(x)
    spectrum = np.array([sum(x[j] * np.exp(-2j * np.pi * k * j / n)
                             for j in range(n)) for k in range(n)])
    amp = np.abs(spectrum)
    phase = np.angle(spectrum)
    log_amp = np.log(amp + 1e-8)
    avg = np.empty(n)
    for i in range(n):
        lo = max(0, i - (avg_window - 1) // 2)
        hi = min(n, i + avg_window // 2 + 1)
        avg[i] = np.mean(log_amp[lo:hi])
    resid = log_amp - avg
    spec = np.exp(resid) * np.exp(1j * phase)
    back = np.array([sum(spec[k] * np.exp(2j * np.pi * k * j / n)
                         for k in range(n)) / n for j in range(n)])
    return np.abs(back)


def sinusoid_segment_with_spike(rng, window=30, noise_std=0.1,
                                spike_sigmas=(6.0, 9.0), amplitude=0.15,
                                period_range=(300.0, 3000.0)):
    """One synthetic segment: gentle sinusoid arc, noise, one spike.

    The spike lands at offset >= 2: a causal confidence score has no
    history at the very first points, so they cannot be judged. Long
    periods keep the in-window arc smooth, so the spike is the only
    irregular structure.
    """
    period = rng.uniform(*period_range)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(window)
    seg = amplitude * np.sin(2 * np.pi * t / period + phase)
    seg = seg + noise_std * rng.standard_normal(window)
    pos = int(rng.integers(2, window))
    sign = 1 if rng.random() < 0.5 else -1
    lo, hi = (spike_sigmas, spike_sigmas) if np.isscalar(spike_sigmas) \
        else spike_sigmas
    seg[pos] += sign * rng.uniform(lo, hi) * noise_std
    return seg, pos
