"""Spectral-residual saliency and per-point normality confidence.

The saliency map of a segment is the inverse transform of its log-amplitude
spectrum minus a local spectral average (the "residual"), keeping the phase.
Points whose saliency stands far above its own recent history get confidence
near 0; unremarkable points get confidence near 1. These weights multiply
every training loss so that suspected anomalies barely influence learning.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import fourier

EPS = 1e-8           # guards log(0) and division by a vanishing local average
WEIGHT_CLIP = 1e-12  # keeps confidences strictly inside (0, 1)

DEFAULT_SPECTRUM_AVG = 3   # width of the moving average over the log spectrum
DEFAULT_LOCAL_AVG = 21     # history length for the causal saliency average


def _sigmoid(z):
    z = np.minimum(np.maximum(z, -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # non-negative, same length as the source segment


@dataclass(frozen=True)
class NormalityWeights:
    weights: np.ndarray   # per-point confidence in (0, 1)
    mean_weight: float


def _centered_mean(rows: np.ndarray, width: int) -> np.ndarray:
    """Length-``width`` moving average along axis 1, truncated at the edges."""
    n = rows.shape[1]
    idx = np.arange(n)
    lo = np.maximum(0, idx - (width - 1) // 2)
    hi = np.minimum(n, idx + width // 2 + 1)
    csum = np.cumsum(rows, axis=1)
    left = np.where(lo > 0, csum[:, np.maximum(lo - 1, 0)], 0.0)
    return (csum[:, hi - 1] - left) / (hi - lo)


def saliency_many(segments: np.ndarray,
                  avg_window: int = DEFAULT_SPECTRUM_AVG) -> np.ndarray:
    """Saliency maps for a (batch, window) matrix of segments."""
    spectra = fourier.fft_many(segments)
    amplitude = np.abs(spectra)
    phase = np.angle(spectra)
    log_amp = np.log(amplitude + EPS)
    residual = log_amp - _centered_mean(log_amp, avg_window)
    return np.abs(fourier.ifft_many(np.exp(residual + 1j * phase)))


def saliency_map(segment: np.ndarray,
                 avg_window: int = DEFAULT_SPECTRUM_AVG) -> SaliencyMap:
    """Spectral-residual saliency of one segment."""
    points = np.asarray(segment, dtype=np.float64)
    if points.shape[0] < avg_window:
        raise ValueError(f"segment of {points.shape[0]} points is shorter "
                         f"than the averaging window {avg_window}")
    return SaliencyMap(values=saliency_many(points[None, :], avg_window)[0])


LOCAL_AVG_FLOOR = 0.5  # fraction of the segment-mean saliency


def confidence_many(saliency: np.ndarray, deviation_threshold: float,
                    local_window: int = DEFAULT_LOCAL_AVG) -> np.ndarray:
    """Confidence weights for a (batch, window) matrix of saliency maps.

    Each point is compared against the mean of up to ``local_window``
    strictly preceding saliency values; the first point has no history and
    is scored against itself (zero deviation). The local average is floored
    at half the segment's mean saliency: an estimate built from one or two
    points can land arbitrarily close to zero and would declare any normal
    successor anomalous.
    """
    n = saliency.shape[1]
    local = np.empty_like(saliency)
    local[:, 0] = saliency[:, 0]
    if n > 1:
        idx = np.arange(1, n)
        lo = np.maximum(0, idx - local_window)
        csum = np.cumsum(saliency, axis=1)
        left = np.where(lo > 0, csum[:, np.maximum(lo - 1, 0)], 0.0)
        local[:, 1:] = (csum[:, idx - 1] - left) / (idx - lo)
    floor = LOCAL_AVG_FLOOR * saliency.mean(axis=1, keepdims=True)
    local = np.maximum(np.maximum(local, floor), EPS)
    deviation = (saliency - local) / local
    weights = _sigmoid(deviation_threshold - deviation)
    return np.clip(weights, WEIGHT_CLIP, 1.0 - WEIGHT_CLIP)


def normality_confidence(saliency: SaliencyMap, deviation_threshold: float,
                         local_window: int = DEFAULT_LOCAL_AVG
                         ) -> NormalityWeights:
    """Per-point confidence that each status of a segment is normal."""
    if local_window < 1:
        raise ValueError("local_window must be >= 1")
    values = np.asarray(saliency.values, dtype=np.float64)
    weights = confidence_many(values[None, :], deviation_threshold,
                              local_window)[0]
    return NormalityWeights(weights=weights, mean_weight=float(weights.mean()))


def confidence_for_segments(segments: np.ndarray, deviation_threshold: float,
                            avg_window: int = DEFAULT_SPECTRUM_AVG,
                            local_window: int = DEFAULT_LOCAL_AVG
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Weights and per-segment mean weight for a segment matrix.

    Deterministic per segment, so callers compute this once and cache it.
    """
    sal = saliency_many(segments, avg_window)
    weights = confidence_many(sal, deviation_threshold, local_window)
    return weights, weights.mean(axis=1)


def dump_weights_csv(path: str, end_indices: np.ndarray, saliency: np.ndarray,
                     weights: np.ndarray) -> None:
    """Debug dump: one row per (segment, offset) pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["end_index", "offset", "saliency", "weight"])
        for row, end in enumerate(end_indices):
            for off in range(saliency.shape[1]):
                writer.writerow([int(end), off,
                                 repr(float(saliency[row, off])),
                                 repr(float(weights[row, off]))])
