"""Anomaly decisions, delay-adjusted detection scoring, prediction metrics.

A point is flagged when the absolute error between its status and the
deterministic reconstruction of the segment ending there exceeds k times
the standard deviation of such errors (k shared across a whole dataset).
Detection quality is scored at the anomaly-interval level: an interval
found within the tolerated delay counts entirely as true positives,
otherwise entirely as false negatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import DataError
from .series import TimeSeries, fill_missing, segment_matrix

K_GRID_DEFAULT = np.arange(0.5, 10.0 + 1e-9, 0.25)


@dataclass
class DetectionResult:
    scores: np.ndarray
    flags: np.ndarray
    threshold: float
    k: float
    sigma_r: float


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class SeriesReport:
    series_id: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mse: float
    rmse: float
    mae: float


@dataclass
class EvalReport:
    k: float
    delay: int
    rows: list[SeriesReport]
    pooled_tp: int
    pooled_fp: int
    pooled_fn: int
    pooled_precision: float
    pooled_recall: float
    pooled_f1: float
    avg_precision: float
    avg_recall: float
    avg_f1: float
    avg_mse: float
    avg_rmse: float
    avg_mae: float


def anomaly_scores(vp: model.VaeParams, values: np.ndarray,
                   input_offset: float = model.INPUT_OFFSET,
                   chunk: int = 16384) -> np.ndarray:
    """Absolute last-point reconstruction error per time stamp.

    Returns a full-length array; stamps before the first complete window
    have no score and hold NaN.
    """
    window = vp.window
    segments = segment_matrix(np.asarray(values, dtype=np.float64), window)
    scores = np.full(len(values), np.nan)
    for lo in range(0, segments.shape[0], chunk):
        hi = min(lo + chunk, segments.shape[0])
        x = segments[lo:hi] + input_offset
        fwd = model.vae_forward(vp, x)
        scores[window - 1 + lo:window - 1 + hi] = np.abs(
            x[:, -1] - fwd.x_prime[:, -1])
    return scores


def predict_series(params: model.AdtpParams, values: np.ndarray,
                   input_offset: float = model.INPUT_OFFSET,
                   chunk: int = 8192) -> np.ndarray:
    """One-step-ahead prediction per time stamp, in the input's units.

    ``out[t]`` predicts ``values[t + 1]`` from the deterministic
    reconstruction of the window ending at ``t``; the recurrent state rolls
    from the start of the series without resets. Warm-up stamps hold NaN.
    """
    window = params.vae.window
    segments = segment_matrix(np.asarray(values, dtype=np.float64), window)
    preds = np.full(len(values), np.nan)
    state = model.zero_state(params.lstm.hidden)
    for lo in range(0, segments.shape[0], chunk):
        hi = min(lo + chunk, segments.shape[0])
        fwd = model.vae_forward(params.vae, segments[lo:hi] + input_offset)
        y, state = model.lstm_rollout(params.lstm, fwd.x_prime, state)
        preds[window - 1 + lo:window - 1 + hi] = y - input_offset
    return preds


def detect(scores: np.ndarray, k: float,
           sigma_population: np.ndarray) -> DetectionResult:
    """Threshold scores at k times the std of the reference error population."""
    pop = np.asarray(sigma_population, dtype=np.float64)
    pop = pop[np.isfinite(pop)]
    if pop.size == 0:
        raise DataError("empty score population for the detection threshold")
    sigma_r = float(np.std(pop))
    threshold = k * sigma_r
    finite = np.isfinite(scores)
    flags = np.zeros(len(scores), dtype=bool)
    flags[finite] = scores[finite] > threshold
    return DetectionResult(scores=np.asarray(scores), flags=flags,
                           threshold=threshold, k=k, sigma_r=sigma_r)


def _label_runs(labels: np.ndarray):
    padded = np.r_[False, labels, False]
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[0::2], edges[1::2]))  # half-open [start, end)


def delay_adjust(flags: np.ndarray, labels: np.ndarray,
                 delay: int) -> ConfusionCounts:
    """Interval-level adjusted confusion counts.

    An anomaly interval whose first ``delay + 1`` stamps contain at least
    one flag is credited entirely as true positives; otherwise the whole
    interval counts as false negatives and its flags are discarded (they
    sit on genuinely anomalous stamps, so they are not false positives).
    Flags outside intervals count pointwise.
    """
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise DataError("flags and labels length mismatch")
    adjusted = flags.copy()
    for start, end in _label_runs(labels):
        hit = flags[start:min(start + delay + 1, end)].any()
        adjusted[start:end] = hit
    tp = int(np.sum(adjusted & labels))
    fp = int(np.sum(adjusted & ~labels))
    fn = int(np.sum(~adjusted & labels))
    tn = len(flags) - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 with the zero-denominator-is-zero convention."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1


def build_prediction_truth(series: TimeSeries,
                           max_linear_gap: int | None = None,
                           period: int | None = None) -> TimeSeries:
    """Ground truth for prediction scoring: labeled anomalies are removed
    and re-filled with expected normal statuses, like repair does."""
    if series.labels is None or not series.labels.any():
        return series
    values = series.values.copy()
    values[series.labels] = np.nan
    holed = TimeSeries(values=values, timestamps=series.timestamps,
                       labels=series.labels,
                       missing_mask=series.missing_mask.copy(),
                       granularity=series.granularity,
                       series_id=series.series_id)
    return fill_missing(holed, max_linear_gap, period)


def prediction_metrics(predictions: np.ndarray, truth: np.ndarray,
                       window: int, start: int | None = None
                       ) -> tuple[float, float, float]:
    """MSE/RMSE/MAE of one-step predictions against the truth series.

    Covers targets ``truth[t + 1]`` for t from ``start`` (default: the first
    complete window) through the end of the series.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n = len(truth)
    if start is None:
        start = window - 1
    if start >= n - 1:
        raise DataError("empty overlap between predictions and truth")
    resid = truth[start + 1:n] - predictions[start:n - 1]
    if not np.all(np.isfinite(resid)):
        raise DataError("predictions or truth undefined on the scored range")
    mse = float(np.mean(resid * resid))
    return mse, float(np.sqrt(mse)), float(np.mean(np.abs(resid)))


# ---------------------------------------------------------------------------
# Dataset-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class SeriesEvaluation:
    """Everything one series contributes to a dataset-level report."""
    series_id: str
    scores: np.ndarray        # full length, NaN warm-up
    sigma_population: np.ndarray
    eval_start: int           # first stamp of the scored region
    labels: np.ndarray        # full length
    mse: float
    rmse: float
    mae: float
    timestamps: np.ndarray
    sigma_r: float = 0.0


def analyze_series(params: model.AdtpParams, values_norm: np.ndarray,
                   labels: np.ndarray | None, timestamps: np.ndarray,
                   series_id: str, max_linear_gap: int, period: int,
                   granularity: str,
                   input_offset: float = model.INPUT_OFFSET
                   ) -> SeriesEvaluation:
    """Scores and prediction metrics for one preprocessed series.

    The first half is the threshold's reference population; flags and
    prediction errors are scored on the second half only.
    """
    n = len(values_norm)
    half = n // 2
    window = params.vae.window
    scores = anomaly_scores(params.vae, values_norm, input_offset)
    preds = predict_series(params, values_norm, input_offset)
    if labels is None:
        labels = np.zeros(n, dtype=bool)
    truth_series = TimeSeries(values=values_norm, timestamps=timestamps,
                              labels=labels, missing_mask=np.zeros(n, bool),
                              granularity=granularity, series_id=series_id)
    truth = build_prediction_truth(truth_series, max_linear_gap, period)
    mse, rmse, mae = prediction_metrics(preds, truth.values, window,
                                        start=max(half - 1, window - 1))
    return SeriesEvaluation(
        series_id=series_id, scores=scores,
        sigma_population=scores[window - 1:half],
        eval_start=max(half, window - 1), labels=labels,
        mse=mse, rmse=rmse, mae=mae, timestamps=timestamps)


def sweep_k(evaluations: list[SeriesEvaluation], delay: int,
            ks: np.ndarray = K_GRID_DEFAULT) -> tuple[float, float]:
    """Dataset-level threshold multiplier with the best pooled F1."""
    best_k, best_f1 = float(ks[0]), -1.0
    for k in ks:
        tp = fp = fn = 0
        for ev in evaluations:
            det = detect(ev.scores, float(k), ev.sigma_population)
            counts = delay_adjust(det.flags[ev.eval_start:],
                                  ev.labels[ev.eval_start:], delay)
            tp += counts.tp
            fp += counts.fp
            fn += counts.fn
        f1 = prf(tp, fp, fn)[2]
        if f1 > best_f1:
            best_k, best_f1 = float(k), f1
    return best_k, best_f1


def build_report(evaluations: list[SeriesEvaluation], delay: int,
                 k: float | None = None,
                 ks: np.ndarray = K_GRID_DEFAULT) -> EvalReport:
    """Score every series at one shared k (swept for best pooled F1 when
    not given) and aggregate pooled and per-series-averaged metrics."""
    if k is None:
        k, _ = sweep_k(evaluations, delay, ks)
    rows = []
    tp = fp = fn = 0
    for ev in sorted(evaluations, key=lambda e: e.series_id):
        det = detect(ev.scores, k, ev.sigma_population)
        ev.sigma_r = det.sigma_r
        counts = delay_adjust(det.flags[ev.eval_start:],
                              ev.labels[ev.eval_start:], delay)
        precision, recall, f1 = prf(counts.tp, counts.fp, counts.fn)
        rows.append(SeriesReport(
            series_id=ev.series_id, tp=counts.tp, fp=counts.fp, fn=counts.fn,
            precision=precision, recall=recall, f1=f1,
            mse=ev.mse, rmse=ev.rmse, mae=ev.mae))
        tp += counts.tp
        fp += counts.fp
        fn += counts.fn
    pooled_p, pooled_r, pooled_f1 = prf(tp, fp, fn)
    n = max(len(rows), 1)
    return EvalReport(
        k=k, delay=delay, rows=rows,
        pooled_tp=tp, pooled_fp=fp, pooled_fn=fn,
        pooled_precision=pooled_p, pooled_recall=pooled_r,
        pooled_f1=pooled_f1,
        avg_precision=sum(r.precision for r in rows) / n,
        avg_recall=sum(r.recall for r in rows) / n,
        avg_f1=sum(r.f1 for r in rows) / n,
        avg_mse=sum(r.mse for r in rows) / n,
        avg_rmse=sum(r.rmse for r in rows) / n,
        avg_mae=sum(r.mae for r in rows) / n)


REPORT_HEADER = ["series_id", "tp", "fp", "fn", "precision", "recall", "f1",
                 "mse", "rmse", "mae"]


def write_report_csv(path: str, report: EvalReport) -> None:
    """Machine-readable report: one row per series plus a dataset row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in report.rows:
            writer.writerow([r.series_id, r.tp, r.fp, r.fn,
                             repr(r.precision), repr(r.recall), repr(r.f1),
                             repr(r.mse), repr(r.rmse), repr(r.mae)])
        writer.writerow(["__dataset__", report.pooled_tp, report.pooled_fp,
                         report.pooled_fn, repr(report.pooled_precision),
                         repr(report.pooled_recall), repr(report.pooled_f1),
                         repr(report.avg_mse), repr(report.avg_rmse),
                         repr(report.avg_mae)])


def format_report(report: EvalReport) -> str:
    """Human-readable table."""
    lines = [f"k={report.k:g}  delay={report.delay}",
             "series            tp    fp    fn   prec  recall    f1     rmse"]
    for r in report.rows:
        lines.append(f"{r.series_id:<15} {r.tp:5d} {r.fp:5d} {r.fn:5d} "
                     f"{r.precision:6.3f} {r.recall:7.3f} {r.f1:6.3f} "
                     f"{r.rmse:8.4f}")
    lines.append(f"pooled          {report.pooled_tp:5d} {report.pooled_fp:5d} "
                 f"{report.pooled_fn:5d} {report.pooled_precision:6.3f} "
                 f"{report.pooled_recall:7.3f} {report.pooled_f1:6.3f} "
                 f"{report.avg_rmse:8.4f}")
    lines.append(f"averaged        {'':5} {'':5} {'':5} "
                 f"{report.avg_precision:6.3f} {report.avg_recall:7.3f} "
                 f"{report.avg_f1:6.3f} {report.avg_rmse:8.4f}")
    return "\n".join(lines)


def dump_flags_csv(path: str, ev: SeriesEvaluation,
                   det: DetectionResult) -> None:
    """Audit dump: timestamp,score,flag,label for every stamp."""
    labels = ev.labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "score", "flag", "label"])
        for i, ts in enumerate(ev.timestamps):
            writer.writerow([int(ts), repr(float(det.scores[i])),
                             int(det.flags[i]), int(labels[i])])
