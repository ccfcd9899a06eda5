"""Command-line surface tying the pipeline together.

    adtp preprocess|synth|train|detect|predict|eval --config PATH [--set k=v ...]

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
``ADTP_THREADS`` caps worker threads of the accelerated kernel lane.
"""

from __future__ import annotations

import argparse
import csv
import os
import re
import sys

import numpy as np

from . import _kernels, evaluation, model, series, spectral, synth, training
from .config import PipelineConfig, build_config, parse_config_file
from .errors import AdtpError, ConfigError, DataError, NumericError


def _apply_thread_cap() -> None:
    raw = os.environ.get("ADTP_THREADS", "").strip()
    if not raw:
        return
    try:
        cap = max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"ADTP_THREADS must be an integer: {raw!r}") from exc
    if _kernels.USING_NUMBA:
        import numba

        numba.set_num_threads(min(cap, numba.get_num_threads()))


def _slug(series_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", series_id) or "series"


def _model_path(cfg: PipelineConfig, series_id: str) -> str:
    if cfg.checkpoint:
        return cfg.checkpoint
    return os.path.join(cfg.output_dir, f"{_slug(series_id)}_model.adtp")


def _load_input(cfg: PipelineConfig) -> dict[str, series.TimeSeries]:
    if not cfg.input_path:
        raise ConfigError("input_path is not set")
    return series.load_series_csv(cfg.input_path, granularity=cfg.granularity)


def _preprocess_one(cfg: PipelineConfig, ts: series.TimeSeries
                    ) -> tuple[series.TimeSeries, series.TimeSeries,
                               series.NormalizationParams]:
    repaired = series.fill_missing(ts, cfg.max_linear_gap, cfg.period)
    normalized, norm = series.zscore(repaired)
    return repaired, normalized, norm


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> int:
    spec = synth.SyntheticSpec(
        length=cfg.synth_length, period=cfg.synth_period,
        noise_std=cfg.synth_noise_std, anomaly_rate=cfg.synth_anomaly_rate,
        anomaly_magnitude=cfg.synth_anomaly_magnitude, seed=cfg.seed)
    ts = synth.generate(spec)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = cfg.input_path or os.path.join(cfg.output_dir, "synthetic.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value", "label", "KPI ID"])
        for t, v, lab in zip(ts.timestamps, ts.values, ts.labels):
            writer.writerow([int(t), repr(float(v)), int(lab), ts.series_id])
    print(f"wrote {len(ts)} points ({int(ts.labels.sum())} anomalous) "
          f"to {path}")
    return 0


def cmd_preprocess(cfg: PipelineConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    norms = []
    for sid, ts in _load_input(cfg).items():
        repaired, normalized, norm = _preprocess_one(cfg, ts)
        slug = _slug(sid)
        series.dump_repaired_csv(
            os.path.join(cfg.output_dir, f"{slug}_repaired.csv"), repaired)
        series.dump_repaired_csv(
            os.path.join(cfg.output_dir, f"{slug}_normalized.csv"), normalized)
        norms.append((slug, norm))
        print(f"{slug}: {len(repaired)} points, "
              f"{int(repaired.missing_mask.sum())} filled")
    with open(os.path.join(cfg.output_dir, "normalization.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "mean", "std"])
        for slug, norm in norms:
            writer.writerow([slug, repr(norm.mean), repr(norm.std)])
    return 0


def _adam_extra(adam: training.AdamState) -> dict[str, np.ndarray]:
    extra = {f"adam.m.{name}": arr for name, arr in adam.m.items()}
    extra.update({f"adam.v.{name}": arr for name, arr in adam.v.items()})
    extra["adam.t"] = np.array([adam.step_count], dtype=np.int64)
    return extra


def _adam_from_extra(extra: dict[str, np.ndarray],
                     params: model.AdtpParams) -> training.AdamState:
    adam = training.AdamState.for_params(params)
    for name in adam.m:
        adam.m[name] = extra[f"adam.m.{name}"].copy()
        adam.v[name] = extra[f"adam.v.{name}"].copy()
    adam.step_count = int(extra["adam.t"][0])
    return adam


def _save_checkpoint(path: str, params: model.AdtpParams,
                     norm: series.NormalizationParams, cfg: PipelineConfig,
                     sid: str, next_epoch: int,
                     adam: training.AdamState | None,
                     best: tuple[model.AdtpParams, float] | None = None
                     ) -> None:
    meta = {"series_id": sid, "config_hash": cfg.config_hash(),
            "input_offset": cfg.input_offset, "epoch": next_epoch,
            "dataset_regime": cfg.dataset_regime}
    extra = _adam_extra(adam) if adam is not None else {}
    if best is not None:
        best_params, best_total = best
        for name, arr in best_params.tensors():
            extra[f"best.{name}"] = arr
        extra["best.total"] = np.array([best_total])
    model.save_model(path, params, norm=norm, meta=meta, extra=extra or None)


def cmd_train(cfg: PipelineConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    print("effective configuration:")
    print(cfg.describe())
    tc = cfg.to_train_config()
    for sid, ts in _load_input(cfg).items():
        slug = _slug(sid)
        _, normalized, norm = _preprocess_one(cfg, ts)
        initial = adam = best_state = None
        start_epoch = 0
        if cfg.resume:
            bundle = model.load_model(cfg.resume)
            initial = bundle.params
            adam = _adam_from_extra(bundle.extra, initial)
            start_epoch = int(bundle.meta["epoch"])
            norm = bundle.norm or norm
            if "best.total" in bundle.extra:
                best_params = initial.copy()
                for name, arr in best_params.tensors():
                    arr[...] = bundle.extra[f"best.{name}"]
                best_state = (best_params,
                              float(bundle.extra["best.total"][0]))
            print(f"{slug}: resuming at epoch {start_epoch}")

        if cfg.sr_dump:
            half = len(normalized) // 2
            segs = series.segment_matrix(normalized.values[:half],
                                         cfg.window)[:-1]
            sal = spectral.saliency_many(segs, cfg.sr_avg_window)
            wn = spectral.confidence_many(sal, cfg.deviation_threshold,
                                          cfg.sr_local_window)
            spectral.dump_weights_csv(
                cfg.sr_dump, np.arange(cfg.window - 1,
                                       cfg.window - 1 + segs.shape[0]),
                sal, wn)

        log_rows = []

        def on_epoch(snap):
            log_rows.append((snap.epoch, snap.breakdown))
            if cfg.checkpoint_every and (snap.epoch + 1) % cfg.checkpoint_every == 0:
                _save_checkpoint(
                    os.path.join(cfg.output_dir,
                                 f"{slug}_epoch{snap.epoch + 1:04d}.adtp"),
                    snap.params, norm, cfg, sid, snap.epoch + 1, snap.adam,
                    best=(snap.best_params, snap.best_total))

        params, history = training.train(
            normalized, tc, on_epoch=on_epoch, initial=initial, adam=adam,
            start_epoch=start_epoch, best_state=best_state)
        # the shipped model is the best epoch; optimizer state lives only
        # in the periodic training checkpoints
        _save_checkpoint(_model_path(cfg, sid), params, norm, cfg, sid,
                         start_epoch + len(history), None)

        log_path = os.path.join(cfg.output_dir, f"{slug}_train_log.csv")
        mode = "a" if cfg.resume and os.path.exists(log_path) else "w"
        with open(log_path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if mode == "w":
                writer.writerow(["epoch", "recon", "kl", "pred", "total"])
            for epoch, bd in log_rows:
                writer.writerow([epoch, repr(bd.recon), repr(bd.kl),
                                 repr(bd.pred), repr(bd.total)])
        final = history[-1] if history else None
        if final is not None:
            print(f"{slug}: {len(history)} epochs, final total loss "
                  f"{final.total:.6f}")
    return 0


def _analyzed(cfg: PipelineConfig) -> list[evaluation.SeriesEvaluation]:
    out = []
    for sid, ts in _load_input(cfg).items():
        bundle = model.load_model(_model_path(cfg, sid))
        repaired = series.fill_missing(ts, cfg.max_linear_gap, cfg.period)
        if bundle.norm is None:
            raise DataError(f"checkpoint for {sid!r} carries no "
                            "normalization parameters")
        values = bundle.norm.apply(repaired.values)
        offset = float(bundle.meta.get("input_offset", cfg.input_offset))
        out.append(evaluation.analyze_series(
            bundle.params, values, repaired.labels, repaired.timestamps,
            sid, cfg.max_linear_gap, cfg.period, cfg.granularity, offset))
    return out


def _k_grid(cfg: PipelineConfig) -> np.ndarray:
    return np.arange(cfg.k_min, cfg.k_max + 1e-9, cfg.k_step)


def cmd_detect(cfg: PipelineConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    evs = _analyzed(cfg)
    if cfg.k > 0:
        k = cfg.k
    else:
        if not any(ev.labels.any() for ev in evs):
            raise ConfigError("k sweep needs labeled data; set k explicitly")
        k, f1 = evaluation.sweep_k(evs, cfg.delay, _k_grid(cfg))
        print(f"swept k={k:g} (pooled F1 {f1:.4f})")
    for ev in evs:
        det = evaluation.detect(ev.scores, k, ev.sigma_population)
        path = os.path.join(cfg.output_dir, f"{_slug(ev.series_id)}_flags.csv")
        evaluation.dump_flags_csv(path, ev, det)
        flagged = int(det.flags[ev.eval_start:].sum())
        print(f"{_slug(ev.series_id)}: threshold {det.threshold:.6f} "
              f"(sigma {det.sigma_r:.6f}), {flagged} flags in the "
              f"evaluation half -> {path}")
    return 0


def cmd_predict(cfg: PipelineConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    for sid, ts in _load_input(cfg).items():
        bundle = model.load_model(_model_path(cfg, sid))
        repaired = series.fill_missing(ts, cfg.max_linear_gap, cfg.period)
        if bundle.norm is None:
            raise DataError(f"checkpoint for {sid!r} carries no "
                            "normalization parameters")
        values = bundle.norm.apply(repaired.values)
        offset = float(bundle.meta.get("input_offset", cfg.input_offset))
        preds_norm = evaluation.predict_series(bundle.params, values, offset)
        preds_raw = bundle.norm.invert(preds_norm)
        path = os.path.join(cfg.output_dir, f"{_slug(sid)}_predictions.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "prediction", "prediction_norm"])
            for i, t in enumerate(repaired.timestamps):
                writer.writerow([int(t), repr(float(preds_raw[i])),
                                 repr(float(preds_norm[i]))])
        print(f"{_slug(sid)}: predictions -> {path}")
    return 0


def cmd_eval(cfg: PipelineConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    evs = _analyzed(cfg)
    k = cfg.k if cfg.k > 0 else None
    report = evaluation.build_report(evs, cfg.delay, k=k, ks=_k_grid(cfg))
    for ev in evs:
        det = evaluation.detect(ev.scores, report.k, ev.sigma_population)
        evaluation.dump_flags_csv(
            os.path.join(cfg.output_dir, f"{_slug(ev.series_id)}_flags.csv"),
            ev, det)
    report_path = os.path.join(cfg.output_dir, "report.csv")
    evaluation.write_report_csv(report_path, report)
    print(evaluation.format_report(report))
    print(f"report -> {report_path}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="adtp",
        description="Joint anomaly detection and trend prediction on "
                    "operations time series.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", dest="overrides",
                        help="override one config key (repeatable)")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        _apply_thread_cap()
        file_values = parse_config_file(args.config) if args.config else {}
        cli_values = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            cli_values[key.strip()] = value.strip()
        cfg = build_config(file_values, cli_values)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except AdtpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
