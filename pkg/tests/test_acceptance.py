"""Acceptance suite: one test per shipping criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion. The end-to-end criteria train real models on the
synthetic benchmark (a day-periodic noisy sinusoid with labeled spikes)
and take a few minutes in total.
"""

import os
import time

import numpy as np
import pytest

from adtp import (cli, evaluation, fourier, model, series, spectral, synth,
                  training)
from helpers import (brute_force_delay_counts, finite_difference_grads,
                     make_gradcheck_instance, max_relative_error,
                     sequence_loss, sinusoid_segment_with_spike)

BENCH_SPEC = synth.SyntheticSpec(length=20000, period=1440, noise_std=0.05,
                                 anomaly_rate=0.005, anomaly_magnitude=8.0,
                                 seed=7)
BENCH_DELAY = 7


def bench_train_config(seed=1, epochs=150):
    cfg = training.TrainConfig(window=30, seq_len=256, latent_dim=8,
                               enc_hidden=24, lstm_hidden=24, kl_weight=0.01,
                               pred_weight=1.0, deviation_threshold=4.1,
                               learning_rate=1e-3, seed=seed,
                               dataset_regime="custom")
    # fixed budget: at this data size an epoch is only ~40 updates, far too
    # few for the plateau rule that suits production-sized series
    return training.train_to_convergence_config(cfg, epochs)


def report(num, ok, detail):
    print(f"\n[ACCEPTANCE {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def benchmark():
    ts = synth.generate(BENCH_SPEC)
    normalized, norm = series.zscore(ts)
    return ts, normalized, norm


@pytest.fixture(scope="module")
def clean_run(benchmark):
    ts, normalized, _ = benchmark
    start = time.monotonic()
    params, history = training.train(normalized, bench_train_config())
    ev = evaluation.analyze_series(params, normalized.values, ts.labels,
                                   ts.timestamps, "bench", 7, BENCH_SPEC.period,
                                   "minute")
    k, f1 = evaluation.sweep_k([ev], delay=BENCH_DELAY)
    elapsed = time.monotonic() - start
    return {"params": params, "history": history, "ev": ev, "k": k,
            "f1": f1, "elapsed": elapsed}


def test_c01_gradient_correctness():
    start = time.monotonic()
    worst = 0.0
    for seed in range(20):
        params, xs, wn, wbar, x_next, eps = make_gradcheck_instance(seed)
        _, grads = training._sequence_pass(params, xs, wn, wbar, x_next,
                                           eps, 0.01, 1.3)
        fd = finite_difference_grads(
            params, lambda p: sequence_loss(p, xs, wn, wbar, x_next, eps,
                                            0.01, 1.3))
        for (name, g), (_, f) in zip(grads.tensors(), fd):
            worst = max(worst, max_relative_error(g, f))
    elapsed = time.monotonic() - start
    report(1, worst < 1e-4 and elapsed < 60.0,
           f"joint-model gradients vs central differences: worst relative "
           f"error {worst:.2e} over 20 seeds (limit 1e-4), {elapsed:.1f}s "
           f"(limit 60s)")


def test_c02_fft_oracle():
    rng = np.random.default_rng(20)
    worst_dft = 0.0
    worst_rt = 0.0
    for n in (8, 30, 120, 256):
        for _ in range(100):
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            spec = fourier.fft(x)
            worst_dft = max(worst_dft,
                            float(np.max(np.abs(spec - fourier.dft_naive(x)))))
            worst_rt = max(worst_rt,
                           float(np.max(np.abs(fourier.ifft(spec) - x))))
    report(2, worst_dft < 1e-9 and worst_rt < 1e-9,
           f"fast transform vs naive DFT on 100 vectors per length "
           f"{{8,30,120,256}}: max |diff| {worst_dft:.2e}, round-trip "
           f"{worst_rt:.2e} (limit 1e-9)")


def test_c03_sr_weighting():
    rng = np.random.default_rng(31337)
    n_segments = 200
    hits = 0
    for _ in range(n_segments):
        seg, pos = sinusoid_segment_with_spike(rng)
        sal = spectral.saliency_many(seg[None, :])[0]
        # hour-regime default for the confidence midpoint
        weights = spectral.confidence_many(sal[None, :], 3.1)[0]
        if int(np.argmin(weights)) == pos and weights[pos] < 0.5:
            hits += 1
    rate = hits / n_segments
    report(3, rate >= 0.95,
           f"spike point is the confidence minimum with weight < 0.5 in "
           f"{hits}/{n_segments} segments ({rate:.1%}, limit 95%), spikes "
           f">= 6 noise-std")


def test_c04_kl_closed_form():
    rng = np.random.default_rng(40)
    worst = 0.0
    cases = 0
    while cases < 10:
        mu = rng.uniform(-2.0, 2.0, 3)
        sigma = rng.uniform(0.5, 2.0, 3)
        closed = 0.5 * np.sum(-np.log(sigma ** 2) + mu ** 2 + sigma ** 2 - 1)
        if closed < 0.1:
            continue  # relative comparison needs a non-vanishing value
        cases += 1
        eps = rng.standard_normal((1_000_000, 3))
        z = mu + sigma * eps
        mc = np.mean(0.5 * np.sum(z ** 2 - eps ** 2, axis=1)
                     - np.sum(np.log(sigma)))
        worst = max(worst, abs(mc - closed) / closed)
    zero = training.loss_vae(np.zeros(1), np.zeros(1), np.zeros(3),
                             np.zeros(3),
                             spectral.NormalityWeights(np.full(1, 0.5), 0.5),
                             1.0)[1]
    report(4, worst < 0.02 and zero == 0.0,
           f"closed-form divergence vs Monte-Carlo (1e6 draws, 10 cases): "
           f"worst relative gap {worst:.4f} (limit 0.02); exactly 0 at the "
           f"prior: {zero == 0.0}")


def test_c05_delay_adjusted_scoring():
    labels = np.zeros(20, bool)
    labels[4:9] = True
    early = np.zeros(20, bool)
    early[6] = True   # offset 2 <= delay 3
    late = np.zeros(20, bool)
    late[8] = True    # offset 4 > delay 3
    c_early = evaluation.delay_adjust(early, labels, 3)
    c_late = evaluation.delay_adjust(late, labels, 3)
    fixtures_ok = (c_early.tp, c_early.fn) == (5, 0) and \
        (c_late.tp, c_late.fn) == (0, 5)

    rng = np.random.default_rng(50)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 100))
        labels_r = rng.random(n) < rng.uniform(0.05, 0.5)
        flags_r = rng.random(n) < rng.uniform(0.05, 0.5)
        delay = int(rng.integers(0, 12))
        counts = evaluation.delay_adjust(flags_r, labels_r, delay)
        if (counts.tp, counts.fp, counts.fn, counts.tn) != \
                brute_force_delay_counts(flags_r, labels_r, delay):
            mismatches += 1
    report(5, fixtures_ok and mismatches == 0,
           f"interval fixtures exact: {fixtures_ok}; brute-force oracle "
           f"mismatches {mismatches}/1000 random (flags,labels,delay) "
           f"triples (limit 0)")


def test_c06_metric_formulas():
    rng = np.random.default_rng(60)
    worst = 0.0
    for _ in range(200):
        tp, fp, fn = (int(rng.integers(0, 60)) for _ in range(3))
        p, r, f1 = evaluation.prf(tp, fp, fn)
        pe = tp / (tp + fp) if tp + fp else 0.0
        re = tp / (tp + fn) if tp + fn else 0.0
        fe = 2 * pe * re / (pe + re) if pe + re else 0.0
        worst = max(worst, abs(p - pe), abs(r - re), abs(f1 - fe))
    rmse_gap = 0.0
    for _ in range(50):
        n = int(rng.integers(10, 80))
        w = int(rng.integers(2, 8))
        truth = rng.standard_normal(n)
        preds = rng.standard_normal(n)
        mse, rmse, mae = evaluation.prediction_metrics(preds, truth, w)
        resid = truth[w:] - preds[w - 1:n - 1]
        worst = max(worst, abs(mse - np.mean(resid ** 2)),
                    abs(mae - np.mean(np.abs(resid))))
        rmse_gap = max(rmse_gap, abs(rmse ** 2 - mse))
    report(6, worst < 1e-12 and rmse_gap < 1e-12,
           f"precision/recall/F1 and MSE/RMSE/MAE vs direct formulas: worst "
           f"gap {worst:.2e}, |rmse^2 - mse| {rmse_gap:.2e} (limit 1e-12)")


def test_c07_end_to_end_detection(clean_run):
    f1 = clean_run["f1"]
    elapsed = clean_run["elapsed"]
    report(7, f1 >= 0.90 and elapsed < 600.0,
           f"synthetic benchmark (20k points, 0.5% spikes at 8 noise-std): "
           f"best pooled F1 {f1:.4f} at k={clean_run['k']:g} with delay 7 "
           f"(limit 0.90); train+eval {elapsed:.0f}s (limit 600s)")


def test_c08_end_to_end_prediction_robustness(benchmark, clean_run):
    ts, normalized, _ = benchmark
    clean_rmse = clean_run["ev"].rmse

    corrupted, _ = synth.inject_spikes(ts.values[:len(ts) // 2], rate=0.01,
                                       magnitude_std=8.0,
                                       noise_std=BENCH_SPEC.noise_std,
                                       seed=99)
    full = ts.values.copy()
    full[:len(ts) // 2] = corrupted
    noisy_ts = series.TimeSeries(values=full, timestamps=ts.timestamps,
                                 labels=ts.labels,
                                 missing_mask=ts.missing_mask,
                                 granularity="minute", series_id="noisy")
    noisy_norm, _ = series.zscore(noisy_ts)
    params, _ = training.train(noisy_norm, bench_train_config())
    ev = evaluation.analyze_series(params, noisy_norm.values, ts.labels,
                                   ts.timestamps, "noisy", 7,
                                   BENCH_SPEC.period, "minute")
    rel_change = (ev.rmse - clean_rmse) / clean_rmse
    report(8, clean_rmse <= 0.20 and rel_change < 0.25,
           f"held-out one-step RMSE {clean_rmse:.4f} (limit 0.20); training "
           f"on 1% injected spikes moves it to {ev.rmse:.4f}, "
           f"{rel_change:+.1%} relative (limit +25%)")


def test_c09_joint_vs_two_step(benchmark):
    ts, normalized, _ = benchmark
    wins = 0
    pairs = []
    for seed in (1, 2, 3, 4, 5):
        joint, _ = training.train(normalized, bench_train_config(seed=seed))
        two, _ = training.train_two_step(normalized,
                                         bench_train_config(seed=seed))
        ev_j = evaluation.analyze_series(joint, normalized.values, ts.labels,
                                         ts.timestamps, "j", 7,
                                         BENCH_SPEC.period, "minute")
        ev_t = evaluation.analyze_series(two, normalized.values, ts.labels,
                                         ts.timestamps, "t", 7,
                                         BENCH_SPEC.period, "minute")
        pairs.append((ev_j.rmse, ev_t.rmse))
        wins += ev_j.rmse <= ev_t.rmse
    finite = all(np.isfinite(a) and np.isfinite(b) for a, b in pairs)
    detail = ", ".join(f"seed{m + 1} {a:.3f}/{b:.3f}"
                       for m, (a, b) in enumerate(pairs))
    # direction is reported, not gated: seed variance dominates at this scale
    report(9, finite,
           f"joint vs two-step held-out RMSE (joint/two-step): {detail}; "
           f"joint <= two-step in {wins}/5 seeds (reported, not gated)")


def test_c10_determinism(tmp_path):
    artifacts = []
    for run in ("a", "b"):
        out = tmp_path / run
        data = tmp_path / f"{run}.csv"
        rc = cli.main(["synth", "--set", f"input_path={data}",
                       "--set", f"output_dir={out}",
                       "--set", "dataset_regime=custom",
                       "--set", "synth_length=2000",
                       "--set", "synth_period=200",
                       "--set", "synth_anomaly_rate=0.01",
                       "--set", "synth_anomaly_magnitude=10.0",
                       "--set", "seed=17"])
        assert rc == 0
        common = ["--set", f"input_path={data}",
                  "--set", f"output_dir={out}",
                  "--set", "dataset_regime=custom",
                  "--set", "window=12", "--set", "seq_len=64",
                  "--set", "latent_dim=3", "--set", "enc_hidden=10",
                  "--set", "lstm_hidden=8", "--set", "epochs=12",
                  "--set", "plateau_patience=50",
                  "--set", "period=200", "--set", "delay=7",
                  "--set", "seed=17"]
        assert cli.main(["train"] + common) == 0
        assert cli.main(["eval"] + common) == 0
        artifacts.append({
            "model": next(out.glob("*_model.adtp")).read_bytes(),
            "report": (out / "report.csv").read_bytes(),
            "flags": next(out.glob("*_flags.csv")).read_bytes(),
            "log": next(out.glob("*_train_log.csv")).read_bytes()})
    same = all(artifacts[0][key] == artifacts[1][key]
               for key in artifacts[0])
    report(10, same,
           "two identical seeded runs: checkpoint, report, flag dump and "
           f"training log byte-identical: {same}")


def test_c11_kpi_dataset_smoke(tmp_path):
    path = os.environ.get("ADTP_KPI_DATA", "")
    if not path or not os.path.exists(path):
        print("\n[ACCEPTANCE 11] SKIP: set ADTP_KPI_DATA to a KPI-format "
              "CSV to run the real-data smoke test")
        pytest.skip("KPI dataset not supplied")
    loaded = series.load_series_csv(path)
    picked = sorted(loaded)[:3]
    out = tmp_path / "kpi"
    reports = []
    for sid in picked:
        ts = loaded[sid]
        repaired = series.fill_missing(ts)
        normalized, norm = series.zscore(repaired)
        params, _ = training.train(normalized, training.TrainConfig(seed=1))
        ev = evaluation.analyze_series(params, normalized.values,
                                       repaired.labels, repaired.timestamps,
                                       sid, repaired.max_linear_gap,
                                       repaired.period, repaired.granularity)
        reports.append(ev)
    rpt = evaluation.build_report(reports, delay=7)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_report_csv(str(out / "report.csv"), rpt)
    lines = (out / "report.csv").read_text().strip().splitlines()
    schema_ok = lines[0] == ("series_id,tp,fp,fn,precision,recall,f1,"
                             "mse,rmse,mae") and len(lines) == len(picked) + 2
    report(11, schema_ok,
           f"kpi regime end-to-end on {len(picked)} series: pooled F1 "
           f"{rpt.pooled_f1:.3f} (no numeric gate), report schema valid: "
           f"{schema_ok}")
