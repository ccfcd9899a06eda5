"""Losses, exact reverse-mode gradients, and the optimization loop.

The sequence loss is the mean over the steps of a segment run of

    confidence-weighted squared reconstruction error
  + kl_weight * (mean confidence) * KL(latent posterior || standard normal)
  + pred_weight * (mean confidence) * squared one-step prediction error

Gradients flow through the whole graph: back through the recurrence across
the entire run, through the reparameterized latent draw, and from the
prediction error back into the decoder and encoder via the reconstruction
(the joint path). Confidence weights are constants to differentiation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, model, spectral
from .errors import ConfigError, DataError, NumericError
from .series import SegmentSequence, TimeSeries, segment_matrix
from .spectral import NormalityWeights

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    window: int = 120
    seq_len: int = 256
    latent_dim: int = 3
    enc_hidden: int = 100
    lstm_hidden: int = 100
    kl_weight: float = 0.01
    pred_weight: float = 1.0
    deviation_threshold: float = 4.1
    sr_avg_window: int = 3
    sr_local_window: int = 21
    epochs: int = 50
    learning_rate: float = 1e-3
    grad_clip: float = 10.0
    plateau_patience: int = 10
    plateau_rel_tol: float = 1e-4
    seed: int = 0
    dataset_regime: str = "kpi"
    input_offset: float = model.INPUT_OFFSET
    final_relu: bool = True

    def validate(self) -> None:
        if self.kl_weight <= 0:
            raise ConfigError("kl_weight must be > 0")
        if self.pred_weight <= 0:
            raise ConfigError("pred_weight must be > 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if self.window < max(2, self.sr_avg_window):
            raise ConfigError("window too small")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    pred: float
    total: float


def loss_vae(x: np.ndarray, x_prime: np.ndarray, mu: np.ndarray,
             log_sigma: np.ndarray, weights: NormalityWeights,
             kl_weight: float) -> tuple[float, float]:
    """Weighted reconstruction error and the weighted divergence term."""
    resid = weights.weights * (np.asarray(x) - np.asarray(x_prime))
    recon = float(resid @ resid)
    kl_raw = 0.5 * float(np.sum(-2.0 * log_sigma + mu * mu
                                + np.exp(2.0 * log_sigma) - 1.0))
    return recon, kl_weight * weights.mean_weight * kl_raw


def loss_lstm(y: float, x_next: float, mean_weight: float) -> float:
    """Confidence-weighted squared one-step prediction error."""
    return mean_weight * (x_next - y) ** 2


def loss_adtp(vae_terms: tuple[float, float], lstm_term: float,
              pred_weight: float) -> LossBreakdown:
    """Assemble the per-step joint loss."""
    recon, kl_term = vae_terms
    return LossBreakdown(recon=recon, kl=kl_term, pred=lstm_term,
                         total=recon + kl_term + pred_weight * lstm_term)


def _sequence_pass(params: model.AdtpParams, xs: np.ndarray, wn: np.ndarray,
                   wbar: np.ndarray, x_next: np.ndarray,
                   eps: np.ndarray | None, kl_weight: float,
                   pred_weight: float, want_grads: bool = True,
                   detach_reconstruction: bool = False,
                   vae_grads: bool = True
                   ) -> tuple[LossBreakdown, model.AdtpParams | None]:
    """Forward pass over one segment run; optionally the exact gradients.

    xs and x_next are already offset-shifted; wn/wbar are the per-point
    confidences and their per-segment means.
    """
    vp, lp = params.vae, params.lstm
    steps = xs.shape[0]
    fwd = model.vae_forward(vp, xs, eps)
    xr = np.ascontiguousarray(fwd.x_prime)
    h0 = np.zeros(lp.hidden)
    c0 = np.zeros(lp.hidden)
    A, CT, GU, GF, GO, C, TC, H, y = _kernels.lstm_seq_forward(
        lp.w_c, lp.w_u, lp.w_f, lp.w_o, lp.b_c, lp.b_u, lp.b_f, lp.b_o,
        lp.w_y, float(lp.b_y[0]), xr, h0, c0)

    resid = wn * (xs - xr)
    recon_steps = np.sum(resid * resid, axis=1)
    kl_raw = 0.5 * np.sum(-2.0 * fwd.log_sigma + fwd.mu * fwd.mu
                          + np.exp(2.0 * fwd.log_sigma) - 1.0, axis=1)
    kl_steps = kl_weight * wbar * kl_raw
    pred_steps = wbar * (x_next - y) ** 2
    breakdown = LossBreakdown(
        recon=float(recon_steps.mean()),
        kl=float(kl_steps.mean()),
        pred=float(pred_steps.mean()),
        total=float((recon_steps + kl_steps
                     + pred_weight * pred_steps).mean()))
    if not want_grads:
        return breakdown, None

    dy = (2.0 * pred_weight / steps) * wbar * (y - x_next)
    (dwc, dwu, dwf, dwo, dbc, dbu, dbf, dbo, dwy, dby,
     dxr_pred) = _kernels.lstm_seq_backward(
        lp.w_c, lp.w_u, lp.w_f, lp.w_o, lp.w_y, c0,
        A, CT, GU, GF, GO, C, TC, H, dy)
    lstm_grads = model.LstmParams(
        w_c=dwc, b_c=dbc, w_u=dwu, b_u=dbu, w_f=dwf, b_f=dbf,
        w_o=dwo, b_o=dbo, w_y=dwy, b_y=np.array([dby]))

    if vae_grads:
        dxr = (2.0 / steps) * wn * wn * (xr - xs)
        if not detach_reconstruction:
            dxr = dxr + dxr_pred
        scale = (kl_weight / steps) * wbar[:, None]
        dmu_extra = scale * fwd.mu
        dls_extra = scale * (np.exp(2.0 * fwd.log_sigma) - 1.0)
        vae_grad, _ = model.vae_backward(vp, fwd, dxr, dmu_extra, dls_extra)
    else:
        vae_grad = replace(params.zeros_like().vae, final_relu=vp.final_relu)
    return breakdown, model.AdtpParams(vae=vae_grad, lstm=lstm_grads)


def backward(params: model.AdtpParams, sequence: SegmentSequence,
             weights: list[NormalityWeights], noise: np.ndarray,
             config: TrainConfig, detach_reconstruction: bool = False
             ) -> tuple[model.AdtpParams, LossBreakdown]:
    """Mean sequence loss gradients for an explicit segment sequence."""
    xs = np.stack([seg.points for seg in sequence.segments])
    xs = xs + config.input_offset
    x_next = np.asarray(sequence.next_values) + config.input_offset
    wn = np.stack([w.weights for w in weights])
    wbar = np.array([w.mean_weight for w in weights])
    breakdown, grads = _sequence_pass(
        params, xs, wn, wbar, x_next, noise, config.kl_weight,
        config.pred_weight, detach_reconstruction=detach_reconstruction)
    _check_finite_grads(grads)
    return grads, breakdown


def _check_finite_grads(grads: model.AdtpParams) -> None:
    for name, arr in grads.tensors():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"numeric overflow in gradient {name}")


# ---------------------------------------------------------------------------
# Optimizer: adaptive moments with bias correction
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def for_params(cls, params: model.AdtpParams) -> "AdamState":
        return cls(m={n: np.zeros_like(a) for n, a in params.tensors()},
                   v={n: np.zeros_like(a) for n, a in params.tensors()},
                   step_count=0)


@dataclass
class EpochSnapshot:
    """State handed to the per-epoch callback (checkpoint material)."""
    epoch: int
    params: model.AdtpParams     # live parameters after this epoch
    adam: "AdamState"
    breakdown: LossBreakdown
    best_params: model.AdtpParams
    best_total: float


def optimizer_step(params: model.AdtpParams, grads: model.AdtpParams,
                   state: AdamState, learning_rate: float,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> model.AdtpParams:
    """In-place adaptive-moment update; deterministic given iteration order."""
    state.step_count += 1
    c1 = 1.0 - beta1 ** state.step_count
    c2 = 1.0 - beta2 ** state.step_count
    for (name, p), (_, g) in zip(params.tensors(), grads.tensors()):
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def clip_gradients(grads: model.AdtpParams, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    total = 0.0
    for _, g in grads.tensors():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, g in grads.tensors():
            g *= factor
    return norm


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _training_arrays(series: TimeSeries, cfg: TrainConfig):
    """Segment matrix, confidences, and targets for the first half."""
    values = series.values
    if np.isnan(values).any():
        raise DataError("training requires a repaired, gap-free series")
    n_train = len(values) // 2
    if n_train - cfg.window < 1:
        raise DataError(f"training half of {n_train} points is too short "
                        f"for window {cfg.window}")
    segments = segment_matrix(values[:n_train], cfg.window)[:-1]
    x_next = values[cfg.window:n_train]
    wn, wbar = spectral.confidence_for_segments(
        segments, cfg.deviation_threshold, cfg.sr_avg_window,
        cfg.sr_local_window)
    xs = segments + cfg.input_offset
    return xs, x_next + cfg.input_offset, wn, wbar


def _deterministic_loss(params, bounds, xs_all, wn_all, wbar_all, xn_all,
                        kl_weight, pred_weight) -> LossBreakdown:
    """End-of-epoch loss at the latent mean: free of sampling noise, so the
    plateau detector sees genuine convergence rather than draw luck."""
    sums = np.zeros(4)
    steps = 0
    for lo, hi in bounds:
        bd, _ = _sequence_pass(params, xs_all[lo:hi], wn_all[lo:hi],
                               wbar_all[lo:hi], xn_all[lo:hi], None,
                               kl_weight, pred_weight, want_grads=False)
        sums += (hi - lo) * np.array([bd.recon, bd.kl, bd.pred, bd.total])
        steps += hi - lo
    return LossBreakdown(*(sums / steps))


def train(series: TimeSeries, cfg: TrainConfig, on_epoch=None,
          initial: model.AdtpParams | None = None,
          adam: AdamState | None = None, start_epoch: int = 0,
          phase: str = "joint",
          best_state: tuple[model.AdtpParams, float] | None = None
          ) -> tuple[model.AdtpParams, list[LossBreakdown]]:
    """Optimize on the first half of a preprocessed series; returns the
    parameters of the best epoch and the per-epoch loss history.

    Epoch ``e`` draws its shuffle order and latent noise from a generator
    seeded with (seed, e), so a run resumed from a checkpoint (live params,
    optimizer state, best-so-far state, next epoch) continues
    bit-identically. Confidence weights are computed once up front. If the
    loss turns non-finite the loop aborts with the best epoch seen so far.

    The per-epoch history holds the deterministic (latent-mean) loss; it
    drives early stopping and selects the returned parameters, because the
    end-of-epoch parameters oscillate at small data scales.

    ``phase`` selects joint training (default), ``detector_only`` (no
    prediction loss), or ``predictor_only`` (deterministic reconstructions,
    recurrent block updated alone).
    """
    cfg.validate()
    if phase not in ("joint", "detector_only", "predictor_only"):
        raise ConfigError(f"unknown training phase {phase!r}")
    xs_all, xn_all, wn_all, wbar_all = _training_arrays(series, cfg)
    n_seg = xs_all.shape[0]
    bounds = [(lo, min(lo + cfg.seq_len, n_seg))
              for lo in range(0, n_seg, cfg.seq_len)]

    pred_weight = 0.0 if phase == "detector_only" else cfg.pred_weight
    vae_updates = phase != "predictor_only"

    if initial is None:
        init_rng = np.random.default_rng(cfg.seed)
        params = model.init_params(cfg.window, cfg.enc_hidden, cfg.latent_dim,
                                   cfg.lstm_hidden, init_rng, cfg.final_relu,
                                   output_bias=cfg.input_offset)
    else:
        params = initial.copy()
    if adam is None:
        adam = AdamState.for_params(params)

    history: list[LossBreakdown] = []
    if best_state is None:
        best_params, best_total = params.copy(), np.inf
    else:
        best_params, best_total = best_state[0].copy(), float(best_state[1])
    # plateau detection on the rolling mean of the last `patience` epoch
    # losses; raw epoch totals bounce too much for a meaningful comparison
    best_smoothed = np.inf
    best_epoch = start_epoch - 1
    recent: list[float] = []
    for epoch in range(start_epoch, cfg.epochs):
        erng = np.random.default_rng([cfg.seed, epoch])
        order = erng.permutation(len(bounds))
        for si in order:
            lo, hi = bounds[si]
            eps = None
            if phase != "predictor_only":
                eps = erng.standard_normal((hi - lo, cfg.latent_dim))
            breakdown, grads = _sequence_pass(
                params, xs_all[lo:hi], wn_all[lo:hi], wbar_all[lo:hi],
                xn_all[lo:hi], eps, cfg.kl_weight, pred_weight,
                vae_grads=vae_updates)
            if not np.isfinite(breakdown.total):
                logger.warning("loss diverged at epoch %d; keeping the best "
                               "completed epoch", epoch)
                return best_params, history
            _check_finite_grads(grads)
            clip_gradients(grads, cfg.grad_clip)
            optimizer_step(params, grads, adam, cfg.learning_rate)
        epoch_bd = _deterministic_loss(params, bounds, xs_all, wn_all,
                                       wbar_all, xn_all, cfg.kl_weight,
                                       pred_weight)
        if not np.isfinite(epoch_bd.total):
            logger.warning("loss diverged at epoch %d; keeping the best "
                           "completed epoch", epoch)
            return best_params, history
        history.append(epoch_bd)
        if epoch_bd.total < best_total:
            best_params, best_total = params.copy(), epoch_bd.total
        if on_epoch is not None:
            on_epoch(EpochSnapshot(epoch=epoch, params=params, adam=adam,
                                   breakdown=epoch_bd,
                                   best_params=best_params,
                                   best_total=best_total))
        recent.append(epoch_bd.total)
        if len(recent) > cfg.plateau_patience:
            recent.pop(0)
        if len(recent) == cfg.plateau_patience:
            smoothed = sum(recent) / len(recent)
            if smoothed < best_smoothed * (1.0 - cfg.plateau_rel_tol):
                best_smoothed = smoothed
                best_epoch = epoch
            elif epoch - best_epoch >= cfg.plateau_patience:
                logger.info("loss plateau at epoch %d; stopping early", epoch)
                break
    return best_params, history


def train_two_step(series: TimeSeries, cfg: TrainConfig, on_epoch=None
                   ) -> tuple[model.AdtpParams, list[LossBreakdown]]:
    """Baseline schedule: fit the detector alone, freeze it, fit the
    predictor on its deterministic reconstructions."""
    detector, hist1 = train(series, cfg, phase="detector_only")
    params, hist2 = train(series, cfg, on_epoch=on_epoch, initial=detector,
                          phase="predictor_only")
    return params, hist1 + hist2


def train_to_convergence_config(cfg: TrainConfig, epochs: int) -> TrainConfig:
    """Copy of ``cfg`` with a fixed epoch budget and early stopping off."""
    return replace(cfg, epochs=epochs, plateau_patience=epochs + 1)
