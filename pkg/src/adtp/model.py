"""Forward computation of the joint detector/predictor network.

One segment is encoded to a diagonal-Gaussian latent, sampled (or taken at
the mean), and decoded back to a reconstruction; reconstructions feed a
single-cell LSTM that emits a one-step-ahead scalar prediction.

Because the decoder output layer is rectified, the pipeline feeds the
network normalized data shifted up by ``INPUT_OFFSET`` and shifts model
outputs back down, so genuinely negative normalized statuses are never
clipped. The shift is invertible and recorded in checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import DataError, NumericError
from .series import NormalizationParams

INPUT_OFFSET = 5.0

_MAGIC = b"ADTP1\n"


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(z):
    z = np.minimum(np.maximum(z, -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class VaeParams:
    """Encoder/decoder tensors. Two rectified hidden layers of ``hidden``
    units on each side; affine heads for the latent mean and log-std."""

    enc_w1: np.ndarray  # (hidden, window)
    enc_b1: np.ndarray
    enc_w2: np.ndarray  # (hidden, hidden)
    enc_b2: np.ndarray
    mu_w: np.ndarray    # (latent, hidden)
    mu_b: np.ndarray
    ls_w: np.ndarray    # (latent, hidden)
    ls_b: np.ndarray
    dec_w1: np.ndarray  # (hidden, latent)
    dec_b1: np.ndarray
    dec_w2: np.ndarray  # (hidden, hidden)
    dec_b2: np.ndarray
    out_w: np.ndarray   # (window, hidden)
    out_b: np.ndarray
    final_relu: bool = True

    @property
    def window(self) -> int:
        return self.out_w.shape[0]

    @property
    def hidden(self) -> int:
        return self.enc_w1.shape[0]

    @property
    def latent(self) -> int:
        return self.mu_w.shape[0]

    def tensors(self):
        return [("vae.enc_w1", self.enc_w1), ("vae.enc_b1", self.enc_b1),
                ("vae.enc_w2", self.enc_w2), ("vae.enc_b2", self.enc_b2),
                ("vae.mu_w", self.mu_w), ("vae.mu_b", self.mu_b),
                ("vae.ls_w", self.ls_w), ("vae.ls_b", self.ls_b),
                ("vae.dec_w1", self.dec_w1), ("vae.dec_b1", self.dec_b1),
                ("vae.dec_w2", self.dec_w2), ("vae.dec_b2", self.dec_b2),
                ("vae.out_w", self.out_w), ("vae.out_b", self.out_b)]


@dataclass
class LstmParams:
    """Gate tensors over the concatenated [previous hidden, segment] input."""

    w_c: np.ndarray  # (hidden, hidden + window)
    b_c: np.ndarray
    w_u: np.ndarray
    b_u: np.ndarray
    w_f: np.ndarray
    b_f: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_y: np.ndarray  # (hidden,)
    b_y: np.ndarray  # (1,)

    @property
    def hidden(self) -> int:
        return self.w_c.shape[0]

    @property
    def window(self) -> int:
        return self.w_c.shape[1] - self.w_c.shape[0]

    def tensors(self):
        return [("lstm.w_c", self.w_c), ("lstm.b_c", self.b_c),
                ("lstm.w_u", self.w_u), ("lstm.b_u", self.b_u),
                ("lstm.w_f", self.w_f), ("lstm.b_f", self.b_f),
                ("lstm.w_o", self.w_o), ("lstm.b_o", self.b_o),
                ("lstm.w_y", self.w_y), ("lstm.b_y", self.b_y)]


@dataclass
class AdtpParams:
    vae: VaeParams
    lstm: LstmParams

    def tensors(self):
        return self.vae.tensors() + self.lstm.tensors()

    def copy(self) -> "AdtpParams":
        vae = replace(self.vae, **{name.split(".")[1]: arr.copy()
                                   for name, arr in self.vae.tensors()})
        lstm = replace(self.lstm, **{name.split(".")[1]: arr.copy()
                                     for name, arr in self.lstm.tensors()})
        return AdtpParams(vae=vae, lstm=lstm)

    def zeros_like(self) -> "AdtpParams":
        vae = replace(self.vae, **{name.split(".")[1]: np.zeros_like(arr)
                                   for name, arr in self.vae.tensors()})
        lstm = replace(self.lstm, **{name.split(".")[1]: np.zeros_like(arr)
                                     for name, arr in self.lstm.tensors()})
        return AdtpParams(vae=vae, lstm=lstm)


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def zero_state(hidden: int) -> LstmState:
    return LstmState(h=np.zeros(hidden), c=np.zeros(hidden))


def init_params(window: int, enc_hidden: int, latent_dim: int,
                lstm_hidden: int, rng: np.random.Generator,
                final_relu: bool = True,
                output_bias: float = 0.0) -> AdtpParams:
    """Fresh parameters: weights uniform in +-1/sqrt(fan_in), zero biases.

    ``output_bias`` seeds the decoder output layer at the working level of
    the (offset-shifted) data; with a rectified output head and zero bias,
    output units that swing negative during the first optimization steps
    would die permanently.

    Matrices are drawn in a fixed documented order: encoder layers, latent
    heads, decoder layers, then the four gates and the output projection.
    """

    def mat(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    vae = VaeParams(
        enc_w1=mat(enc_hidden, window), enc_b1=np.zeros(enc_hidden),
        enc_w2=mat(enc_hidden, enc_hidden), enc_b2=np.zeros(enc_hidden),
        mu_w=mat(latent_dim, enc_hidden), mu_b=np.zeros(latent_dim),
        ls_w=mat(latent_dim, enc_hidden), ls_b=np.zeros(latent_dim),
        dec_w1=mat(enc_hidden, latent_dim), dec_b1=np.zeros(enc_hidden),
        dec_w2=mat(enc_hidden, enc_hidden), dec_b2=np.zeros(enc_hidden),
        out_w=mat(window, enc_hidden),
        out_b=np.full(window, float(output_bias)),
        final_relu=final_relu)
    d = lstm_hidden + window
    lstm = LstmParams(
        w_c=mat(lstm_hidden, d), b_c=np.zeros(lstm_hidden),
        w_u=mat(lstm_hidden, d), b_u=np.zeros(lstm_hidden),
        w_f=mat(lstm_hidden, d), b_f=np.zeros(lstm_hidden),
        w_o=mat(lstm_hidden, d), b_o=np.zeros(lstm_hidden),
        w_y=mat(1, lstm_hidden)[0], b_y=np.zeros(1))
    return AdtpParams(vae=vae, lstm=lstm)


# ---------------------------------------------------------------------------
# Batched VAE forward/backward (numpy matmuls; already vectorized)
# ---------------------------------------------------------------------------

@dataclass
class VaeForward:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray
    eps: np.ndarray | None
    z: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    pre_out: np.ndarray
    x_prime: np.ndarray


def vae_forward(vp: VaeParams, x: np.ndarray,
                eps: np.ndarray | None = None) -> VaeForward:
    """Encode, (re)sample, decode a (batch, window) matrix.

    ``eps`` is the externally supplied standard-normal draw; ``None`` means
    the latent mean is used (deterministic reconstruction).
    """
    h1 = _relu(x @ vp.enc_w1.T + vp.enc_b1)
    h2 = _relu(h1 @ vp.enc_w2.T + vp.enc_b2)
    mu = h2 @ vp.mu_w.T + vp.mu_b
    log_sigma = h2 @ vp.ls_w.T + vp.ls_b
    z = mu if eps is None else mu + np.exp(log_sigma) * eps
    d1 = _relu(z @ vp.dec_w1.T + vp.dec_b1)
    d2 = _relu(d1 @ vp.dec_w2.T + vp.dec_b2)
    pre_out = d2 @ vp.out_w.T + vp.out_b
    x_prime = _relu(pre_out) if vp.final_relu else pre_out
    return VaeForward(x=x, h1=h1, h2=h2, mu=mu, log_sigma=log_sigma, eps=eps,
                      z=z, d1=d1, d2=d2, pre_out=pre_out, x_prime=x_prime)


def vae_backward(vp: VaeParams, fwd: VaeForward, dx_prime: np.ndarray,
                 dmu_extra: np.ndarray | None = None,
                 dls_extra: np.ndarray | None = None
                 ) -> tuple[VaeParams, np.ndarray]:
    """Gradients of the tensors plus the gradient w.r.t. the input batch.

    ``dmu_extra``/``dls_extra`` inject loss terms that hit the latent heads
    directly (the divergence penalty), bypassing the decoder.
    """
    dpre = dx_prime * (fwd.pre_out > 0) if vp.final_relu else dx_prime
    d_out_w = dpre.T @ fwd.d2
    d_out_b = dpre.sum(axis=0)
    dd2 = (dpre @ vp.out_w) * (fwd.d2 > 0)
    d_dec_w2 = dd2.T @ fwd.d1
    d_dec_b2 = dd2.sum(axis=0)
    dd1 = (dd2 @ vp.dec_w2) * (fwd.d1 > 0)
    d_dec_w1 = dd1.T @ fwd.z
    d_dec_b1 = dd1.sum(axis=0)
    dz = dd1 @ vp.dec_w1

    dmu = dz.copy()
    if dmu_extra is not None:
        dmu += dmu_extra
    if fwd.eps is None:
        dls = np.zeros_like(fwd.log_sigma)
    else:
        dls = dz * fwd.eps * np.exp(fwd.log_sigma)
    if dls_extra is not None:
        dls += dls_extra

    d_mu_w = dmu.T @ fwd.h2
    d_mu_b = dmu.sum(axis=0)
    d_ls_w = dls.T @ fwd.h2
    d_ls_b = dls.sum(axis=0)
    dh2 = (dmu @ vp.mu_w + dls @ vp.ls_w) * (fwd.h2 > 0)
    d_enc_w2 = dh2.T @ fwd.h1
    d_enc_b2 = dh2.sum(axis=0)
    dh1 = (dh2 @ vp.enc_w2) * (fwd.h1 > 0)
    d_enc_w1 = dh1.T @ fwd.x
    d_enc_b1 = dh1.sum(axis=0)
    dx = dh1 @ vp.enc_w1

    grads = VaeParams(
        enc_w1=d_enc_w1, enc_b1=d_enc_b1, enc_w2=d_enc_w2, enc_b2=d_enc_b2,
        mu_w=d_mu_w, mu_b=d_mu_b, ls_w=d_ls_w, ls_b=d_ls_b,
        dec_w1=d_dec_w1, dec_b1=d_dec_b1, dec_w2=d_dec_w2, dec_b2=d_dec_b2,
        out_w=d_out_w, out_b=d_out_b, final_relu=vp.final_relu)
    return grads, dx


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"numeric overflow in {name}")


def encode(vp: VaeParams, segment: np.ndarray
           ) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and log-std of one segment."""
    x = np.asarray(segment, dtype=np.float64)
    fwd = vae_forward(vp, x[None, :])
    _check_finite("encoder output", fwd.mu)
    _check_finite("encoder output", fwd.log_sigma)
    return fwd.mu[0], fwd.log_sigma[0]


def reparameterize(mu: np.ndarray, log_sigma: np.ndarray,
                   noise: np.ndarray) -> np.ndarray:
    """Latent draw from externally supplied standard-normal noise."""
    return mu + np.exp(log_sigma) * noise


def decode(vp: VaeParams, z: np.ndarray) -> np.ndarray:
    """Reconstruction from one latent vector."""
    zz = np.asarray(z, dtype=np.float64)
    d1 = _relu(vp.dec_w1 @ zz + vp.dec_b1)
    d2 = _relu(vp.dec_w2 @ d1 + vp.dec_b2)
    out = vp.out_w @ d2 + vp.out_b
    if vp.final_relu:
        out = _relu(out)
    _check_finite("decoder output", out)
    return out


def reconstruct(vp: VaeParams, segment: np.ndarray, mode: str = "mean",
                sample_count: int = 1,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Reconstruct one segment.

    ``mean`` decodes the latent mean (deterministic, the inference default);
    ``sample`` averages ``sample_count`` reparameterized decodes.
    """
    mu, log_sigma = encode(vp, segment)
    if mode == "mean":
        return decode(vp, mu)
    if mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' needs an rng")
        acc = np.zeros(vp.window)
        for _ in range(sample_count):
            noise = rng.standard_normal(vp.latent)
            acc += decode(vp, reparameterize(mu, log_sigma, noise))
        return acc / sample_count
    raise ValueError(f"unknown mode {mode!r}")


def lstm_step(lp: LstmParams, state: LstmState, x_prime: np.ndarray
              ) -> tuple[LstmState, float]:
    """One cell update consuming a reconstructed segment."""
    a = np.concatenate([state.h, np.asarray(x_prime, dtype=np.float64)])
    candidate = np.tanh(lp.w_c @ a + lp.b_c)
    gate_u = _sigmoid(lp.w_u @ a + lp.b_u)
    gate_f = _sigmoid(lp.w_f @ a + lp.b_f)
    c = gate_u * candidate + gate_f * state.c
    gate_o = _sigmoid(lp.w_o @ a + lp.b_o)
    h = gate_o * np.tanh(c)
    y = float(lp.w_y @ h + lp.b_y[0])
    _check_finite("lstm state", c)
    _check_finite("lstm state", h)
    if not np.isfinite(y):
        raise NumericError("numeric overflow in lstm output")
    return LstmState(h=h, c=c), y


def lstm_rollout(lp: LstmParams, x_primes: np.ndarray,
                 state: LstmState | None = None, chunk: int = 8192
                 ) -> tuple[np.ndarray, LstmState]:
    """Predictions for a long run of reconstructed segments (cache-free)."""
    if state is None:
        state = zero_state(lp.hidden)
    h, c = state.h.copy(), state.c.copy()
    ys = np.empty(x_primes.shape[0])
    for lo in range(0, x_primes.shape[0], chunk):
        hi = min(lo + chunk, x_primes.shape[0])
        xs = np.ascontiguousarray(x_primes[lo:hi])
        y, h, c = _kernels.lstm_seq_predict(
            lp.w_c, lp.w_u, lp.w_f, lp.w_o, lp.b_c, lp.b_u, lp.b_f, lp.b_o,
            lp.w_y, float(lp.b_y[0]), xs, h, c)
        ys[lo:hi] = y
    return ys, LstmState(h=h, c=c)


# ---------------------------------------------------------------------------
# Serialization: deterministic, self-describing, bit-exact
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    params: AdtpParams
    norm: NormalizationParams | None
    meta: dict
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def save_model(path: str, params: AdtpParams,
               norm: NormalizationParams | None = None,
               meta: dict | None = None,
               extra: dict[str, np.ndarray] | None = None) -> None:
    """Write a checkpoint: JSON manifest followed by raw little-endian data.

    The byte stream is a pure function of the contents (no timestamps), so
    identical models produce identical files.
    """
    meta = dict(meta or {})
    meta["format_version"] = 1
    meta["window"] = params.vae.window
    meta["enc_hidden"] = params.vae.hidden
    meta["latent_dim"] = params.vae.latent
    meta["lstm_hidden"] = params.lstm.hidden
    meta["final_relu"] = bool(params.vae.final_relu)
    tensors = list(params.tensors())
    if norm is not None:
        tensors.append(("norm.mean_std", np.array([norm.mean, norm.std])))
    for name in sorted(extra or {}):
        tensors.append((f"extra.{name}", np.asarray(extra[name])))
    manifest = []
    blobs = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        manifest.append([name, dtype.str, list(arr.shape)])
        blobs.append(arr.astype(dtype, copy=False).tobytes(order="C"))
    header = json.dumps({"meta": meta, "tensors": manifest},
                        sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_model(path: str) -> ModelBundle:
    """Read a checkpoint written by :func:`save_model`."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a model file")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt model header: {exc}") from exc
        arrays = {}
        for name, dtype_str, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            dtype = np.dtype(dtype_str)
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise DataError(f"{path}: truncated tensor {name}")
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()

    meta = header["meta"]
    final_relu = bool(meta["final_relu"])

    def take(prefix, cls):
        kwargs = {}
        for name in list(arrays):
            if name.startswith(prefix + "."):
                kwargs[name.split(".", 1)[1]] = arrays.pop(name)
        return cls(**kwargs)

    vae_arrays = {name.split(".", 1)[1]: arrays.pop(name)
                  for name in list(arrays) if name.startswith("vae.")}
    vae = VaeParams(final_relu=final_relu, **vae_arrays)
    lstm = take("lstm", LstmParams)
    norm = None
    if "norm.mean_std" in arrays:
        ms = arrays.pop("norm.mean_std")
        norm = NormalizationParams(mean=float(ms[0]), std=float(ms[1]))
    extra = {name.split(".", 1)[1]: arr
             for name, arr in arrays.items() if name.startswith("extra.")}
    return ModelBundle(params=AdtpParams(vae=vae, lstm=lstm), norm=norm,
                       meta=meta, extra=extra)
