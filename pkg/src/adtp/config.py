"""Pipeline configuration: regime presets, flat key=value files, overrides.

Precedence, lowest to highest: dataclass defaults, the dataset-regime
preset, the config file, then ``--set key=value`` flags.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError
from .training import TrainConfig

REGIME_PRESETS: dict[str, dict] = {
    # minute-level operations series
    "kpi": dict(window=120, seq_len=256, latent_dim=3, enc_hidden=100,
                lstm_hidden=100, kl_weight=0.01, pred_weight=1.0,
                deviation_threshold=4.1, granularity="minute", period=1440,
                max_linear_gap=7, delay=7),
    # hour-level series
    "yahoo": dict(window=30, seq_len=256, latent_dim=8, enc_hidden=24,
                  lstm_hidden=24, kl_weight=0.01, pred_weight=10.0,
                  deviation_threshold=3.1, granularity="hour", period=24,
                  max_linear_gap=3, delay=3),
    # no preset applied; dataclass defaults only
    "custom": {},
}


@dataclass
class PipelineConfig:
    # data
    input_path: str = ""
    output_dir: str = "out"
    granularity: str = "minute"
    period: int = 1440
    max_linear_gap: int = 7
    delay: int = 7
    # model / training
    dataset_regime: str = "kpi"
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
    input_offset: float = 5.0
    final_relu: bool = True
    checkpoint_every: int = 0
    checkpoint: str = ""
    resume: str = ""
    sr_dump: str = ""
    # detection
    k: float = 0.0  # 0 means sweep the grid below
    k_min: float = 0.5
    k_max: float = 10.0
    k_step: float = 0.25
    # synthetic data
    synth_length: int = 20000
    synth_period: int = 1440
    synth_noise_std: float = 0.05
    synth_anomaly_rate: float = 0.005
    synth_anomaly_magnitude: float = 8.0

    def validate(self) -> None:
        if self.dataset_regime not in REGIME_PRESETS:
            raise ConfigError(f"unknown dataset_regime {self.dataset_regime!r}")
        if self.granularity not in ("minute", "hour"):
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.delay < 0:
            raise ConfigError("delay must be >= 0")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        self.to_train_config().validate()

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            window=self.window, seq_len=self.seq_len,
            latent_dim=self.latent_dim, enc_hidden=self.enc_hidden,
            lstm_hidden=self.lstm_hidden, kl_weight=self.kl_weight,
            pred_weight=self.pred_weight,
            deviation_threshold=self.deviation_threshold,
            sr_avg_window=self.sr_avg_window,
            sr_local_window=self.sr_local_window, epochs=self.epochs,
            learning_rate=self.learning_rate, grad_clip=self.grad_clip,
            plateau_patience=self.plateau_patience,
            plateau_rel_tol=self.plateau_rel_tol, seed=self.seed,
            dataset_regime=self.dataset_regime,
            input_offset=self.input_offset, final_relu=self.final_relu)

    def config_hash(self) -> str:
        """Digest of the training-relevant configuration (paths excluded)."""
        tc = self.to_train_config()
        text = "\n".join(f"{f.name}={getattr(tc, f.name)!r}"
                         for f in sorted(fields(tc), key=lambda f: f.name))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def describe(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}"
                         for f in fields(self))


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            out[key.strip()] = value.split("#", 1)[0].strip()
    return out


def build_config(file_values: dict[str, str] | None = None,
                 cli_values: dict[str, str] | None = None) -> PipelineConfig:
    """Merge preset, file, and CLI layers into a validated config."""
    file_values = dict(file_values or {})
    cli_values = dict(cli_values or {})
    regime_raw = cli_values.get("dataset_regime",
                                file_values.get("dataset_regime", "kpi"))
    if regime_raw not in REGIME_PRESETS:
        raise ConfigError(f"unknown dataset_regime {regime_raw!r}")
    cfg = PipelineConfig(dataset_regime=regime_raw)
    for key, value in REGIME_PRESETS[regime_raw].items():
        setattr(cfg, key, value)
    for layer in (file_values, cli_values):
        for key, raw in layer.items():
            setattr(cfg, key, _coerce(key, raw))
    cfg.validate()
    return cfg
