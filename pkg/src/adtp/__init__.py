"""Joint unsupervised anomaly detection and noise-robust trend prediction
for uni-variate operations time series."""

from ._kernels import USING_NUMBA
from .series import (NormalizationParams, Segment, SegmentSequence,
                     TimeSeries, fill_missing, make_sequences, segment_series,
                     zscore)
from .spectral import NormalityWeights, SaliencyMap, normality_confidence, saliency_map
from .model import AdtpParams, LstmParams, LstmState, VaeParams
from .training import LossBreakdown, TrainConfig, train, train_two_step
from .evaluation import EvalReport, delay_adjust, detect, prf
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AdtpParams", "EvalReport", "LossBreakdown", "LstmParams", "LstmState",
    "NormalityWeights", "NormalizationParams", "SaliencyMap", "Segment",
    "SegmentSequence", "SyntheticSpec", "TimeSeries", "TrainConfig",
    "USING_NUMBA", "VaeParams", "delay_adjust", "detect", "fill_missing",
    "generate", "make_sequences", "normality_confidence", "prf",
    "saliency_map", "segment_series", "train", "train_two_step", "zscore",
    "__version__",
]
