# vc_pipeline.py
"""Feature plumbing around the regressor: alignment, F0 mapping, conversion, MCD and spectra."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from librosa.sequence import dtw

from errors import ConfigurationError, InputError, InputShapeError, NumericalFailureError
from svgp import SvdklModel, predict_mean

logger = logging.getLogger(__name__)

MCC_ORDER = 24
MCC_COLUMNS = MCC_ORDER + 1
MCD_CONSTANT = 10.0 / np.log(10.0)
DTW_STEPS = np.array([[1, 1], [0, 1], [1, 0]])


@dataclass(eq=False)
class Utterance:
    sample_rate_hz: int
    frame_period_ms: float
    f0_hz: np.ndarray
    mcc: np.ndarray
    aperiodicity: Optional[Any] = None

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        self.mcc = np.atleast_2d(np.asarray(self.mcc, dtype=np.float64))
        if self.mcc.shape[0] != self.f0_hz.shape[0]:
            raise InputShapeError(f"{self.f0_hz.shape[0]} F0 values but {self.mcc.shape[0]} MCC frames")
        if np.any(self.f0_hz < 0) or not np.all(np.isfinite(self.f0_hz)):
            raise InputError("F0 values must be finite and >= 0")
        if not np.all(np.isfinite(self.mcc)):
            raise InputError("MCC values must be finite")

    @property
    def frame_count(self) -> int:
        return int(self.f0_hz.shape[0])


@dataclass(eq=False)
class AlignedCorpus:
    X: np.ndarray
    Y: np.ndarray
    provenance: List[Tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        if self.X.shape[0] != self.Y.shape[0]:
            raise InputShapeError(f"X has {self.X.shape[0]} rows, Y has {self.Y.shape[0]}")

    @property
    def size(self) -> int:
        return int(self.X.shape[0]) if self.X.size else 0


@dataclass
class F0Stats:
    mean_log_f0: float
    std_log_f0: float
    voiced_frame_count: int


@dataclass
class WarpingConfig:
    alpha: float = 0.41
    gamma: float = 0.0
    num_bins: int = 257

    def validate(self):
        if not -1.0 < self.alpha < 1.0:
            raise ConfigurationError(f"|alpha| must be < 1, got {self.alpha}")
        if self.gamma != 0.0:
            raise ConfigurationError("only the cepstral case gamma = 0 is supported")
        if self.num_bins < 2:
            raise ConfigurationError(f"num_bins must be >= 2, got {self.num_bins}")
        return self


def dtw_align(src: np.ndarray, tgt: np.ndarray) -> Tuple[List[Tuple[int, int]], float]:
    """Minimal squared-Euclidean alignment with steps (1,0), (0,1), (1,1).

    Ties prefer the diagonal step.
    """
    src = np.atleast_2d(np.asarray(src, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(tgt, dtype=np.float64))
    if src.shape[0] == 0 or tgt.shape[0] == 0 or src.size == 0 or tgt.size == 0:
        raise InputError("DTW needs two nonempty sequences")
    if src.shape[1] != tgt.shape[1]:
        raise InputShapeError(f"sequence dimensions differ: {src.shape[1]} vs {tgt.shape[1]}")
    # diagonal step listed first, strict comparison keeps it on ties
    acc, warp = dtw(X=src.T, Y=tgt.T, metric="sqeuclidean", step_sizes_sigma=DTW_STEPS)
    path = [(int(i), int(j)) for i, j in warp[::-1]]
    return path, float(acc[-1, -1])


def _check_mcc(utterance: Utterance, role: str) -> None:
    if utterance.mcc.shape[1] != MCC_COLUMNS:
        raise InputShapeError(f"{role} utterance has {utterance.mcc.shape[1]} MCC columns, expected {MCC_COLUMNS}")


def build_training_set(pairs: Sequence[Tuple[Utterance, Utterance]],
                       ids: Optional[Sequence[str]] = None) -> AlignedCorpus:
    """DTW-align each pair on MCC 1..24 and stack one (x, y) row per path cell."""
    if ids is None:
        ids = [str(index) for index in range(len(pairs))]
    if len(ids) != len(pairs):
        raise InputError(f"{len(pairs)} pairs but {len(ids)} ids")
    xs, ys, provenance = [], [], []
    for utt_id, (src, tgt) in zip(ids, pairs):
        _check_mcc(src, "source")
        _check_mcc(tgt, "target")
        if src.frame_count < 2 or tgt.frame_count < 2:
            raise InputError(f"pair '{utt_id}': every utterance needs at least two frames")
        src_feat, tgt_feat = src.mcc[:, 1:], tgt.mcc[:, 1:]
        path, cost = dtw_align(src_feat, tgt_feat)
        rows_s = [i for i, _ in path]
        rows_t = [j for _, j in path]
        xs.append(src_feat[rows_s])
        ys.append(tgt_feat[rows_t])
        provenance.extend((utt_id, i, j) for i, j in path)
        logger.info(f"aligned pair '{utt_id}': {src.frame_count}x{tgt.frame_count} frames, "
                    f"{len(path)} cells, cost {cost:.4g}")
    if not xs:
        return AlignedCorpus(np.zeros((0, MCC_ORDER)), np.zeros((0, MCC_ORDER)), [])
    return AlignedCorpus(np.vstack(xs), np.vstack(ys), provenance)


def f0_stats(utterances: Sequence[Utterance]) -> F0Stats:
    voiced = [u.f0_hz[u.f0_hz > 0] for u in utterances]
    log_f0 = np.log(np.concatenate(voiced)) if voiced else np.zeros(0)
    if log_f0.shape[0] < 2:
        raise InputError(f"F0 statistics need at least two voiced frames, got {log_f0.shape[0]}")
    return F0Stats(float(np.mean(log_f0)), float(np.std(log_f0)), int(log_f0.shape[0]))


def convert_f0(track: np.ndarray, src: F0Stats, tgt: F0Stats) -> np.ndarray:
    """Linear mapping of voiced log-F0; unvoiced frames stay 0."""
    if not src.std_log_f0 > 0.0:
        raise NumericalFailureError("source log-F0 standard deviation is zero")
    track = np.asarray(track, dtype=np.float64)
    converted = np.zeros_like(track)
    voiced = track > 0
    ratio = tgt.std_log_f0 / src.std_log_f0
    converted[voiced] = np.exp(ratio * (np.log(track[voiced]) - src.mean_log_f0) + tgt.mean_log_f0)
    return converted


def convert_utterance(model: SvdklModel, src: Utterance) -> Utterance:
    """Replace MCC 1..24 with predictive means, keep C(0), map F0 and copy everything else."""
    _check_mcc(src, "source")
    if model.input_dim != MCC_ORDER or model.output_dim != MCC_ORDER:
        raise ConfigurationError(
            f"model maps {model.input_dim} -> {model.output_dim} dims, utterances need {MCC_ORDER} -> {MCC_ORDER}")
    mcc = src.mcc.copy()
    mcc[:, 1:] = predict_mean(model, model.normalize(src.mcc[:, 1:]))
    if model.f0_source is not None and model.f0_target is not None:
        f0 = convert_f0(src.f0_hz, model.f0_source, model.f0_target)
    else:
        logger.warning("model carries no F0 statistics; F0 copied unchanged")
        f0 = src.f0_hz.copy()
    return Utterance(src.sample_rate_hz, src.frame_period_ms, f0, mcc, src.aperiodicity)


def mcd(a: Utterance, b: Utterance) -> float:
    """Mean mel-cepstral distortion in dB over the DTW path on MCC 1..24."""
    if a.frame_count == 0 or b.frame_count == 0:
        raise InputError("MCD needs two nonempty utterances")
    feat_a, feat_b = a.mcc[:, 1:], b.mcc[:, 1:]
    path, _ = dtw_align(feat_a, feat_b)
    rows_a = [i for i, _ in path]
    rows_b = [j for _, j in path]
    diff = feat_a[rows_a] - feat_b[rows_b]
    per_frame = MCD_CONSTANT * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(np.mean(per_frame))


def corpus_mcd(model: SvdklModel, pairs: Sequence[Tuple[Utterance, Utterance]]) -> float:
    """Average MCD of converted sources against their targets."""
    if not pairs:
        raise InputError("no utterance pairs to evaluate")
    return float(np.mean([mcd(convert_utterance(model, src), tgt) for src, tgt in pairs]))


def warp_phase(omega, alpha: float):
    """Phase response of the first-order all-pass warping; maps [0, pi] onto itself."""
    if not -1.0 < alpha < 1.0:
        raise ConfigurationError(f"|alpha| must be < 1, got {alpha}")
    omega = np.asarray(omega, dtype=np.float64)
    beta = np.arctan2((1.0 - alpha * alpha) * np.sin(omega), (1.0 + alpha * alpha) * np.cos(omega) - 2.0 * alpha)
    return float(beta) if beta.ndim == 0 else beta


def spectrum_frequencies(num_bins: int) -> np.ndarray:
    return np.pi * np.arange(num_bins) / (num_bins - 1)


def mcc_to_log_spectrum(coeffs: np.ndarray, cfg: WarpingConfig) -> np.ndarray:
    """Natural-log magnitude at ``spectrum_frequencies(cfg.num_bins)``."""
    cfg.validate()
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    omega = spectrum_frequencies(cfg.num_bins)
    beta = warp_phase(omega, cfg.alpha)
    orders = np.arange(coeffs.shape[0])
    return np.cos(np.outer(beta, orders)) @ coeffs
