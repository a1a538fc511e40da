# synthetic.py
"""Seeded generators for the nonsmooth regression task and for parallel utterance corpora."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from errors import ConfigurationError
from vc_pipeline import MCC_COLUMNS, MCC_ORDER, AlignedCorpus, Utterance


@dataclass(eq=False)
class RegressionTask:
    train: AlignedCorpus
    test: AlignedCorpus
    noise_std: float


def piecewise_map(X: np.ndarray) -> np.ndarray:
    """Two outputs with jumps across x0 = 0 and x1 = 0.5 and a kink along |x2|."""
    x0, x1, x2 = X[:, 0], X[:, 1], X[:, 2]
    rest = X[:, 3:].sum(axis=1) if X.shape[1] > 3 else 0.0
    first = np.where(x0 > 0.0, 1.0 + np.sin(3.0 * x1), -1.0 + np.abs(x2)) + 0.3 * rest
    second = np.where(x1 > 0.5, 2.0 * x2, -np.abs(x0 - x2)) + np.floor(2.0 * x0) * 0.5
    return np.column_stack([first, second])


def make_regression_task(seed: int, n_train: int = 200, n_test: int = 200, input_dim: int = 4,
                         noise_std: float = 0.1) -> RegressionTask:
    if input_dim < 3:
        raise ConfigurationError(f"the piecewise task needs input_dim >= 3, got {input_dim}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n_train + n_test, input_dim))
    Y = piecewise_map(X) + noise_std * rng.standard_normal((n_train + n_test, 2))
    return RegressionTask(AlignedCorpus(X[:n_train], Y[:n_train]), AlignedCorpus(X[n_train:], Y[n_train:]),
                          noise_std)


@dataclass(eq=False)
class SpeakerMap:
    """Source-to-target relation used to build the target side of a parallel corpus."""
    gain: np.ndarray
    offset: np.ndarray
    mixing: np.ndarray
    bend: float
    f0_ratio: float
    target_mean_log_f0: float
    source_mean_log_f0: float

    def spectral(self, mcc: np.ndarray) -> np.ndarray:
        return mcc * self.gain + self.offset + self.bend * np.tanh(mcc @ self.mixing.T)

    def log_f0(self, log_f0: np.ndarray) -> np.ndarray:
        return self.f0_ratio * (log_f0 - self.source_mean_log_f0) + self.target_mean_log_f0


def make_speaker_map(seed: int, source_f0_hz: float = 120.0, target_f0_hz: float = 210.0) -> SpeakerMap:
    rng = np.random.default_rng([seed, 1])
    return SpeakerMap(
        gain=rng.uniform(0.7, 0.9, MCC_ORDER),
        offset=rng.uniform(0.3, 0.6, MCC_ORDER) * rng.choice([-1.0, 1.0], MCC_ORDER),
        mixing=rng.standard_normal((MCC_ORDER, MCC_ORDER)) / np.sqrt(MCC_ORDER),
        bend=0.15,
        f0_ratio=1.3,
        target_mean_log_f0=float(np.log(target_f0_hz)),
        source_mean_log_f0=float(np.log(source_f0_hz)),
    )


def _source_utterance(rng, frames: int, sample_rate_hz: int, frame_period_ms: float,
                      mean_log_f0: float) -> Utterance:
    t = np.arange(frames) / frames
    mcc = np.empty((frames, MCC_COLUMNS))
    mcc[:, 0] = -2.0 + 0.2 * np.sin(2.0 * np.pi * t + rng.uniform(0, 2 * np.pi))
    for k in range(1, MCC_COLUMNS):
        amplitude = 0.6 / (1.0 + 0.15 * k)
        phases = rng.uniform(0.0, 2.0 * np.pi, 2)
        mcc[:, k] = amplitude * (np.sin(2.0 * np.pi * (1 + k % 3) * t + phases[0])
                                 + 0.5 * np.sin(2.0 * np.pi * (2 + k % 5) * t + phases[1]))
    log_f0 = mean_log_f0 + 0.1 * np.sin(2.0 * np.pi * t + rng.uniform(0, 2 * np.pi))
    f0 = np.exp(log_f0)
    silent = max(1, frames // 10)
    f0[:silent] = 0.0
    f0[-silent:] = 0.0
    return Utterance(sample_rate_hz, frame_period_ms, f0, mcc)


def _target_utterance(source: Utterance, speaker: SpeakerMap, frames: int) -> Utterance:
    rows = np.round(np.linspace(0, source.frame_count - 1, frames)).astype(int)
    mcc = source.mcc[rows].copy()
    mcc[:, 1:] = speaker.spectral(mcc[:, 1:])
    f0 = source.f0_hz[rows].copy()
    voiced = f0 > 0
    f0[voiced] = np.exp(speaker.log_f0(np.log(f0[voiced])))
    return Utterance(source.sample_rate_hz, source.frame_period_ms, f0, mcc)


def make_parallel_corpus(seed: int, utterances: int = 6, min_frames: int = 40, max_frames: int = 60,
                         sample_rate_hz: int = 16000, frame_period_ms: float = 5.0
                         ) -> Tuple[List[Tuple[str, Utterance, Utterance]], SpeakerMap]:
    """``(id, source, target)`` triples plus the map that produced the targets.

    Target frames are a resampled timeline of the source, so pairs differ in length.
    """
    if utterances < 1 or min_frames < 2 or max_frames < min_frames:
        raise ConfigurationError("need >= 1 utterance and 2 <= min_frames <= max_frames")
    speaker = make_speaker_map(seed)
    rng = np.random.default_rng([seed, 0])
    triples = []
    for index in range(utterances):
        src_frames, tgt_frames = rng.integers(min_frames, max_frames + 1, size=2)
        source = _source_utterance(rng, int(src_frames), sample_rate_hz, frame_period_ms, speaker.source_mean_log_f0)
        triples.append((f"utt{index:03d}", source, _target_utterance(source, speaker, int(tgt_frames))))
    return triples, speaker
