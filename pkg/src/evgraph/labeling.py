"""Activity-based keyword boundary labeling and the matching metrics.

A stream's event-count histogram (fixed bins of delta_t) is smoothed
with a small Gaussian kernel, then a hysteresis walk with an adaptive
high threshold (mean + alpha * population std of the smoothed trace) and
a proportional low threshold (beta * high) extracts activity intervals.
An interval opens on a bin strictly above the high threshold and closes
once `cooldown_bins` consecutive bins fall strictly below the low one.
Intervals shorter than min_duration are dropped; under the
single-keyword assumption the first surviving interval is the answer.

Constant-rate and empty streams produce no segment by construction: the
strict comparison never fires when the smoothed trace equals its mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import Event
from .heads import KwsOutput


@dataclass(frozen=True)
class LabelerConfig:
    t_ms: float = 1000.0
    delta_t_ms: float = 10.0
    kernel_size: int = 7
    sigma_bins: float | None = None  # default (kernel_size - 1) / 4
    alpha: float = 0.5
    beta: float = 0.2
    cooldown_bins: int = 5
    min_duration_ms: float = 40.0

    def __post_init__(self):
        if self.t_ms <= 0 or self.delta_t_ms <= 0:
            raise ValueError("t_ms and delta_t_ms must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.sigma_bins is not None and self.sigma_bins <= 0:
            raise ValueError(f"sigma_bins must be positive, got {self.sigma_bins}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (0 < self.beta < 1):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.cooldown_bins < 1:
            raise ValueError(f"cooldown_bins must be >= 1, got {self.cooldown_bins}")
        if self.min_duration_ms < self.delta_t_ms:
            raise ValueError("min_duration_ms must be at least one bin")

    @property
    def num_bins(self) -> int:
        return math.ceil(self.t_ms / self.delta_t_ms)

    @property
    def sigma(self) -> float:
        return self.sigma_bins if self.sigma_bins is not None else (self.kernel_size - 1) / 4.0


@dataclass(frozen=True)
class KeywordSegment:
    """Half-open bin interval [start_bin, end_bin) and its time extent."""

    start_bin: int
    end_bin: int
    t_start_ms: float
    t_end_ms: float


def delta_t_us(delta_t_ms: float) -> int:
    """Bin width in integer microseconds; rejects sub-microsecond widths."""
    w = round(delta_t_ms * 1000.0)
    if w < 1 or abs(w - delta_t_ms * 1000.0) > 1e-6:
        raise ValueError(f"delta_t_ms {delta_t_ms} is not a whole number of microseconds")
    return w


def event_histogram(events: Sequence[Event], cfg: LabelerConfig) -> np.ndarray:
    """Event counts per delta_t bin; t == T folds into the last bin."""
    hist = np.zeros(cfg.num_bins, dtype=np.int64)
    width = delta_t_us(cfg.delta_t_ms)  # events carry microseconds
    for ev in events:
        hist[min(ev.t // width, cfg.num_bins - 1)] += 1
    return hist


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_histogram(hist: np.ndarray, cfg: LabelerConfig) -> np.ndarray:
    if cfg.kernel_size == 1 or hist.size == 1:
        return hist.astype(np.float64)
    pad = cfg.kernel_size // 2
    padded = np.pad(hist.astype(np.float64), pad, mode="reflect")
    return np.convolve(padded, gaussian_kernel(cfg.kernel_size, cfg.sigma), mode="valid")


def segment_from_histogram(hist: np.ndarray, cfg: LabelerConfig) -> KeywordSegment | None:
    """Hysteresis walk over the smoothed histogram."""
    s = smooth_histogram(np.asarray(hist), cfg)
    mu = float(s.mean()) if s.size else 0.0
    sd = float(s.std()) if s.size else 0.0  # population std
    t_high = mu + cfg.alpha * sd
    t_low = cfg.beta * t_high
    intervals = []
    start = None
    low_run = 0
    for i, v in enumerate(s):
        if start is None:
            if v > t_high:
                start = i
                low_run = 0
        else:
            if v < t_low:
                low_run += 1
                if low_run == cfg.cooldown_bins:
                    intervals.append((start, i - cfg.cooldown_bins + 1))
                    start = None
                    low_run = 0
            else:
                low_run = 0
    if start is not None:
        intervals.append((start, s.size))
    for a, b in intervals:
        if (b - a) * cfg.delta_t_ms >= cfg.min_duration_ms:
            return KeywordSegment(
                start_bin=a,
                end_bin=b,
                t_start_ms=a * cfg.delta_t_ms,
                t_end_ms=min(b * cfg.delta_t_ms, cfg.t_ms),
            )
    return None


def extract_segment(events: Sequence[Event], cfg: LabelerConfig) -> KeywordSegment | None:
    return segment_from_histogram(event_histogram(events, cfg), cfg)


def target_window(segment: KeywordSegment, num_windows: int, placement: str = "end") -> int:
    """The window a confidence peak is supposed to land in."""
    if placement == "end":
        return int(np.clip(segment.end_bin - 1, 0, num_windows - 1))
    if placement == "onset":
        return int(np.clip(segment.start_bin, 0, num_windows - 1))
    raise ValueError(f"unknown target placement {placement!r}")


def peak_window(outputs: Sequence[KwsOutput]) -> int:
    """Index of the maximum-confidence window; ties go to the earliest."""
    conf = np.array([o.confidence for o in outputs])
    return int(np.argmax(conf))


def acc_k(outputs: Sequence[KwsOutput], label: int) -> bool:
    """Top-1 hit at the maximum-confidence window."""
    t_star = peak_window(outputs)
    return int(np.argmax(outputs[t_star].class_probs)) == label


def acc_k_delta(outputs: Sequence[KwsOutput], label: int, target: int, tol: int = 1) -> bool:
    """acc_k plus the peak landing within +-tol windows of the target."""
    t_star = peak_window(outputs)
    return (int(np.argmax(outputs[t_star].class_probs)) == label
            and abs(t_star - target) <= tol)


def word_end_rate(outputs: Sequence[KwsOutput], target: int, tol: int = 1) -> bool:
    """Class-agnostic: did the confidence peak find the word boundary."""
    return abs(peak_window(outputs) - target) <= tol
