"""Temporal pooling of per-event features.

Two reductions: a whole-stream running average (classification) and
featurewise max over fixed, half-open time windows (keyword spotting).
Both run in one pass in arrival order and never buffer the stream.  In
int mode values are codes in the producing layer's output domain and
stay in that domain: a max of codes is exact, and the average rounds
half away from zero onto the same grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quant import QuantParams, dequantize, round_half_away


@dataclass
class WindowFeature:
    """Pooled feature of window `index`, covering
    [index * delta_t_us, (index + 1) * delta_t_us)."""

    index: int
    feat: np.ndarray


class AvgAccumulator:
    """Running featurewise mean over every event of a stream."""

    def __init__(self, dim: int, mode: str = "real", qp: QuantParams | None = None):
        self.mode = mode
        self.qp = qp
        self.count = 0
        if mode == "int":
            self.total = np.zeros(dim, dtype=np.int64)
        else:
            self.total = np.zeros(dim, dtype=np.float64)

    def add(self, feat) -> None:
        self.total = self.total + feat
        self.count += 1

    def finalize(self) -> np.ndarray:
        """Mean feature; an empty stream pools to zero (codes: zero point)."""
        if self.count == 0:
            if self.mode == "int":
                return np.full_like(self.total, self.qp.zero_point)
            return np.zeros_like(self.total)
        if self.mode == "int":
            return _div_round_half_away(self.total, self.count)
        if self.mode == "fq":
            # the float sum is an exact multiple of the code scale; snap the
            # mean onto the code grid the int path lands on
            codes = round_half_away(self.total / self.qp.scale) + self.count * self.qp.zero_point
            return dequantize(_div_round_half_away(codes, self.count), self.qp)
        return self.total / self.count


def _div_round_half_away(num: np.ndarray, den: int) -> np.ndarray:
    """Integer divide rounding half away from zero (num >= 0)."""
    return (2 * num + den) // (2 * den)


class WindowMaxPooler:
    """Featurewise max per half-open window of length delta_t_us.

    Windows are emitted in order as the stream passes their right edge;
    finish() drains the remainder so exactly ceil(duration / delta_t)
    windows come out.  Windows with no events yield zeros (codes: the
    zero point, which dequantizes to zero).  An event at t == duration
    is folded into the last window.
    """

    def __init__(self, dim: int, delta_t_us: int, duration_us: int,
                 mode: str = "real", qp: QuantParams | None = None):
        if delta_t_us < 1:
            raise ValueError(f"delta_t_us must be >= 1, got {delta_t_us}")
        self.dim = dim
        self.delta_t_us = delta_t_us
        self.num_windows = max(1, math.ceil(duration_us / delta_t_us))
        self.mode = mode
        self.qp = qp
        self._next_emit = 0  # first window index not yet emitted
        self._acc = self._empty()
        self._acc_used = False

    def _empty(self) -> np.ndarray:
        if self.mode == "int":
            return np.full(self.dim, self.qp.zero_point, dtype=np.int64)
        return np.zeros(self.dim, dtype=np.float64)

    def _window_of(self, t_us: int) -> int:
        return min(t_us // self.delta_t_us, self.num_windows - 1)

    def _emit_until(self, w: int) -> list[WindowFeature]:
        out = []
        while self._next_emit < w:
            out.append(WindowFeature(self._next_emit, self._acc if self._acc_used else self._empty()))
            self._next_emit += 1
            self._acc = self._empty()
            self._acc_used = False
        return out

    def push(self, t_us: int, feat) -> list[WindowFeature]:
        """Add one event's feature; returns any windows that just closed."""
        w = self._window_of(t_us)
        if w < self._next_emit:
            raise ValueError(f"event at t={t_us} behind already-emitted window {self._next_emit - 1}")
        closed = self._emit_until(w)
        self._acc = np.maximum(self._acc, feat) if self._acc_used else np.asarray(feat).copy()
        self._acc_used = True
        return closed

    def finish(self) -> list[WindowFeature]:
        return self._emit_until(self.num_windows)
