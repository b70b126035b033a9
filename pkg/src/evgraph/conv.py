"""Event-graph convolution: per-event max-aggregated point convolution.

For a vertex i with neighbors j the layer computes

    out_i = ReLU( max_j  W' @ [x_j ; pn(P_j - P_i)] + b' )

where the max runs featurewise over the neighbors plus a self-loop with
zero positional delta, pn maps the raw (channel, time) delta into
[0, 1]^2, and W'/b' are the convolution weights with batch norm folded
in.  A per-layer feature store keeps the layer input of the last event
seen on every channel, which is exactly what neighbor lookups need in
streaming operation.

Three execution modes share one routine: "real" (float64), "int"
(uint8 codes, int32 accumulators, integer rescaling only), and "fq"
(fake-quant: float math over dequantized codes snapped back onto the
accumulator grid, bit-equivalent to "int" by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import EventGraphVertex, GraphGenConfig
from .quant import (
    BatchNormParams,
    LinearQuant,
    dequantize,
    fold_batchnorm,
    quantize,
    requantize,
)

MODES = ("real", "fq", "int")


def positional_norm(d_ch, d_t_us, cfg: GraphGenConfig):
    """Raw neighbor delta -> normalized (p_ch, p_t) in [0, 1]^2.

    d_t_us = t_j - t_i is never positive and at least -r_t_us;
    d_ch = ch_j - ch_i lies in [-r_ch, r_ch].  The self-loop delta (0, 0)
    maps to (0.5, 0.0).
    """
    d_ch = np.asarray(d_ch, dtype=np.float64)
    d_t = np.asarray(d_t_us, dtype=np.float64)
    p_ch = (d_ch + cfg.r_ch) / (2.0 * cfg.r_ch) if cfg.r_ch > 0 else np.full_like(d_ch, 0.5)
    p_t = -d_t / cfg.r_t_us if cfg.r_t_us > 0 else np.zeros_like(d_t)
    return p_ch, p_t


@dataclass
class ConvLayerParams:
    """Graph-conv layer: weight is (out_dim, in_dim + 2), the trailing two
    columns acting on the positional pair."""

    weight: np.ndarray
    bias: np.ndarray
    bn: BatchNormParams | None = None
    quant: LinearQuant | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight must be (out_dim, in_dim + 2) matching bias")
        self._folded = None

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1] - 2

    def folded(self) -> tuple[np.ndarray, np.ndarray]:
        """Weight/bias with batch norm folded in (cached)."""
        if self._folded is None:
            if self.bn is None:
                self._folded = (self.weight, self.bias)
            else:
                self._folded = fold_batchnorm(self.weight, self.bias, self.bn)
        return self._folded


class FeatureStore:
    """Per-channel memory of the input feature of the last event on that
    channel at this layer (the previous layer's output for that event).

    Real/fq modes hold float vectors; int mode holds codes initialized at
    the input zero point.  Writes happen after the neighbor reads of the
    same event, mirroring the graph builder's context memory.
    """

    def __init__(self, num_channels: int, dim: int, mode: str = "real",
                 zero_code: int = 0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        if mode == "int":
            self.values = np.full((num_channels, dim), zero_code, dtype=np.int64)
        else:
            self.values = np.zeros((num_channels, dim), dtype=np.float64)

    def get(self, ch: int) -> np.ndarray:
        return self.values[ch]

    def put(self, ch: int, feat) -> None:
        self.values[ch] = feat


def _messages_real(vertex: EventGraphVertex, x_own: np.ndarray, store: FeatureStore,
                   cfg: GraphGenConfig):
    """Stacked [x_j ; pn] message inputs, self-loop first then edges in
    ascending channel order (the tie-break order of the max)."""
    n = 1 + len(vertex.edges)
    d = x_own.shape[0]
    inputs = np.empty((n, d + 2), dtype=np.float64)
    inputs[0, :d] = x_own
    inputs[0, d] = 0.5  # pn of the (0, 0) self delta
    inputs[0, d + 1] = 0.0
    for row, (ch_j, t_j) in enumerate(vertex.edges, start=1):
        inputs[row, :d] = store.get(ch_j)
        p_ch, p_t = positional_norm(ch_j - vertex.ch, t_j - vertex.t, cfg)
        inputs[row, d] = p_ch
        inputs[row, d + 1] = p_t
    return inputs


def conv_forward(vertex: EventGraphVertex, x_own, store: FeatureStore,
                 params: ConvLayerParams, cfg: GraphGenConfig, mode: str = "real"):
    """One event through one conv layer; updates the store afterwards.

    x_own is this event's layer input (float in real/fq mode, codes in
    int mode).  Returns the layer output in the same representation.
    """
    if mode == "real":
        w, b = params.folded()
        inputs = _messages_real(vertex, np.asarray(x_own, dtype=np.float64), store, cfg)
        acc = inputs @ w.T + b
        out = np.maximum(acc.max(axis=0), 0.0)
        store.put(vertex.ch, x_own)
        return out

    lq = params.quant
    if lq is None:
        raise ValueError("layer has no quantization record; run calibration first")
    d = params.in_dim
    if mode == "int":
        n = 1 + len(vertex.edges)
        inputs = np.empty((n, d + 2), dtype=np.int64)
        inputs[0, :d] = np.asarray(x_own, dtype=np.int64)
        for row, (ch_j, _) in enumerate(vertex.edges, start=1):
            inputs[row, :d] = store.get(ch_j)
        inputs[:, d:] = _pn_codes(vertex, lq, cfg)
        acc = lq.accumulate_int(inputs).max(axis=0)
        out = requantize(acc, lq.requant, lq.out_qp, lq.acc_bits)
        out = np.maximum(out, lq.out_qp.zero_point)  # ReLU on codes
        store.put(vertex.ch, x_own)
        return out

    if mode == "fq":
        inputs = _messages_real(vertex, np.asarray(x_own, dtype=np.float64), store, cfg)
        # the float inputs are exact dequants; re-quantize only the pn pair
        inputs[:, d:] = dequantize(_pn_codes(vertex, lq, cfg), lq.in_qp)
        acc = lq.accumulate_fq(inputs).max(axis=0)
        out_codes = requantize(acc, lq.requant, lq.out_qp, lq.acc_bits)
        out_codes = np.maximum(out_codes, lq.out_qp.zero_point)
        store.put(vertex.ch, x_own)
        return dequantize(out_codes, lq.out_qp)

    raise ValueError(f"unknown mode {mode!r}")


def _pn_codes(vertex: EventGraphVertex, lq: LinearQuant, cfg: GraphGenConfig) -> np.ndarray:
    """Positional pairs of the self-loop plus each edge as input codes."""
    d_ch = np.array([0] + [ch_j - vertex.ch for ch_j, _ in vertex.edges], dtype=np.float64)
    d_t = np.array([0] + [t_j - vertex.t for _, t_j in vertex.edges], dtype=np.float64)
    p_ch, p_t = positional_norm(d_ch, d_t, cfg)
    return np.stack([quantize(p_ch, lq.in_qp), quantize(p_t, lq.in_qp)], axis=1)


def conv_cycles(out_dim: int, max_edge: int) -> int:
    """Cycles per event of one conv stage: two MACs per cycle across the
    max_edge + 1 messages (self-loop included), two output features per
    pass."""
    if out_dim % 2:
        raise ValueError(f"out_dim must be even, got {out_dim}")
    if max_edge % 2 == 0 or max_edge < 1:
        raise ValueError(f"max_edge must be odd and >= 1, got {max_edge}")
    return ((max_edge + 1) // 2) * (out_dim // 2)


def flops_per_event(layer_dims, edge_count: int) -> int:
    """Dense multiply-add count for one event: every message contributes a
    full (in_dim + 2) x out_dim product at each layer."""
    total = 0
    for in_dim, out_dim in layer_dims:
        total += 2 * (in_dim + 2) * out_dim * (edge_count + 1)
    return total
