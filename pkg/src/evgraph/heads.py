"""Network heads: MLP classifier, GRU cell, and the windowed keyword head.

The keyword head consumes one pooled feature per time window: a two-layer
ReLU stem, a GRU over windows, and two output projections (class scores
through softmax, a scalar keyword confidence through sigmoid).  Its
hardware counterpart is a two-unit vector engine stepping through six
matrix products per window; `head_cycles` models that schedule, and the
state carries the recurrent U @ h + b terms precomputed right after the
previous window so a new window only waits on the input-side products.

In int mode sigmoids and tanh run through 256-entry lookup tables over
the calibrated pre-activation range; the Hadamard products of the GRU
update are integer products rescaled by the fixed 1/255 sigmoid scale.
Class scores are always returned as float probabilities (softmax over
logits, dequantized first in int mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pooling import WindowFeature
from .quant import (
    SIGMOID_OUT,
    TANH_OUT,
    LinearQuant,
    QuantParams,
    RequantParams,
    dequantize,
    lut_lookup,
    rescale,
    sigmoid,
)

GATES = ("z", "r", "h")


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits))
    return e / e.sum()


@dataclass
class LinearParams:
    weight: np.ndarray
    bias: np.ndarray
    quant: LinearQuant | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)


@dataclass
class MlpParams:
    """Linear layers with ReLU after each except (optionally) the last."""

    layers: list[LinearParams]
    relu_after_last: bool = False


def mlp_forward(x, mlp: MlpParams, mode: str = "real"):
    """Returns final-layer activations; if the final layer keeps no output
    quantizer (a logit layer), int/fq modes return float logits."""
    for i, layer in enumerate(mlp.layers):
        is_last = i == len(mlp.layers) - 1
        relu = mlp.relu_after_last or not is_last
        if mode == "real":
            x = layer.weight @ x + layer.bias
            if relu:
                x = np.maximum(x, 0.0)
            continue
        lq = layer.quant
        if lq is None:
            raise ValueError("layer has no quantization record; run calibration first")
        acc = lq.accumulate_int(x) if mode == "int" else lq.accumulate_fq(x)
        if lq.out_qp is None:
            if relu:
                acc = np.maximum(acc, 0)
            x = acc * lq.acc_scale  # float logits on the accumulator grid
        else:
            codes = np.clip(rescale(acc, lq.requant, lq.acc_bits) + lq.out_qp.zero_point,
                            lq.out_qp.code_min, lq.out_qp.code_max)
            if relu:
                codes = np.maximum(codes, lq.out_qp.zero_point)
            x = codes if mode == "int" else dequantize(codes, lq.out_qp)
    return x


def classify(pooled, mlp: MlpParams, mode: str = "real") -> np.ndarray:
    """Pooled stream feature -> class probabilities (sum to 1)."""
    return softmax(np.asarray(mlp_forward(pooled, mlp, mode), dtype=np.float64))


@dataclass
class GruGateQuant:
    """One gate's integer pipeline: both matrix products land in a shared
    8-bit pre-activation domain, then a LUT applies the nonlinearity."""

    w: LinearQuant  # input side, zero bias
    u: LinearQuant  # recurrent side, carries the gate bias
    pre_qp: QuantParams
    rq_w: RequantParams
    rq_u: RequantParams
    lut: np.ndarray


@dataclass
class GruQuant:
    x_qp: QuantParams
    gates: dict[str, GruGateQuant]
    rq_had: RequantParams  # fixed 1/255 rescale for gate Hadamard products
    h_qp: QuantParams = field(default_factory=lambda: TANH_OUT)


@dataclass
class GruParams:
    """Gate-major GRU weights; hidden state starts at zero and stays in
    (-1, 1) in real mode."""

    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    u_h: np.ndarray
    b_h: np.ndarray
    quant: GruQuant | None = None

    @property
    def hidden(self) -> int:
        return self.b_z.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_z.shape[1]

    def wub(self, gate: str):
        return getattr(self, f"w_{gate}"), getattr(self, f"u_{gate}"), getattr(self, f"b_{gate}")


def _recurrent_real(params: GruParams, h: np.ndarray) -> dict[str, np.ndarray]:
    return {g: params.wub(g)[1] @ h + params.wub(g)[2] for g in GATES}


def _recurrent_acc(params: GruParams, h_codes: np.ndarray, mode: str) -> dict[str, np.ndarray]:
    """Raw U @ h + b accumulators per gate (the precomputable half)."""
    out = {}
    for g in GATES:
        gq = params.quant.gates[g]
        if mode == "int":
            out[g] = gq.u.accumulate_int(h_codes)
        else:
            out[g] = gq.u.accumulate_fq(dequantize(h_codes, params.quant.h_qp))
    return out


def _gate_pre(gq: GruGateQuant, acc_w: np.ndarray, acc_u: np.ndarray) -> np.ndarray:
    pre = rescale(acc_w, gq.rq_w) + rescale(acc_u, gq.rq_u) + gq.pre_qp.zero_point
    return np.clip(pre, gq.pre_qp.code_min, gq.pre_qp.code_max)


def _gru_step_codes(x, h_codes: np.ndarray, params: GruParams, mode: str,
                    rec_acc: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Shared integer tail of the int and fq paths; x is codes ("int") or
    their exact dequantized floats ("fq")."""
    q = params.quant
    if q is None:
        raise ValueError("GRU has no quantization record; run calibration first")
    if rec_acc is None:
        rec_acc = _recurrent_acc(params, h_codes, mode)

    def acc_w(gate: str, inp):
        gq = q.gates[gate]
        return gq.w.accumulate_int(inp) if mode == "int" else gq.w.accumulate_fq(inp)

    one = SIGMOID_OUT.code_max  # sigmoid code of 1.0
    zp_h = q.h_qp.zero_point
    z = lut_lookup(_gate_pre(q.gates["z"], acc_w("z", x), rec_acc["z"]), q.gates["z"].lut,
                   q.gates["z"].pre_qp)
    r = lut_lookup(_gate_pre(q.gates["r"], acc_w("r", x), rec_acc["r"]), q.gates["r"].lut,
                   q.gates["r"].pre_qp)
    # r (*) h in the hidden domain: codes scale by 1/255 exactly
    rh = np.clip(rescale(r * (h_codes - zp_h), q.rq_had) + zp_h,
                 q.h_qp.code_min, q.h_qp.code_max)
    # the candidate's recurrent product runs on r (*) h, so it cannot be
    # precomputed; rebuild it from the gated hidden state
    if mode == "int":
        acc_u_h = q.gates["h"].u.accumulate_int(rh)
    else:
        acc_u_h = q.gates["h"].u.accumulate_fq(dequantize(rh, q.h_qp))
    h_cand = lut_lookup(_gate_pre(q.gates["h"], acc_w("h", x), acc_u_h), q.gates["h"].lut,
                        q.gates["h"].pre_qp)
    upd = (one - z) * (h_codes - zp_h) + z * (h_cand - zp_h)
    return np.clip(rescale(upd, q.rq_had) + zp_h, q.h_qp.code_min, q.h_qp.code_max)


def gru_step(x, h_prev, params: GruParams, mode: str = "real"):
    """One GRU update; x and h_prev are floats in real/fq mode, codes in
    int mode.  Matches the windowed head's two-phase schedule bit for bit."""
    if mode == "real":
        rec = _recurrent_real(params, h_prev)
        z = sigmoid(params.w_z @ x + rec["z"])
        r = sigmoid(params.w_r @ x + rec["r"])
        h_cand = np.tanh(params.w_h @ x + params.u_h @ (r * h_prev) + params.b_h)
        return (1.0 - z) * h_prev + z * h_cand
    if mode == "int":
        return _gru_step_codes(x, h_prev, params, mode)
    if mode == "fq":
        h_codes = _gru_step_codes(x, _to_h_codes(h_prev, params.quant), params, mode)
        return dequantize(h_codes, params.quant.h_qp)
    raise ValueError(f"unknown mode {mode!r}")


def _to_h_codes(h_float, q: GruQuant) -> np.ndarray:
    codes = np.rint(np.asarray(h_float, dtype=np.float64) / q.h_qp.scale).astype(np.int64) \
        + q.h_qp.zero_point
    return np.clip(codes, q.h_qp.code_min, q.h_qp.code_max)


@dataclass
class KwsParams:
    stem: MlpParams  # ReLU after every layer
    gru: GruParams
    cls: LinearParams  # num_classes x hidden, no output quantizer (logits)
    conf: LinearParams  # 1 x hidden; sigmoid via LUT in int mode
    conf_pre_qp: QuantParams | None = None
    conf_rq: RequantParams | None = None
    conf_lut: np.ndarray | None = None


@dataclass
class KwsState:
    """Recurrent state between windows: the hidden vector plus the
    precomputed recurrent accumulators for the next window."""

    h: np.ndarray
    rec: dict[str, np.ndarray]
    mode: str


@dataclass
class KwsOutput:
    window: int
    class_probs: np.ndarray
    confidence: float


def kws_init_state(params: KwsParams, mode: str = "real") -> KwsState:
    hidden = params.gru.hidden
    if mode == "real":
        h = np.zeros(hidden)
        return KwsState(h, _recurrent_real(params.gru, h), mode)
    q = params.gru.quant
    if q is None:
        raise ValueError("head has no quantization record; run calibration first")
    h_codes = np.full(hidden, q.h_qp.zero_point, dtype=np.int64)
    rec = _recurrent_acc(params.gru, h_codes, "int" if mode == "int" else "fq")
    h = h_codes if mode == "int" else dequantize(h_codes, q.h_qp)
    return KwsState(h, rec, mode)


def kws_step(window: WindowFeature, state: KwsState, params: KwsParams,
             mode: str = "real") -> tuple[KwsOutput, KwsState]:
    """One pooled window through stem, GRU, and both output projections."""
    if mode != state.mode:
        raise ValueError(f"state was initialized for mode {state.mode!r}")
    x = mlp_forward(window.feat, params.stem, mode)
    if mode == "real":
        z = sigmoid(params.gru.w_z @ x + state.rec["z"])
        r = sigmoid(params.gru.w_r @ x + state.rec["r"])
        h_cand = np.tanh(params.gru.w_h @ x + params.gru.u_h @ (r * state.h) + params.gru.b_h)
        h = (1.0 - z) * state.h + z * h_cand
        logits = params.cls.weight @ h + params.cls.bias
        conf = float(sigmoid(params.conf.weight @ h + params.conf.bias)[0])
        new_state = KwsState(h, _recurrent_real(params.gru, h), mode)
        return KwsOutput(window.index, softmax(logits), conf), new_state

    q = params.gru.quant
    h_codes = state.h if mode == "int" else _to_h_codes(state.h, q)
    h_codes = _gru_step_codes(x, h_codes, params.gru, mode, rec_acc=state.rec)
    h_for_linear = h_codes if mode == "int" else dequantize(h_codes, q.h_qp)
    lq_cls, lq_conf = params.cls.quant, params.conf.quant
    acc_cls = lq_cls.accumulate_int(h_codes) if mode == "int" \
        else lq_cls.accumulate_fq(h_for_linear)
    logits = acc_cls * lq_cls.acc_scale
    acc_conf = lq_conf.accumulate_int(h_codes) if mode == "int" \
        else lq_conf.accumulate_fq(h_for_linear)
    pre = np.clip(rescale(acc_conf, params.conf_rq) + params.conf_pre_qp.zero_point,
                  params.conf_pre_qp.code_min, params.conf_pre_qp.code_max)
    conf_code = lut_lookup(pre, params.conf_lut, params.conf_pre_qp)
    conf = float(dequantize(conf_code, SIGMOID_OUT)[0])
    rec = _recurrent_acc(params.gru, h_codes, "int" if mode == "int" else "fq")
    h_out = h_codes if mode == "int" else dequantize(h_codes, q.h_qp)
    return KwsOutput(window.index, softmax(logits), conf), KwsState(h_out, rec, mode)


def kws_head_products(in_dim: int, stem_dims: tuple[int, int], hidden: int,
                      num_classes: int) -> list[tuple[int, int]]:
    """The six matrix products of one head invocation as (rows, cols), in
    schedule order: recurrent precompute, stem 1, stem 2, input-side gate
    stack, class projection, confidence projection."""
    s1, s2 = stem_dims
    return [
        (3 * hidden, hidden),  # U @ h for z, r, h stacked (next-window precompute)
        (s1, in_dim),
        (s2, s1),
        (3 * hidden, s2),  # W @ x for z, r, h stacked
        (num_classes, hidden),
        (1, hidden),
    ]


def head_cycles(products, lanes: int = 2, per_state_overhead: int = 16) -> int:
    """Cycle count of the head's state machine: each lane retires one
    output row's dot product per cycle, plus a fixed per-state overhead
    (load/drain and the elementwise gate arithmetic)."""
    if lanes < 1:
        raise ValueError(f"lanes must be >= 1, got {lanes}")
    total = 0
    for rows, _cols in products:
        total += math.ceil(rows / lanes) + per_state_overhead
    return total
