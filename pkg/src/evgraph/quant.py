"""Integer-only quantization primitives.

Scheme: affine uint8 activations (zero point anywhere in the code
range), symmetric int8 weights (zero point pinned to 0), int32
accumulators, and rescaling by a fixed-point integer multiplier plus a
rounded right shift instead of any float multiply.  The fake-quant path
reuses the exact same requantize/LUT integer helpers on accumulators
recovered from float math, which is what makes it bit-equivalent to the
pure integer path.

Rounding is half away from zero everywhere (quantize and right shift),
so both paths agree on .5 cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACC_BITS = 32  # accumulator width; exceeding it is a checked error


class AccumulatorOverflow(OverflowError):
    pass


@dataclass(frozen=True)
class QuantParams:
    """Affine code mapping: real = scale * (code - zero_point)."""

    scale: float
    zero_point: int = 0
    bits: int = 8
    signed: bool = False

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not (self.code_min <= self.zero_point <= self.code_max):
            raise ValueError(f"zero_point {self.zero_point} outside code range")

    @property
    def code_min(self) -> int:
        # symmetric signed range: -127..127 at 8 bits, the extra code unused
        return -(2 ** (self.bits - 1) - 1) if self.signed else 0

    @property
    def code_max(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2**self.bits - 1


def round_half_away(x):
    """Round to nearest integer, halves away from zero (int64 result)."""
    return np.where(np.asarray(x) >= 0, np.floor(np.asarray(x, dtype=np.float64) + 0.5),
                    np.ceil(np.asarray(x, dtype=np.float64) - 0.5)).astype(np.int64)


def quantize(x, qp: QuantParams) -> np.ndarray:
    """Real values -> saturated codes (int64 holding the small code range)."""
    codes = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(codes, qp.code_min, qp.code_max)


def dequantize(codes, qp: QuantParams) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) - qp.zero_point) * qp.scale


@dataclass(frozen=True)
class RequantParams:
    """Fixed-point rescale: y = (x * multiplier) >> shift, rounded.

    multiplier is a Q31 mantissa in [2^30, 2^31); shift can be any
    integer (non-positive means a left shift).
    """

    multiplier: int
    shift: int

    @property
    def real_factor(self) -> float:
        return self.multiplier * 2.0 ** (-self.shift)


def requant_from_factor(factor: float) -> RequantParams:
    """Encode a positive real rescale factor as multiplier/shift.

    The encoding reproduces the factor to within 2^-31 relative, far
    inside the 2^-15 budget the integer pipeline assumes.
    """
    if not (factor > 0 and math.isfinite(factor)):
        raise ValueError(f"rescale factor must be positive and finite, got {factor}")
    mantissa, exp = math.frexp(factor)  # factor = mantissa * 2^exp, mantissa in [0.5, 1)
    q = round(mantissa * (1 << 31))
    if q == 1 << 31:
        q >>= 1
        exp += 1
    return RequantParams(multiplier=q, shift=31 - exp)


def rounding_right_shift(v, shift: int) -> np.ndarray:
    """Arithmetic right shift rounding half away from zero."""
    v = np.asarray(v, dtype=np.int64)
    if shift <= 0:
        return v << (-shift)
    half = np.int64(1) << (shift - 1)
    mag = (np.abs(v) + half) >> shift
    return np.where(v >= 0, mag, -mag)


def check_acc_range(acc, acc_bits: int = ACC_BITS) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.int64)
    if acc.size and acc_bits < 64 and int(np.max(np.abs(acc))) >= 1 << (acc_bits - 1):
        raise AccumulatorOverflow(f"accumulator exceeds {acc_bits}-bit range")
    return acc


def rescale(acc, rq: RequantParams, acc_bits: int = ACC_BITS) -> np.ndarray:
    """Apply the fixed-point multiplier to wide accumulators (no zero
    point, no saturation); building block for multi-term requantization."""
    acc = check_acc_range(acc, acc_bits)
    if acc_bits <= 32:
        return rounding_right_shift(acc * rq.multiplier, rq.shift)
    # acc * multiplier can pass 2^63 for wide accumulators: exact path
    # through Python integers, same half-away rounding
    shift = rq.shift
    out = np.empty(acc.shape, dtype=np.int64)
    flat_in, flat_out = acc.ravel(), out.ravel()
    for i, v in enumerate(flat_in):
        p = int(v) * rq.multiplier
        if shift <= 0:
            flat_out[i] = p << -shift
        else:
            mag = (abs(p) + (1 << (shift - 1))) >> shift
            flat_out[i] = mag if p >= 0 else -mag
    return out


def requantize(acc, rq: RequantParams, out_qp: QuantParams,
               acc_bits: int = ACC_BITS) -> np.ndarray:
    """Wide accumulators -> output codes: scale, add zero point, saturate."""
    return np.clip(rescale(acc, rq, acc_bits) + out_qp.zero_point,
                   out_qp.code_min, out_qp.code_max)


def snap_to_acc_grid(real_acc, acc_scale: float, acc_bits: int = ACC_BITS) -> np.ndarray:
    """Recover integer accumulators from float math in the fake-quant path.

    real_acc is a float dot product of dequantized codes, hence an exact
    multiple of acc_scale up to float64 rounding; dividing and rounding
    recovers the integer the pure-integer path computes.
    """
    return check_acc_range(round_half_away(np.asarray(real_acc, dtype=np.float64) / acc_scale),
                           acc_bits)


@dataclass
class Calibration:
    """Running min/max observer for one tensor."""

    lo: float = math.inf
    hi: float = -math.inf

    def observe(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.size:
            self.lo = min(self.lo, float(x.min()))
            self.hi = max(self.hi, float(x.max()))

    def activation_params(self, bits: int = 8, include: tuple[float, ...] = (0.0,)) -> QuantParams:
        """Affine unsigned params covering the observed range.

        The range is widened to `include` the given anchors (zero by
        default so the zero point is exact); a degenerate range gets a
        1e-8 scale floor instead of a divide by zero.
        """
        lo, hi = self.lo, self.hi
        if lo > hi:  # nothing observed
            lo = hi = 0.0
        lo = min(lo, *include)
        hi = max(hi, *include)
        span = hi - lo
        scale = max(span / (2**bits - 1), 1e-8)
        zp = int(round_half_away(-lo / scale))
        zp = int(np.clip(zp, 0, 2**bits - 1))
        return QuantParams(scale=scale, zero_point=zp, bits=bits)


def weight_params(w, bits: int = 8) -> QuantParams:
    """Symmetric per-tensor weight quantizer (zero point 0)."""
    m = float(np.max(np.abs(w))) if np.asarray(w).size else 0.0
    scale = max(m / (2 ** (bits - 1) - 1), 1e-8)
    return QuantParams(scale=scale, zero_point=0, bits=bits, signed=True)


def make_lut(fn, in_qp: QuantParams, out_qp: QuantParams) -> np.ndarray:
    """256-entry code->code table for a scalar nonlinearity.

    Entry c holds fn evaluated at the real midpoint that code c
    represents, quantized to the nearest output code.
    """
    codes = np.arange(in_qp.code_min, in_qp.code_max + 1, dtype=np.int64)
    return quantize(fn(dequantize(codes, in_qp)), out_qp)


def lut_lookup(codes, lut: np.ndarray, in_qp: QuantParams) -> np.ndarray:
    return lut[np.asarray(codes, dtype=np.int64) - in_qp.code_min]


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5


def fold_batchnorm(weight: np.ndarray, bias: np.ndarray, bn: BatchNormParams):
    """Fold y = gamma*(Wx+b-mean)/sqrt(var+eps)+beta into W', b'."""
    inv = bn.gamma / np.sqrt(bn.var + bn.eps)
    return weight * inv[:, None], (bias - bn.mean) * inv + bn.beta


@dataclass
class LinearQuant:
    """Quantized affine layer: codes in, int32 accumulator out.

    acc = W_q @ (x_codes - in_zp) + b_q lives on the in_scale * w_scale
    grid.  When `out_qp`/`requant` are set the accumulator is folded
    back to output codes; a final layer can leave them None and hand the
    raw accumulator to the caller (logits, for instance).
    """

    in_qp: QuantParams
    w_qp: QuantParams
    w_codes: np.ndarray
    b_codes: np.ndarray
    out_qp: QuantParams | None = None
    requant: RequantParams | None = None
    acc_bits: int = ACC_BITS

    @classmethod
    def build(cls, weight, bias, in_qp: QuantParams, out_qp: QuantParams | None,
              bits: int = 8) -> "LinearQuant":
        w_qp = weight_params(weight, bits)
        w_codes = quantize(weight, w_qp)
        acc_scale = in_qp.scale * w_qp.scale
        # 32-bit accumulators hold any 8-bit MAC; wider codes need 64
        acc_bits = ACC_BITS if max(bits, in_qp.bits) <= 8 else 64
        b_codes = check_acc_range(round_half_away(np.asarray(bias, dtype=np.float64) / acc_scale),
                                  acc_bits)
        rq = requant_from_factor(acc_scale / out_qp.scale) if out_qp is not None else None
        return cls(in_qp, w_qp, w_codes, b_codes, out_qp, rq, acc_bits)

    @property
    def acc_scale(self) -> float:
        return self.in_qp.scale * self.w_qp.scale

    @property
    def deq_weight(self) -> np.ndarray:
        return dequantize(self.w_codes, self.w_qp)

    @property
    def deq_bias(self) -> np.ndarray:
        return np.asarray(self.b_codes, dtype=np.float64) * self.acc_scale

    def accumulate_int(self, x_codes) -> np.ndarray:
        """Integer MAC: x_codes shaped (..., in_dim) -> (..., out_dim)."""
        centered = np.asarray(x_codes, dtype=np.int64) - self.in_qp.zero_point
        return check_acc_range(centered @ self.w_codes.T.astype(np.int64) + self.b_codes,
                               self.acc_bits)

    def accumulate_fq(self, x_real) -> np.ndarray:
        """Float MAC on dequantized values, snapped back to the integer grid."""
        real = np.asarray(x_real, dtype=np.float64) @ self.deq_weight.T + self.deq_bias
        return snap_to_acc_grid(real, self.acc_scale, self.acc_bits)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# Fixed output domains for the bounded nonlinearities: sigmoid codes span
# [0, 1] exactly; tanh (and therefore the GRU hidden state) spans roughly
# [-1.004, 0.996] with an exact zero at code 128.
SIGMOID_OUT = QuantParams(scale=1.0 / 255.0, zero_point=0, bits=8)
TANH_OUT = QuantParams(scale=2.0 / 255.0, zero_point=128, bits=8)
