import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgraph.quant import (
    ACC_BITS,
    AccumulatorOverflow,
    BatchNormParams,
    Calibration,
    LinearQuant,
    QuantParams,
    RequantParams,
    check_acc_range,
    dequantize,
    fold_batchnorm,
    lut_lookup,
    make_lut,
    quantize,
    requant_from_factor,
    requantize,
    rescale,
    round_half_away,
    rounding_right_shift,
    sigmoid,
    snap_to_acc_grid,
    weight_params,
)


def test_round_half_away():
    x = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 0.4, -0.4])
    assert round_half_away(x).tolist() == [-3, -2, -1, 1, 2, 3, 0, 0]


def test_quantize_example():
    qp = QuantParams(scale=0.5, zero_point=128, bits=8)
    assert quantize(np.array([1.0]), qp).tolist() == [130]
    assert dequantize(np.array([130]), qp).tolist() == [1.0]
    # clipping at code range
    assert quantize(np.array([1000.0]), qp).tolist() == [255]
    assert quantize(np.array([-1000.0]), qp).tolist() == [0]


def test_signed_symmetric_range():
    qp = QuantParams(scale=0.1, zero_point=0, bits=8, signed=True)
    assert (qp.code_min, qp.code_max) == (-127, 127)
    assert quantize(np.array([-100.0]), qp).tolist() == [-127]


def test_requant_from_factor_exact_power_of_two():
    rq = requant_from_factor(1.0)
    assert rq.multiplier == 2**30 and rq.shift == 30
    assert rq.real_factor == 1.0
    rq2 = requant_from_factor(0.5)
    assert rq2.real_factor == 0.5


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e3, allow_nan=False))
def test_requant_factor_precision(factor):
    rq = requant_from_factor(factor)
    assert abs(rq.real_factor - factor) / factor < 2.0**-15
    assert 2**30 <= rq.multiplier < 2**31


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**22), 2**22), st.floats(min_value=1e-4, max_value=64.0))
def test_rescale_matches_real_arithmetic(acc, factor):
    rq = requant_from_factor(factor)
    got = int(rescale(np.array([acc], dtype=np.int64), rq)[0])
    want = round_half_away(np.array([acc * rq.real_factor]))[0]
    assert abs(got - want) <= 1  # one LSB of double-rounding slack


def test_rounding_right_shift_half_away():
    v = np.array([5, -5, 6, -6, 7], dtype=np.int64)
    # shift 2: 5/4=1.25 -> 1, 6/4=1.5 -> 2 (away), 7/4=1.75 -> 2
    assert rounding_right_shift(v, 2).tolist() == [1, -1, 2, -2, 2]
    assert rounding_right_shift(np.array([3], dtype=np.int64), 0).tolist() == [3]
    assert rounding_right_shift(np.array([3], dtype=np.int64), -1).tolist() == [6]


def test_requantize_example():
    rq = requant_from_factor(0.0117)
    out_qp = QuantParams(scale=1.0, zero_point=0, bits=8)
    got = requantize(np.array([100], dtype=np.int64), rq, out_qp)
    assert got.tolist() == [1]  # 100*0.0117 = 1.17 -> 1


def test_check_acc_range():
    ok = np.array([2**31 - 1, -(2**31 - 1)], dtype=np.int64)
    check_acc_range(ok)
    with pytest.raises(AccumulatorOverflow):
        check_acc_range(np.array([2**31], dtype=np.int64))
    assert ACC_BITS == 32


def test_calibration_params():
    cal = Calibration()
    cal.observe(np.array([0.25, 2.0]))
    cal.observe(np.array([-1.0, 0.5]))
    qp = cal.activation_params(bits=8)
    # range widened to include 0.0
    assert dequantize(np.array([qp.zero_point]), qp)[0] == pytest.approx(0.0)
    lo, hi = dequantize(np.array([0, 255]), qp)
    assert lo <= -1.0 + 1e-9 and hi >= 2.0 - 1e-9


def test_calibration_anchor_widening():
    cal = Calibration()
    cal.observe(np.array([0.2, 0.3]))
    qp = cal.activation_params(bits=8, include=(0.0, 1.0))
    lo, hi = dequantize(np.array([0, 255]), qp)
    assert lo <= 0.0 and hi >= 1.0 - 1e-9


def test_weight_params_symmetric():
    qp = weight_params(np.array([-3.0, 2.0]), bits=8)
    assert qp.zero_point == 0 and qp.signed
    assert qp.scale == pytest.approx(3.0 / 127)


def test_make_lut_bounds_and_monotone():
    in_qp = QuantParams(scale=8.0 / 255, zero_point=128, bits=8)
    out_qp = QuantParams(scale=1 / 255, zero_point=0, bits=8)
    lut = make_lut(sigmoid, in_qp, out_qp)
    assert lut.shape == (256,) and lut.dtype == np.int64
    assert lut.min() >= 0 and lut.max() <= 255
    assert (np.diff(lut) >= 0).all()
    # codes near zero-point map near sigmoid(0)=0.5
    mid = lut_lookup(np.array([128]), lut, in_qp)
    assert abs(int(mid[0]) - 128) <= 1


def test_fold_batchnorm_matches_composition():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(6, 4))
    b = rng.normal(size=6)
    bn = BatchNormParams(gamma=rng.uniform(0.5, 2, 6), beta=rng.normal(size=6),
                         mean=rng.normal(size=6), var=rng.uniform(0.1, 2, 6))
    wf, bf = fold_batchnorm(w, b, bn)
    x = rng.normal(size=4)
    y_ref = (w @ x + b - bn.mean) / np.sqrt(bn.var + bn.eps) * bn.gamma + bn.beta
    assert wf @ x + bf == pytest.approx(y_ref)


def test_linear_quant_build_and_paths():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=5)
    in_qp = QuantParams(scale=2.0 / 255, zero_point=10, bits=8)
    lq = LinearQuant.build(w, b, in_qp, None)
    x_real = rng.uniform(0, 1.5, size=3)
    codes = quantize(x_real, in_qp)
    x_deq = dequantize(codes, in_qp)
    acc_int = lq.accumulate_int(codes)
    acc_fq = lq.accumulate_fq(x_deq)
    # both paths land on the same integer accumulator grid point
    assert np.array_equal(acc_int, acc_fq)
    # dequantized accumulator approximates the float product on codes
    y_real = lq.deq_weight @ x_deq + lq.deq_bias
    assert acc_int * lq.acc_scale == pytest.approx(y_real, abs=1e-9)


def test_snap_to_acc_grid():
    # returns the integer accumulator codes nearest to real_acc / acc_scale
    s = 0.125
    vals = np.array([0.3, -0.26])
    codes = snap_to_acc_grid(vals, s)
    assert codes.dtype == np.int64
    assert codes * s == pytest.approx(vals, abs=s / 2)
    # exact multiples recover exactly
    assert snap_to_acc_grid(np.array([7 * s]), s).tolist() == [7]
