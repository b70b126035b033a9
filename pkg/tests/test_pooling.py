import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgraph.pooling import AvgAccumulator, WindowMaxPooler
from evgraph.quant import QuantParams, dequantize, quantize


def test_avg_accumulator_real():
    acc = AvgAccumulator(2)
    acc.add(np.array([1.0, 2.0]))
    acc.add(np.array([3.0, 6.0]))
    assert acc.finalize().tolist() == [2.0, 4.0]


def test_avg_accumulator_empty_is_zero():
    assert AvgAccumulator(3).finalize().tolist() == [0.0, 0.0, 0.0]
    qp = QuantParams(scale=0.1, zero_point=7, bits=8)
    acc = AvgAccumulator(2, "int", qp)
    assert acc.finalize().tolist() == [7, 7]  # zero point = real 0


def test_avg_accumulator_int_rounding():
    qp = QuantParams(scale=0.1, zero_point=0, bits=8)
    acc = AvgAccumulator(1, "int", qp)
    for v in (1, 2, 2):  # mean 5/3 -> 1.67 -> 2
        acc.add(np.array([v]))
    assert acc.finalize().tolist() == [2]
    acc2 = AvgAccumulator(1, "int", qp)
    for v in (1, 2):  # mean 1.5 -> away from zero -> 2
        acc2.add(np.array([v]))
    assert acc2.finalize().tolist() == [2]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=40))
def test_avg_accumulator_int_fq_agree(codes):
    qp = QuantParams(scale=1 / 255, zero_point=3, bits=8)
    ai = AvgAccumulator(1, "int", qp)
    af = AvgAccumulator(1, "fq", qp)
    for c in codes:
        ai.add(np.array([c]))
        af.add(dequantize(np.array([c]), qp))
    vi = ai.finalize()
    vf = af.finalize()
    assert np.array_equal(quantize(vf, qp), vi)


def test_window_cadence_and_values():
    pool = WindowMaxPooler(1, delta_t_us=100, duration_us=1_000)
    assert pool.num_windows == 10
    emitted = []
    emitted += pool.push(50, np.array([1.0]))
    emitted += pool.push(60, np.array([5.0]))
    emitted += pool.push(250, np.array([2.0]))  # closes windows 0, 1
    emitted += pool.push(990, np.array([3.0]))
    emitted += pool.finish()
    assert [w.index for w in emitted] == list(range(10))
    vals = [w.feat[0] for w in emitted]
    assert vals[0] == 5.0   # max of first window
    assert vals[1] == 0.0   # empty window -> zeros
    assert vals[2] == 2.0
    assert vals[9] == 3.0


def test_window_boundary_belongs_to_next_window():
    pool = WindowMaxPooler(1, delta_t_us=100, duration_us=300)
    out = pool.push(100, np.array([4.0]))  # t = exactly one delta
    assert [w.index for w in out] == [0]
    rest = pool.finish()
    assert [w.index for w in rest] == [1, 2]
    assert rest[0].feat[0] == 4.0


def test_time_equal_to_duration_lands_in_last_window():
    pool = WindowMaxPooler(1, delta_t_us=100, duration_us=300)
    pool.push(300, np.array([9.0]))
    out = pool.finish()
    assert out[-1].feat[0] == 9.0


def test_pooler_rejects_time_regression():
    pool = WindowMaxPooler(1, delta_t_us=100, duration_us=1_000)
    pool.push(250, np.array([1.0]))
    with pytest.raises(ValueError):
        pool.push(100, np.array([1.0]))


def test_pooler_int_empty_windows_at_zero_point():
    qp = QuantParams(scale=0.5, zero_point=11, bits=8)
    pool = WindowMaxPooler(2, delta_t_us=100, duration_us=500, mode="int", qp=qp)
    outs = pool.finish()
    assert len(outs) == 5
    assert all(w.feat.tolist() == [11, 11] for w in outs)


def test_exactly_one_output_per_window_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        dur = int(rng.integers(1, 5_000))
        delta = int(rng.integers(1, 800))
        pool = WindowMaxPooler(1, delta_t_us=delta, duration_us=dur)
        n = int(rng.integers(0, 50))
        ts = np.sort(rng.integers(0, dur + 1, n))
        outs = []
        for t in ts:
            outs += pool.push(int(t), rng.uniform(size=1))
        outs += pool.finish()
        assert [w.index for w in outs] == list(range(pool.num_windows))
        assert pool.num_windows == max(1, -(-dur // delta))
