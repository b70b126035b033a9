import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgraph.events import Event
from evgraph.graph import GraphGenConfig
from evgraph.perf import (
    CONV_LANES_DEFAULT,
    DEFAULT_CLOCK_HZ,
    PRESETS,
    PipelineSpec,
    Stage,
    avg_flops_per_event,
    classifier_param_count,
    classifier_pipeline,
    conv_param_count,
    conv_stage_ii,
    kws_param_count,
    kws_pipeline,
    latency_report,
    memory_footprint_bytes,
    throughput_eps,
)


@pytest.fixture
def cfg():
    return GraphGenConfig(num_channels=700, r_ch=100, skip=10, r_t_us=100_000)


def within(value, target, frac):
    return abs(value - target) <= frac * target


def test_conv_stage_ii_lanes():
    assert conv_stage_ii(64, 21, lanes=4) == 352
    assert conv_stage_ii(64, 21, lanes=2) == 704
    assert conv_stage_ii(64, 21, lanes=1) == 1408
    with pytest.raises(ValueError):
        conv_stage_ii(64, 21, lanes=0)


def test_throughput_base_anchor(cfg):
    pipe = classifier_pipeline(cfg, PRESETS["base"]["convs"])
    tput = throughput_eps(pipe)
    assert tput == pytest.approx(200e6 / 352)
    assert within(tput, 555_000, 0.05)


def test_throughput_two_lane_anchor(cfg):
    pipe = classifier_pipeline(cfg, PRESETS["base"]["convs"], conv_lanes=2)
    tput = throughput_eps(pipe)
    assert tput == pytest.approx(200e6 / 704)
    assert within(tput, 277_000, 0.05)


def test_throughput_overhead_hook(cfg):
    pipe = classifier_pipeline(cfg, PRESETS["base"]["convs"])
    assert throughput_eps(pipe, overhead_cycles=8) == pytest.approx(200e6 / 360)


def test_throughput_trivial_single_stage():
    pipe = PipelineSpec(clock_hz=1.0, stages=[Stage("only", 1)])
    assert throughput_eps(pipe) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=1, max_size=6),
       st.integers(0, 5), st.integers(1, 400))
def test_throughput_monotone_in_stage_cycles(cycles, idx, bump):
    stages = [Stage(f"s{i}", c) for i, c in enumerate(cycles)]
    pipe = PipelineSpec(clock_hz=1e6, stages=stages)
    base = throughput_eps(pipe)
    j = idx % len(cycles)
    bumped = [Stage(f"s{i}", c + (bump if i == j else 0))
              for i, c in enumerate(cycles)]
    assert throughput_eps(PipelineSpec(clock_hz=1e6, stages=bumped)) <= base


def test_latency_base_fe_anchor(cfg):
    rep = latency_report(classifier_pipeline(cfg, PRESETS["base"]["convs"]))
    assert within(rep["fe_us"], 8.07, 0.15)
    assert rep["bottleneck"].startswith("conv")
    assert rep["head_us"] == 0.0
    assert rep["total_us"] == rep["fe_us"]


def test_latency_tiny_fe_anchor(cfg):
    rep = latency_report(classifier_pipeline(cfg, PRESETS["tiny"]["convs"]))
    assert within(rep["fe_us"], 4.01, 0.15)


def test_latency_kws_anchors(cfg):
    k = PRESETS["kws"]
    rep = latency_report(kws_pipeline(cfg, k["convs"], k["stem"], k["hidden"], 20))
    assert within(rep["fe_us"], 8.48, 0.15)
    assert within(rep["head_us"], 2.05, 0.15)
    assert within(rep["total_us"], 10.53, 0.15)


def test_latency_trivial():
    pipe = PipelineSpec(clock_hz=100e6, stages=[Stage("s", 100)])
    assert latency_report(pipe)["total_us"] == pytest.approx(1.0)


def test_latency_stage_rows_sum(cfg):
    rep = latency_report(classifier_pipeline(cfg, (8, 16, 32, 64)))
    total = sum(s["latency_us"] for s in rep["stages"])
    assert rep["total_us"] == pytest.approx(total)


TABLE3 = {
    "tiny": 8_600,
    "small": 12_900,
    "base": 18_900,
    "big": 70_500,
    "large": 272_000,
}


@pytest.mark.parametrize("name,target", sorted(TABLE3.items()))
def test_param_counts_match_published(name, target):
    spec = PRESETS[name]
    count = classifier_param_count(spec["convs"], spec["fc"], num_classes=20)
    assert within(count, target, 0.03), (name, count, target)


def test_param_count_exact_values():
    assert classifier_param_count(PRESETS["tiny"]["convs"], 64, 20) == 8_764
    assert classifier_param_count(PRESETS["base"]["convs"], 64, 20) == 19_156
    assert classifier_param_count(PRESETS["large"]["convs"], 256, 20) == 273_172


def test_param_count_degenerate_hand_sum():
    # conv1 (2+2)*1+1+2 = 7; convs 2-4 (1+2)*1+1+2 = 6 each;
    # fc 1*1+1 = 2; classifier 1*1+1 = 2
    assert classifier_param_count((1, 1, 1, 1), 1, 1) == 7 + 18 + 2 + 2


def test_param_count_additive():
    convs = (4, 6)
    conv_only = conv_param_count(convs)
    full = classifier_param_count(convs, 5, 3)
    assert full == conv_only + (6 * 5 + 5) + (5 * 3 + 3)


def test_kws_param_count_anchor():
    k = PRESETS["kws"]
    count = kws_param_count(k["convs"], k["stem"], k["hidden"], num_classes=20)
    assert count == 60_501
    assert within(count, 60_340, 0.03)


def test_kws_param_count_degenerate():
    # convs: (2+2)*2+2+4, (2+2)*2+2+4; stem: 2*3+3, 3*3+3;
    # gru: 3*(4*3 + 4*4 + 4); cls: 4*5+5; conf: 4+1
    count = kws_param_count((2, 2), (3, 3), 4, 5)
    assert count == (14 + 14) + (9 + 12) + 3 * (12 + 16 + 4) + 25 + 5


def test_memory_footprint(cfg):
    params = 1_000
    got = memory_footprint_bytes(cfg, (8, 16), params)
    want = 4 * 700 + 700 * 2 + 700 * 8 + params
    assert got == want


def test_avg_flops_per_event():
    cfg = GraphGenConfig(num_channels=8, r_ch=2, skip=1, r_t_us=1_000)
    dims = (4,)
    # single event: no edges -> (2+2)*4*2 = 32 MACs+adds
    assert avg_flops_per_event([Event(0, 3)], cfg, dims) == 32.0
    # second event on the same channel gains one edge -> 64; mean = 48
    assert avg_flops_per_event([Event(0, 3), Event(10, 3)], cfg, dims) == 48.0
    assert avg_flops_per_event([], cfg, dims) == 0.0
