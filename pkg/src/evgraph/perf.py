"""Analytic performance model of the streaming accelerator.

Stages are modeled with two numbers: an initiation interval (cycles
between accepted events in steady state, straight from the stage's
compute formula) and a fixed extra latency (prefetch/drain registers
that pipeline away and never limit throughput).  Pipeline throughput is
the clock over the largest per-event initiation interval; end-to-end
latency sums full stage latencies.  The keyword head runs once per
pooling window, not per event, so it contributes latency but is never
the per-event bottleneck.

Extra-latency constants below are fixed design estimates of the
hand-off overheads, chosen once for the whole model family; they are
documented here rather than fitted per configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .conv import conv_cycles, flops_per_event
from .graph import GraphGenConfig, build_graph
from .heads import head_cycles, kws_head_products

#: extra latency of a conv stage: neighbor prefetch of up to max_edge + 1
#: message inputs at two per cycle, plus a two-register output hand-off.
def conv_extra_cycles(max_edge: int) -> int:
    return (max_edge + 1) // 2 + 2


#: extra latency of either pooling stage (accumulator read-modify-write).
POOL_EXTRA_CYCLES = 4

#: per-state overhead of the keyword head's state machine (operand load,
#: elementwise gate arithmetic, result drain).
HEAD_STATE_OVERHEAD = 16

#: MAC lanes of the reference conv engine; Eq.-style conv cycle counts
#: assume two MACs on two output features per cycle.
CONV_LANES_DEFAULT = 4

DEFAULT_CLOCK_HZ = 200_000_000

# Named feature-extractor configurations: conv widths plus the hidden
# width of the classification MLP.
PRESETS: dict[str, dict] = {
    "tiny": {"convs": (8, 16, 32, 64), "fc": 64},
    "small": {"convs": (16, 32, 64, 64), "fc": 64},
    "base": {"convs": (64, 64, 64, 64), "fc": 64},
    "big": {"convs": (128, 128, 128, 128), "fc": 128},
    "large": {"convs": (256, 256, 256, 256), "fc": 256},
    # keyword spotting: every width pinned to 72 to match the 36-bit BRAM word
    "kws": {"convs": (72, 72, 72, 72), "stem": (72, 72), "hidden": 72},
}


@dataclass(frozen=True)
class Stage:
    name: str
    ii_cycles: int  # initiation interval: cycles per accepted input
    extra_cycles: int = 0
    per_event: bool = True

    @property
    def latency_cycles(self) -> int:
        return self.ii_cycles + self.extra_cycles


@dataclass
class PipelineSpec:
    clock_hz: float = DEFAULT_CLOCK_HZ
    stages: list[Stage] = field(default_factory=list)

    def us(self, cycles: int) -> float:
        return cycles / self.clock_hz * 1e6


def conv_stage_ii(out_dim: int, max_edge: int, lanes: int = CONV_LANES_DEFAULT) -> int:
    """Initiation interval of one conv stage at a given MAC-lane count."""
    if lanes < 1:
        raise ValueError(f"lanes must be >= 1, got {lanes}")
    return math.ceil(conv_cycles(out_dim, max_edge) * CONV_LANES_DEFAULT / lanes)


def _extractor_stages(cfg: GraphGenConfig, conv_dims, lanes: int) -> list[Stage]:
    me = cfg.max_edge
    stages = [Stage("graph_gen", math.ceil(me / 2), cfg.n_div)]
    for i, out_dim in enumerate(conv_dims, start=1):
        stages.append(Stage(f"conv{i}", conv_stage_ii(out_dim, me, lanes), conv_extra_cycles(me)))
    return stages


def classifier_pipeline(cfg: GraphGenConfig, conv_dims, clock_hz: float = DEFAULT_CLOCK_HZ,
                        conv_lanes: int = CONV_LANES_DEFAULT) -> PipelineSpec:
    stages = _extractor_stages(cfg, conv_dims, conv_lanes)
    stages.append(Stage("avg_pool", math.ceil(conv_dims[-1] / 2), POOL_EXTRA_CYCLES))
    return PipelineSpec(clock_hz, stages)


def kws_pipeline(cfg: GraphGenConfig, conv_dims, stem_dims, hidden: int, num_classes: int,
                 clock_hz: float = DEFAULT_CLOCK_HZ, conv_lanes: int = CONV_LANES_DEFAULT,
                 head_lanes: int = 2,
                 head_state_overhead: int = HEAD_STATE_OVERHEAD) -> PipelineSpec:
    stages = _extractor_stages(cfg, conv_dims, conv_lanes)
    stages.append(Stage("window_pool", math.ceil(conv_dims[-1] / 2), POOL_EXTRA_CYCLES))
    products = kws_head_products(conv_dims[-1], tuple(stem_dims), hidden, num_classes)
    stages.append(Stage("kws_head", head_cycles(products, head_lanes, head_state_overhead),
                        0, per_event=False))
    return PipelineSpec(clock_hz, stages)


def throughput_eps(pipe: PipelineSpec, overhead_cycles: int = 0) -> float:
    """Steady-state events per second, limited by the slowest per-event
    stage.  overhead_cycles adds unmodeled hand-off cycles to the
    bottleneck; the true value on silicon is unknown, so it defaults to 0
    and the pure formula is reported."""
    bottleneck = max(s.ii_cycles for s in pipe.stages if s.per_event)
    return pipe.clock_hz / (bottleneck + overhead_cycles)


def latency_report(pipe: PipelineSpec) -> dict:
    """Per-stage and aggregate timing; all times in microseconds."""
    stages = []
    fe_cycles = head_cycles_total = 0
    bottleneck = None
    for s in pipe.stages:
        stages.append({
            "name": s.name,
            "ii_cycles": s.ii_cycles,
            "latency_cycles": s.latency_cycles,
            "latency_us": pipe.us(s.latency_cycles),
            "per_event": s.per_event,
        })
        if s.per_event:
            fe_cycles += s.latency_cycles
            if bottleneck is None or s.ii_cycles > bottleneck[1]:
                bottleneck = (s.name, s.ii_cycles)
        else:
            head_cycles_total += s.latency_cycles
    return {
        "clock_hz": pipe.clock_hz,
        "stages": stages,
        "bottleneck": bottleneck[0],
        "throughput_eps": throughput_eps(pipe),
        "fe_us": pipe.us(fe_cycles),
        "head_us": pipe.us(head_cycles_total),
        "total_us": pipe.us(fe_cycles + head_cycles_total),
    }


def conv_param_count(conv_dims, in_feat: int = 2, bn: bool = True) -> int:
    """Weights + bias (+ folded-away batch norm scale/shift) per conv layer."""
    total = 0
    d = in_feat
    for out in conv_dims:
        total += (d + 2) * out + out + (2 * out if bn else 0)
        d = out
    return total


def classifier_param_count(conv_dims, fc_hidden: int, num_classes: int,
                           in_feat: int = 2, bn: bool = True) -> int:
    total = conv_param_count(conv_dims, in_feat, bn)
    total += conv_dims[-1] * fc_hidden + fc_hidden
    total += fc_hidden * num_classes + num_classes
    return total


def kws_param_count(conv_dims, stem_dims, hidden: int, num_classes: int,
                    in_feat: int = 2, bn: bool = True) -> int:
    total = conv_param_count(conv_dims, in_feat, bn)
    d = conv_dims[-1]
    for out in stem_dims:
        total += d * out + out
        d = out
    total += 3 * (hidden * d + hidden * hidden + hidden)  # z, r, candidate
    total += hidden * num_classes + num_classes
    total += hidden + 1  # confidence projection
    return total


def memory_footprint_bytes(cfg: GraphGenConfig, conv_dims, param_count: int,
                           in_feat: int = 2, bytes_per_param: int = 1) -> int:
    """Rough on-chip estimate: context memory (u32 per channel), one
    feature store per conv layer at its input width, plus the weights."""
    total = 4 * cfg.num_channels
    d = in_feat
    for out in conv_dims:
        total += cfg.num_channels * d * bytes_per_param
        d = out
    return total + param_count * bytes_per_param


def avg_flops_per_event(events, cfg: GraphGenConfig, conv_dims, in_feat: int = 2) -> float:
    """Mean dense FLOPs per event over a stream, edge counts included."""
    dims = []
    d = in_feat
    for out in conv_dims:
        dims.append((d, out))
        d = out
    vertices = build_graph(events, cfg)
    if not vertices:
        return 0.0
    return float(sum(flops_per_event(dims, len(v.edges)) for v in vertices) / len(vertices))
