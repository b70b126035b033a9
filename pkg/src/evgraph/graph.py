"""Streaming event-graph construction.

Each incoming event becomes a vertex with directed edges to the most
recent earlier event on a sparse set of nearby channels: the event's own
channel plus channels at multiples of `skip` within `r_ch`, restricted
to a time horizon `r_t_us`.  A context memory holding one timestamp per
channel makes the search O(r_ch / skip) per event regardless of stream
length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import Event


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphGenConfig:
    num_channels: int
    r_ch: int  # channel search radius
    skip: int  # channel search stride
    r_t_us: int  # time horizon, inclusive
    t_norm_us: int = 1_000_000  # timestamp normalization window
    n_div: int = 4  # divider pipeline depth of the generator stage

    def __post_init__(self):
        if self.num_channels < 1:
            raise GraphError(f"num_channels must be >= 1, got {self.num_channels}")
        if self.skip < 1:
            raise GraphError(f"skip must be >= 1, got {self.skip}")
        if self.r_ch < 0 or self.r_ch >= self.num_channels:
            raise GraphError(
                f"r_ch must satisfy 0 <= r_ch < num_channels, got {self.r_ch}"
            )
        if self.r_ch > 0 and self.skip > self.r_ch:
            raise GraphError(f"skip {self.skip} exceeds r_ch {self.r_ch}")
        if self.r_t_us < 1:
            raise GraphError(f"r_t_us must be >= 1, got {self.r_t_us}")
        if self.t_norm_us < 1:
            raise GraphError(f"t_norm_us must be >= 1, got {self.t_norm_us}")
        if self.n_div < 0:
            raise GraphError(f"n_div must be >= 0, got {self.n_div}")

    @property
    def max_edge(self) -> int:
        """Hard cap on edges per vertex: own channel + 2*(r_ch // skip) others."""
        return 1 + 2 * (self.r_ch // self.skip)


@dataclass
class EventGraphVertex:
    """One event lifted into the graph.

    `pos` is the normalized (channel, time) coordinate in [0, 1]^2,
    `feat` the initial 2-dim feature (mean normalized time and channel of
    the neighbors, the vertex's own coordinate when there are none), and
    `edges` the raw (channel, t_us) endpoints in ascending channel order.
    """

    ch: int
    t: int
    pos: tuple[float, float]
    feat: np.ndarray
    edges: list[tuple[int, int]] = field(default_factory=list)


def norm_ch(ch, num_channels: int):
    return ch / (num_channels - 1) if num_channels > 1 else 0.0 * ch


def norm_t(t, t_norm_us: int):
    return t / t_norm_us


class ContextMemory:
    """Last-seen timestamp per channel; -1 marks a channel never hit."""

    def __init__(self, num_channels: int):
        self.last_t = np.full(num_channels, -1, dtype=np.int64)

    def reset(self) -> None:
        self.last_t.fill(-1)

    def update(self, ev: Event) -> None:
        self.last_t[ev.ch] = ev.t


def _vertex(ev: Event, edges: list[tuple[int, int]], cfg: GraphGenConfig) -> EventGraphVertex:
    pos = (float(norm_ch(ev.ch, cfg.num_channels)), float(norm_t(ev.t, cfg.t_norm_us)))
    if edges:
        arr = np.array(edges, dtype=np.float64)  # ascending channel order
        feat = np.array(
            [
                norm_t(arr[:, 1], cfg.t_norm_us).mean(),
                norm_ch(arr[:, 0], cfg.num_channels).mean(),
            ]
        )
    else:
        feat = np.array([pos[1], pos[0]])
    return EventGraphVertex(ev.ch, ev.t, pos, feat, edges)


def process_event(ev: Event, mem: ContextMemory, cfg: GraphGenConfig) -> EventGraphVertex:
    """Build the vertex for one event and then fold it into the memory.

    The memory is updated after the search, so a later event on the same
    channel sees this one as a candidate neighbor.
    """
    if ev.t > cfg.t_norm_us:
        raise GraphError(f"event at t={ev.t} outside normalization window {cfg.t_norm_us}")
    k = cfg.r_ch // cfg.skip
    edges = []
    for step in range(-k, k + 1):
        c = ev.ch + step * cfg.skip
        if not (0 <= c < cfg.num_channels):
            continue
        t_last = mem.last_t[c]
        if t_last >= 0 and ev.t - t_last <= cfg.r_t_us:
            edges.append((c, int(t_last)))
    mem.update(ev)
    return _vertex(ev, edges, cfg)


def build_graph(events: Sequence[Event], cfg: GraphGenConfig) -> list[EventGraphVertex]:
    mem = ContextMemory(cfg.num_channels)
    return [process_event(ev, mem, cfg) for ev in events]


def brute_force_graph(events: Sequence[Event], cfg: GraphGenConfig) -> list[EventGraphVertex]:
    """Offline oracle: exhaustive scan over all prior events per vertex.

    Keeps, for every searched channel, the most recent prior event
    (latest stream position on timestamp ties).  Intentionally ignores
    the context-memory shortcut; used to pin down the streaming
    semantics in tests.
    """
    t_all = np.array([ev.t for ev in events], dtype=np.int64)
    ch_all = np.array([ev.ch for ev in events], dtype=np.int64)
    k = cfg.r_ch // cfg.skip
    vertices = []
    for i, ev in enumerate(events):
        if ev.t > cfg.t_norm_us:
            raise GraphError(f"event at t={ev.t} outside normalization window {cfg.t_norm_us}")
        t_prior, ch_prior = t_all[:i], ch_all[:i]
        edges = []
        for step in range(-k, k + 1):
            c = ev.ch + step * cfg.skip
            if not (0 <= c < cfg.num_channels):
                continue
            hits = np.nonzero(ch_prior == c)[0]
            if hits.size == 0:
                continue
            j = hits[-1]  # most recent = last in stream order
            if ev.t - t_prior[j] <= cfg.r_t_us:
                edges.append((c, int(t_prior[j])))
        vertices.append(_vertex(ev, edges, cfg))
    return vertices


def gen_cycles(cfg: GraphGenConfig, n_div: int | None = None) -> int:
    """Cycles per event of a two-lane graph generator stage.

    The searched channels are visited two per cycle, plus a fixed
    divider latency.
    """
    if n_div is None:
        n_div = cfg.n_div
    return math.ceil(cfg.max_edge / 2) + n_div
