import numpy as np
import pytest

from evgraph.events import Burst, Event, SynthSpec, synth_stream
from evgraph.graph import GraphGenConfig


def random_events(rng, n, num_channels, duration_us):
    """Time-sorted random events (uniform channel, uniform time)."""
    ts = np.sort(rng.integers(0, duration_us, n)).astype(np.int64)
    chs = rng.integers(0, num_channels, n)
    return [Event(int(t), int(c)) for t, c in zip(ts, chs)]


def burst_events(seed, num_channels, duration_us, t_center, ch_center,
                 spread, count, background=0, label=None):
    spec = SynthSpec(num_channels=num_channels, duration_us=duration_us,
                     bursts=[Burst(t_center, ch_center, spread, count)],
                     background_count=background, label=label, seed=seed)
    _, events, _ = synth_stream(spec)
    return events


def rect_burst_events(rng, num_channels, duration_us, t0, t1, count, background=0):
    """Events uniform over [t0, t1) plus uniform background, time-sorted."""
    ts = rng.integers(t0, t1, count)
    chs = rng.integers(0, num_channels, count)
    if background:
        ts = np.concatenate([ts, rng.integers(0, duration_us, background)])
        chs = np.concatenate([chs, rng.integers(0, num_channels, background)])
    order = np.argsort(ts, kind="stable")
    return [Event(int(t), int(c)) for t, c in zip(ts[order], chs[order])]


@pytest.fixture
def small_graph_cfg():
    return GraphGenConfig(num_channels=64, r_ch=16, skip=8, r_t_us=50_000)


@pytest.fixture
def full_scale_cfg():
    return GraphGenConfig(num_channels=700, r_ch=100, skip=10, r_t_us=100_000)
