import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgraph.events import (
    Burst,
    Event,
    StreamFormatError,
    StreamHeader,
    SynthSpec,
    events_to_arrays,
    read_stream,
    synth_stream,
    write_stream,
)


def test_header_validation():
    with pytest.raises(ValueError):
        StreamHeader(num_channels=0, duration_us=100)
    with pytest.raises(ValueError):
        StreamHeader(num_channels=4, duration_us=0)
    h = StreamHeader(num_channels=4, duration_us=100, label=3)
    assert h.label == 3


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_round_trip(tmp_path, fmt):
    header = StreamHeader(num_channels=16, duration_us=10_000, label=2)
    events = [Event(0, 0), Event(5, 15), Event(5, 3), Event(9_999, 7)]
    path = tmp_path / f"s.{fmt}"
    write_stream(path, header, events, fmt=fmt)
    h2, ev2 = read_stream(path)
    assert h2 == header
    assert ev2 == events


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_round_trip_no_label(tmp_path, fmt):
    header = StreamHeader(num_channels=8, duration_us=50)
    events = [Event(1, 1)]
    path = tmp_path / "s.dat"
    write_stream(path, header, events, fmt=fmt)
    h2, ev2 = read_stream(path, fmt=fmt)
    assert h2.label is None
    assert ev2 == events


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2**20), st.integers(0, 63)), max_size=200),
       st.sampled_from(["binary", "text"]))
def test_round_trip_property(tmp_path_factory, pairs, fmt):
    pairs.sort()
    events = [Event(t, c) for t, c in pairs]
    header = StreamHeader(num_channels=64, duration_us=2**20 + 1, label=0)
    path = tmp_path_factory.mktemp("rt") / "s.dat"
    write_stream(path, header, events, fmt=fmt)
    h2, ev2 = read_stream(path)
    assert (h2, ev2) == (header, events)


def test_auto_format_detection(tmp_path):
    header = StreamHeader(num_channels=4, duration_us=10)
    pb = tmp_path / "b.evb"
    pt = tmp_path / "t.evt"
    write_stream(pb, header, [Event(1, 2)], fmt="binary")
    write_stream(pt, header, [Event(1, 2)], fmt="text")
    assert read_stream(pb)[1] == read_stream(pt)[1] == [Event(1, 2)]


def test_rejects_out_of_range_channel(tmp_path):
    header = StreamHeader(num_channels=4, duration_us=100)
    with pytest.raises(ValueError):
        write_stream(tmp_path / "x.evb", header, [Event(1, 4)])


def test_rejects_unsorted(tmp_path):
    header = StreamHeader(num_channels=4, duration_us=100)
    with pytest.raises(ValueError):
        write_stream(tmp_path / "x.evb", header, [Event(5, 0), Event(1, 0)])


def test_read_reports_bad_record_line(tmp_path):
    path = tmp_path / "bad.evt"
    path.write_text("#channels=4 duration_us=100\n1,0\nnot-a-record\n")
    with pytest.raises(StreamFormatError) as exc:
        read_stream(path)
    assert "2" in str(exc.value)  # 1-based record number


def test_read_sort_option(tmp_path):
    path = tmp_path / "u.evt"
    path.write_text("#channels=4 duration_us=100\n5,1\n1,0\n")
    with pytest.raises(StreamFormatError):
        read_stream(path)
    _, ev = read_stream(path, sort=True)
    assert ev == [Event(1, 0), Event(5, 1)]


def test_events_to_arrays():
    t, ch = events_to_arrays([Event(3, 1), Event(7, 2)])
    assert t.dtype == np.int64 and ch.dtype == np.int64
    assert t.tolist() == [3, 7] and ch.tolist() == [1, 2]


def test_synth_deterministic():
    spec = SynthSpec(num_channels=32, duration_us=100_000,
                     bursts=[Burst(50_000, 16, 10_000, 40)],
                     background_count=10, label=1, seed=42)
    h1, e1, s1 = synth_stream(spec)
    h2, e2, s2 = synth_stream(spec)
    assert e1 == e2 and s1 == s2
    assert h1.label == 1
    assert len(e1) == 50
    assert all(0 <= e.ch < 32 and 0 <= e.t <= 100_000 for e in e1)
    assert all(a.t <= b.t for a, b in zip(e1, e1[1:]))


def test_synth_burst_centered():
    spec = SynthSpec(num_channels=64, duration_us=1_000_000,
                     bursts=[Burst(400_000, 20, 20_000, 500)], seed=0)
    _, events, _ = synth_stream(spec)
    ts = np.array([e.t for e in events])
    chs = np.array([e.ch for e in events])
    assert abs(ts.mean() - 400_000) < 5_000
    assert abs(chs.mean() - 20) < 1.0
