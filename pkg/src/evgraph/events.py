"""Event-stream I/O: canonical text/binary formats plus a synthetic generator.

An event is a (timestamp, channel) pair produced by a multi-channel sensor.
Timestamps are microseconds in an unsigned 32-bit range, channels are
unsigned 16-bit indices.  A stream is a header plus events ordered by
non-decreasing timestamp; ties are allowed and their file order is
preserved everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

T_MAX = 2**32 - 1
CH_MAX = 2**16 - 1

_BIN_MAGIC = b"EVG1"
_BIN_HEADER = struct.Struct("<4sIIi")  # magic, num_channels, duration_us, label
_BIN_RECORD = struct.Struct("<IH")  # t_us, channel


class Event(NamedTuple):
    t: int  # microseconds since stream start
    ch: int  # channel index


@dataclass
class StreamHeader:
    num_channels: int
    duration_us: int
    label: int | None = None

    def __post_init__(self):
        if not (1 <= self.num_channels <= CH_MAX + 1):
            raise StreamFormatError(f"num_channels out of range: {self.num_channels}")
        if not (1 <= self.duration_us <= T_MAX):
            raise StreamFormatError(f"duration_us out of range: {self.duration_us}")


class StreamFormatError(ValueError):
    """Malformed stream content; `record` is the 1-based offending record."""

    def __init__(self, msg: str, record: int | None = None):
        self.record = record
        if record is not None:
            msg = f"record {record}: {msg}"
        super().__init__(msg)


def _validate_events(events: Sequence[Event], header: StreamHeader, sort: bool) -> list[Event]:
    out = list(events)
    if sort:
        out.sort(key=lambda e: e.t)  # stable: equal timestamps keep input order
    prev_t = 0
    for i, ev in enumerate(out):
        if not (0 <= ev.t <= T_MAX):
            raise StreamFormatError(f"timestamp {ev.t} outside u32 range", record=i + 1)
        if not (0 <= ev.ch < header.num_channels):
            raise StreamFormatError(
                f"channel {ev.ch} outside [0, {header.num_channels})", record=i + 1
            )
        if ev.t < prev_t:
            raise StreamFormatError(
                f"timestamp {ev.t} decreases from {prev_t}", record=i + 1
            )
        if ev.t > header.duration_us:
            raise StreamFormatError(
                f"timestamp {ev.t} beyond duration_us {header.duration_us}", record=i + 1
            )
        prev_t = ev.t
    return out


def read_stream(path, fmt: str = "auto", sort: bool = False) -> tuple[StreamHeader, list[Event]]:
    """Read and validate one stream.

    fmt is "text", "binary", or "auto" (sniffs the binary magic).  With
    sort=False a non-monotonic timestamp is an error naming the record;
    with sort=True events are stably sorted by timestamp first.
    """
    path = str(path)
    if fmt == "auto":
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == _BIN_MAGIC else "text"
    if fmt == "text":
        header, events = _read_text(path)
    elif fmt == "binary":
        header, events = _read_binary(path)
    else:
        raise ValueError(f"unknown stream format: {fmt!r}")
    return header, _validate_events(events, header, sort)


def _read_text(path: str) -> tuple[StreamHeader, list[Event]]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise StreamFormatError("missing '#' header line")
    fields = {}
    for tok in lines[0][1:].split():
        if "=" not in tok:
            raise StreamFormatError(f"bad header token {tok!r}")
        key, val = tok.split("=", 1)
        fields[key] = val
    try:
        header = StreamHeader(
            num_channels=int(fields["channels"]),
            duration_us=int(fields["duration_us"]),
            label=int(fields["label"]) if "label" in fields else None,
        )
    except KeyError as exc:
        raise StreamFormatError(f"header missing field {exc.args[0]!r}") from None
    events = []
    for rec, line in enumerate(lines[1:], start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise StreamFormatError(f"expected 't_us,channel', got {line!r}", record=rec)
        try:
            events.append(Event(int(parts[0]), int(parts[1])))
        except ValueError:
            raise StreamFormatError(f"non-integer field in {line!r}", record=rec) from None
    return header, events


def _read_binary(path: str) -> tuple[StreamHeader, list[Event]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _BIN_HEADER.size:
        raise StreamFormatError("truncated header")
    magic, num_channels, duration_us, label = _BIN_HEADER.unpack_from(blob, 0)
    if magic != _BIN_MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    body = blob[_BIN_HEADER.size :]
    if len(body) % _BIN_RECORD.size:
        raise StreamFormatError("byte count not a whole number of records")
    header = StreamHeader(num_channels, duration_us, None if label < 0 else label)
    events = [Event(t, ch) for t, ch in _BIN_RECORD.iter_unpack(body)]
    return header, events


def write_stream(path, header: StreamHeader, events: Iterable[Event], fmt: str = "binary") -> None:
    events = _validate_events(list(events), header, sort=False)
    path = str(path)
    if fmt == "text":
        with open(path, "w", encoding="ascii") as fh:
            line = f"#channels={header.num_channels} duration_us={header.duration_us}"
            if header.label is not None:
                line += f" label={header.label}"
            fh.write(line + "\n")
            fh.writelines(f"{ev.t},{ev.ch}\n" for ev in events)
    elif fmt == "binary":
        label = -1 if header.label is None else header.label
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(_BIN_MAGIC, header.num_channels, header.duration_us, label))
            fh.writelines(_BIN_RECORD.pack(ev.t, ev.ch) for ev in events)
    else:
        raise ValueError(f"unknown stream format: {fmt!r}")


def events_to_arrays(events: Sequence[Event]) -> tuple[np.ndarray, np.ndarray]:
    """Split events into (t, ch) int64 arrays for vectorized consumers."""
    if not events:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.asarray(events, dtype=np.int64)
    return arr[:, 0], arr[:, 1]


@dataclass
class Burst:
    """Gaussian packet of events around a time/channel center.

    `spread` is the timestamp standard deviation in microseconds; the
    channel standard deviation scales proportionally as
    spread * num_channels / duration_us so a burst keeps a similar shape
    in the normalized time-channel plane.
    """

    t_center_us: int
    ch_center: int
    spread: float
    count: int


@dataclass
class SynthSpec:
    num_channels: int
    duration_us: int
    bursts: list[Burst] = field(default_factory=list)
    background_count: int = 0  # uniform noise events over the full extent
    label: int | None = None
    seed: int = 0


def synth_stream(spec: SynthSpec) -> tuple[StreamHeader, list[Event], dict]:
    """Generate a seeded synthetic stream in canonical order.

    Samples land outside the valid time/channel extent are clamped; the
    returned metadata dict reports how many under "clamped".  Identical
    specs produce identical streams.
    """
    header = StreamHeader(spec.num_channels, spec.duration_us, spec.label)
    rng = np.random.default_rng(spec.seed)
    ts, chs = [], []
    clamped = 0
    for b in spec.bursts:
        if not (0 <= b.t_center_us <= spec.duration_us):
            raise ValueError(f"burst t_center_us {b.t_center_us} outside stream duration")
        if not (0 <= b.ch_center < spec.num_channels):
            raise ValueError(f"burst ch_center {b.ch_center} outside channel range")
        ch_spread = b.spread * spec.num_channels / max(spec.duration_us, 1)
        t = np.rint(rng.normal(b.t_center_us, b.spread, size=b.count))
        ch = np.rint(rng.normal(b.ch_center, ch_spread, size=b.count))
        clamped += int(np.sum((t < 0) | (t > spec.duration_us)))
        clamped += int(np.sum((ch < 0) | (ch > spec.num_channels - 1)))
        ts.append(np.clip(t, 0, spec.duration_us))
        chs.append(np.clip(ch, 0, spec.num_channels - 1))
    if spec.background_count:
        ts.append(rng.integers(0, spec.duration_us + 1, size=spec.background_count))
        chs.append(rng.integers(0, spec.num_channels, size=spec.background_count))
    if ts:
        t_all = np.concatenate(ts).astype(np.int64)
        ch_all = np.concatenate(chs).astype(np.int64)
    else:
        t_all = np.zeros(0, dtype=np.int64)
        ch_all = np.zeros(0, dtype=np.int64)
    order = np.lexsort((ch_all, t_all))  # canonical: by time, then channel
    events = [Event(int(t), int(c)) for t, c in zip(t_all[order], ch_all[order])]
    return header, events, {"clamped": clamped}
