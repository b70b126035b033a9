"""Convert HDF5 spiking-audio archives into binary event streams.

A source archive directory holds one HDF5 file per split.  Each file
stores ragged per-sample spike arrays (`spikes/times` in float seconds,
`spikes/units` as channel indices), a `labels` array, and optionally an
`extra/keys` table naming the label vocabulary.  Conversion writes one
binary event file per sample (the stream format of `evgraph.events`)
under `dst/<split>/` and a JSON manifest next to them.

Timestamps become integer microseconds with half-to-even rounding so a
re-run reproduces files byte for byte.  Per-sample work is independent,
so conversion can fan out over processes; outputs do not depend on the
worker count.
"""

from __future__ import annotations

import concurrent.futures
import gzip
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import h5py
import numpy as np

from evgraph.events import Event, StreamHeader, write_stream

NUM_CHANNELS = 700  # cochlea model used by both corpora
SHD_NUM_CLASSES = 20  # spoken digits in two languages

#: duration stored for a sample with no spikes (the archives carry no
#: per-sample length, so the nominal 1 s capture window is used).
EMPTY_SAMPLE_DURATION_US = 1_000_000

UNKNOWN_WORD = "unknown"

#: default keyword targets for the reduced 11-class subset.  The ten
#: command words of the underlying spoken-command corpus; an assumption
#: (flagged in the manifest) since no canonical list ships with the data.
DEFAULT_TARGET_WORDS = (
    "yes", "no", "up", "down", "left",
    "right", "on", "off", "stop", "go",
)

#: fallback vocabulary for the 35-word corpus when the archive has no
#: `extra/keys` table: the standard alphabetical label order.
SSC35_WORDS = (
    "backward", "bed", "bird", "cat", "dog", "down", "eight", "five",
    "follow", "forward", "four", "go", "happy", "house", "learn", "left",
    "marvin", "nine", "no", "off", "on", "one", "right", "seven", "sheila",
    "six", "stop", "three", "tree", "two", "up", "visual", "wow", "yes",
    "zero",
)

#: split tag -> source file stem, per subset (``.h5`` or ``.h5.gz``).
SUBSETS = {
    "shd": (("train", "shd_train"), ("test", "shd_test")),
    "ssc35": (("train", "ssc_train"), ("valid", "ssc_valid"), ("test", "ssc_test")),
    "ssc11": (("train", "ssc_train"), ("valid", "ssc_valid"), ("test", "ssc_test")),
}


class ConvertError(ValueError):
    """Unusable archive content or layout."""


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    path: str  # relative to the manifest directory
    label: int
    split: str
    duration_us: int


@dataclass
class Manifest:
    subset: str
    num_channels: int
    label_names: list[str]
    entries: list[ManifestEntry]
    targets: list[str] | None = None
    word_list_assumed: bool = False

    @property
    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.split] = counts.get(e.split, 0) + 1
        return counts

    @property
    def class_counts(self) -> list[int]:
        counts = [0] * len(self.label_names)
        for e in self.entries:
            counts[e.label] += 1
        return counts

    def to_json(self) -> dict:
        doc = {
            "format": "evstream-manifest-v1",
            "subset": self.subset,
            "num_channels": self.num_channels,
            "label_names": list(self.label_names),
            "split_counts": self.split_counts,
            "class_counts": self.class_counts,
            "entries": [
                {"sample_id": e.sample_id, "path": e.path, "label": e.label,
                 "split": e.split, "duration_us": e.duration_us}
                for e in self.entries
            ],
        }
        if self.subset == "ssc11":
            doc["targets"] = list(self.targets or ())
            doc["word_list_assumed"] = self.word_list_assumed
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def spike_times_to_us(times_s: np.ndarray) -> np.ndarray:
    """Float seconds -> integer microseconds, rounded half to even."""
    times_s = np.asarray(times_s, dtype=np.float64)
    if times_s.size and float(times_s.min()) < 0:
        raise ConvertError(f"negative spike time {times_s.min()}")
    return np.rint(times_s * 1e6).astype(np.int64)


def _find_split_file(src: str, stem: str) -> str | None:
    for suffix in (".h5", ".h5.gz"):
        cand = os.path.join(src, stem + suffix)
        if os.path.isfile(cand):
            return cand
    return None


@contextmanager
def _open_archive(path: str):
    """Open an HDF5 file, transparently inflating a ``.gz`` copy."""
    if path.endswith(".gz"):
        with tempfile.NamedTemporaryFile(suffix=".h5", delete=False) as tmp:
            try:
                with gzip.open(path, "rb") as src:
                    shutil.copyfileobj(src, tmp)
                tmp.close()
                with h5py.File(tmp.name, "r") as f:
                    yield f
            finally:
                os.unlink(tmp.name)
    else:
        with h5py.File(path, "r") as f:
            yield f


def _read_label_names(f: h5py.File, subset: str) -> list[str]:
    if "extra" in f and "keys" in f["extra"]:
        raw = f["extra"]["keys"][...]
        return [k.decode() if isinstance(k, bytes) else str(k) for k in raw]
    if subset in ("ssc35", "ssc11"):
        return list(SSC35_WORDS)
    # the digit corpus has 20 classes; without a key table only
    # placeholder names are honest
    return [f"class_{i:02d}" for i in range(SHD_NUM_CLASSES)]


def _build_remap(source_names: list[str], targets: tuple[str, ...]) -> np.ndarray:
    """Source label id -> reduced id: targets take 0..9, the rest map to 10."""
    index = {w: i for i, w in enumerate(targets)}
    return np.array([index.get(w, len(targets)) for w in source_names],
                    dtype=np.int64)


def _convert_range(h5path: str, split: str, lo: int, hi: int, out_dir: str,
                   num_names: int, remap: np.ndarray | None,
                   id_width: int) -> list[tuple[str, str, int, int]]:
    """Convert samples [lo, hi) of one split file; returns manifest rows."""
    rows = []
    with _open_archive(h5path) as f:
        times_ds = f["spikes"]["times"]
        units_ds = f["spikes"]["units"]
        labels = np.asarray(f["labels"][...], dtype=np.int64)
        for i in range(lo, hi):
            label = int(labels[i])
            if not (0 <= label < num_names):
                raise ConvertError(
                    f"{os.path.basename(h5path)} sample {i}: label {label} "
                    f"outside expected vocabulary of {num_names}")
            if remap is not None:
                label = int(remap[label])
            t_us = spike_times_to_us(times_ds[i])
            ch = np.asarray(units_ds[i], dtype=np.int64)
            if ch.size and not (0 <= int(ch.min()) and int(ch.max()) < NUM_CHANNELS):
                raise ConvertError(
                    f"{os.path.basename(h5path)} sample {i}: channel outside "
                    f"[0, {NUM_CHANNELS})")
            order = np.argsort(t_us, kind="stable")
            t_us, ch = t_us[order], ch[order]
            duration = int(t_us[-1]) if t_us.size else EMPTY_SAMPLE_DURATION_US
            duration = max(duration, 1)
            header = StreamHeader(NUM_CHANNELS, duration, label=label)
            events = [Event(int(t), int(c)) for t, c in zip(t_us, ch)]
            sample_id = f"{split}_{i:0{id_width}d}"
            rel = os.path.join(split, sample_id + ".evb")
            write_stream(os.path.join(out_dir, rel), header, events)
            rows.append((sample_id, rel, label, duration))
    return rows


def convert_dataset(src, dst, subset: str,
                    targets: tuple[str, ...] | None = None,
                    workers: int = 1) -> Manifest:
    """Convert every split of one subset; writes files plus manifest.json.

    src is a directory holding the split archives; dst receives one
    subdirectory per split and the manifest.  For the reduced 11-class
    subset, targets overrides the default ten keywords.
    """
    src, dst = str(src), str(dst)
    if subset not in SUBSETS:
        raise ConvertError(f"unknown subset {subset!r}")
    if not os.path.isdir(src):
        raise ConvertError(f"source directory not found: {src}")
    if targets is not None and subset != "ssc11":
        raise ConvertError("target words only apply to subset ssc11")

    word_list_assumed = False
    if subset == "ssc11":
        if targets is None:
            targets = DEFAULT_TARGET_WORDS
            word_list_assumed = True
        targets = tuple(targets)
        if len(targets) != len(DEFAULT_TARGET_WORDS) or len(set(targets)) != len(targets):
            raise ConvertError(
                f"need {len(DEFAULT_TARGET_WORDS)} distinct target words, "
                f"got {len(targets)}")
    else:
        targets = None

    split_paths = []
    for split, stem in SUBSETS[subset]:
        path = _find_split_file(src, stem)
        if path is None:
            raise ConvertError(f"missing split: no {stem}.h5[.gz] under {src}")
        split_paths.append((split, path))

    os.makedirs(dst, exist_ok=True)
    entries: list[ManifestEntry] = []
    label_names: list[str] | None = None
    for split, path in split_paths:
        with _open_archive(path) as f:
            source_names = _read_label_names(f, subset)
            n = len(f["labels"])
        if label_names is None:
            first_names = source_names
            label_names = (list(targets) + [UNKNOWN_WORD] if subset == "ssc11"
                           else source_names)
        elif source_names != first_names:
            raise ConvertError(f"label vocabulary differs across splits ({split})")
        remap = _build_remap(source_names, targets) if subset == "ssc11" else None
        os.makedirs(os.path.join(dst, split), exist_ok=True)
        id_width = max(5, len(str(max(n - 1, 0))))
        if workers <= 1 or n < 2:
            chunks = [_convert_range(path, split, 0, n, dst,
                                     len(source_names), remap, id_width)]
        else:
            bounds = np.linspace(0, n, workers + 1, dtype=int)
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_convert_range, path, split, int(lo), int(hi),
                                    dst, len(source_names), remap, id_width)
                        for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
                chunks = [f.result() for f in futs]
        for rows in chunks:
            entries.extend(ManifestEntry(sid, rel, label, split, dur)
                           for sid, rel, label, dur in rows)

    manifest = Manifest(subset=subset, num_channels=NUM_CHANNELS,
                        label_names=label_names or [], entries=entries,
                        targets=list(targets) if targets else None,
                        word_list_assumed=word_list_assumed)
    manifest.save(os.path.join(dst, "manifest.json"))
    return manifest
