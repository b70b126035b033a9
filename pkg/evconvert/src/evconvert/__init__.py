"""HDF5 spiking-audio dataset conversion to canonical event-stream files."""

from .convert import (
    DEFAULT_TARGET_WORDS,
    SSC35_WORDS,
    SUBSETS,
    ConvertError,
    Manifest,
    ManifestEntry,
    convert_dataset,
    spike_times_to_us,
)

__all__ = [
    "DEFAULT_TARGET_WORDS",
    "SSC35_WORDS",
    "SUBSETS",
    "ConvertError",
    "Manifest",
    "ManifestEntry",
    "convert_dataset",
    "spike_times_to_us",
]
