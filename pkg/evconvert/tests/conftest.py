import gzip
import shutil

import h5py
import numpy as np
import pytest


def make_archive(path, times_list, units_list, labels, keys=None):
    """Write one synthetic split archive in the source layout."""
    with h5py.File(path, "w") as f:
        spikes = f.create_group("spikes")
        dt = h5py.vlen_dtype(np.float64)
        du = h5py.vlen_dtype(np.int64)
        times = spikes.create_dataset("times", (len(times_list),), dtype=dt)
        units = spikes.create_dataset("units", (len(units_list),), dtype=du)
        for i, (t, u) in enumerate(zip(times_list, units_list)):
            times[i] = np.asarray(t, dtype=np.float64)
            units[i] = np.asarray(u, dtype=np.int64)
        f.create_dataset("labels", data=np.asarray(labels, dtype=np.int64))
        if keys is not None:
            f.create_group("extra").create_dataset(
                "keys", data=np.array([k.encode() for k in keys]))


def random_sample(rng, n, duration_s=0.8):
    t = np.sort(rng.uniform(0, duration_s, n))
    u = rng.integers(0, 700, n)
    return t, u


SHD_KEYS = [f"digit_{i:02d}" for i in range(20)]


@pytest.fixture
def shd_src(tmp_path):
    """Tiny two-split digit archive: 4 train samples, 3 test samples."""
    rng = np.random.default_rng(42)
    src = tmp_path / "src"
    src.mkdir()
    tr = [random_sample(rng, 50) for _ in range(4)]
    te = [random_sample(rng, 40) for _ in range(3)]
    make_archive(src / "shd_train.h5", [s[0] for s in tr], [s[1] for s in tr],
                 [0, 7, 19, 7], keys=SHD_KEYS)
    make_archive(src / "shd_test.h5", [s[0] for s in te], [s[1] for s in te],
                 [3, 0, 12], keys=SHD_KEYS)
    return src


SSC_KEYS = ["bed", "cat", "down", "go", "left", "no", "off", "on", "right",
            "stop", "tree", "up", "wow", "yes"]


@pytest.fixture
def ssc_src(tmp_path):
    """Tiny three-split word archive over a 14-word vocabulary."""
    rng = np.random.default_rng(7)
    src = tmp_path / "src"
    src.mkdir()

    def split(labels):
        samples = [random_sample(rng, 30) for _ in labels]
        return [s[0] for s in samples], [s[1] for s in samples], labels

    t, u, l = split([13, 1, 9, 3, 0])  # yes, cat, stop, go, bed
    make_archive(src / "ssc_train.h5", t, u, l, keys=SSC_KEYS)
    t, u, l = split([5, 10])  # no, tree
    make_archive(src / "ssc_valid.h5", t, u, l, keys=SSC_KEYS)
    t, u, l = split([2, 11, 12])  # down, up, wow
    make_archive(src / "ssc_test.h5", t, u, l, keys=SSC_KEYS)
    return src


def gzip_file(path):
    gz = str(path) + ".gz"
    with open(path, "rb") as fin, gzip.open(gz, "wb") as fout:
        shutil.copyfileobj(fin, fout)
    path.unlink()
    return gz
