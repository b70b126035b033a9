"""Command line front end: convert --src DIR --dst DIR --subset NAME."""

from __future__ import annotations

import argparse
import sys

from .convert import DEFAULT_TARGET_WORDS, SUBSETS, ConvertError, convert_dataset


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert",
        description="convert HDF5 spiking-audio archives to binary event streams")
    parser.add_argument("--src", required=True, help="directory with the split archives")
    parser.add_argument("--dst", required=True, help="output directory")
    parser.add_argument("--subset", required=True, choices=sorted(SUBSETS))
    parser.add_argument("--targets", default=None,
                        help="comma-separated target words for subset ssc11 "
                             f"(default: {','.join(DEFAULT_TARGET_WORDS)})")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel conversion processes")
    args = parser.parse_args(argv)

    targets = None
    if args.targets is not None:
        targets = tuple(w.strip() for w in args.targets.split(",") if w.strip())
    try:
        manifest = convert_dataset(args.src, args.dst, args.subset,
                                   targets=targets, workers=args.workers)
    except ConvertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for split, count in manifest.split_counts.items():
        print(f"{args.subset} {split}: {count} samples")
    if manifest.word_list_assumed:
        print("note: using the assumed default target-word list "
              f"({','.join(manifest.targets)})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
