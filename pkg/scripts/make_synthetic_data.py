#!/usr/bin/env python3
"""Generate the synthetic corpus + word-vector files under data/synth.

The files mirror the Cornell movie-review layout (rt-polarity.pos/.neg,
quote/plot files) so any config pointing at the real distribution works
unchanged against these.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtss import synthetic  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/synth")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--dims", type=int, nargs="*", default=[50, 300],
                    help="vector files to emit")
    args = ap.parse_args()

    paths = synthetic.write_corpus(args.out, seed=args.seed)
    for key, path in sorted(paths.items()):
        print(f"{key}: {path}")
    for dim in args.dims:
        vec = synthetic.write_vector_file(
            os.path.join(args.out, f"vectors{dim}.txt"), dim, args.seed)
        print(f"vectors{dim}: {vec}")


if __name__ == "__main__":
    main()
