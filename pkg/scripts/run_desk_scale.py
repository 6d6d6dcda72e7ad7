#!/usr/bin/env python3
"""Desk-scale comparison: single-task vs MTL on 2000-sentence subsets.

Trains single-pol, single-subj and mtl with identical seeds and prints the
accuracy table plus MTL-vs-single deltas. Expects the synthetic data from
scripts/make_synthetic_data.py (or point the flags at the real corpora).
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtss import experiment  # noqa: E402
from mtss.config import ExperimentConfig  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/synth")
    ap.add_argument("--out", default="runs/desk_scale")
    ap.add_argument("--seed", type=int, default=404)
    ap.add_argument("--subset", type=int, default=2000)
    ap.add_argument("--emb-dim", type=int, default=50)
    args = ap.parse_args()

    accs = {}
    for mode in ("single-pol", "single-subj", "mtl"):
        cfg = ExperimentConfig(
            mode=mode, embedding="glove", seed=args.seed,
            out_dir=os.path.join(args.out, mode),
            pol_pos_path=os.path.join(args.data, "rt-polarity.pos"),
            pol_neg_path=os.path.join(args.data, "rt-polarity.neg"),
            subj_path=os.path.join(args.data, "quote.tok.gt9.5000"),
            obj_path=os.path.join(args.data, "plot.tok.gt9.5000"),
            glove_path=os.path.join(args.data,
                                    f"vectors{args.emb_dim}.txt"),
            emb_dim=args.emb_dim, subset_per_task=args.subset).validate()
        print(f"=== {mode} ===")
        out = experiment.run_training(cfg, log=print)
        for task, stats in out["result"].test.items():
            accs[(mode, task)] = stats["accuracy"]

    print("\nmode          pol      subj")
    for mode in ("single-pol", "single-subj", "mtl"):
        pol = accs.get((mode, "pol"))
        subj = accs.get((mode, "subj"))
        print(f"{mode:12s}  {pol if pol is None else f'{pol:.4f}':>7}  "
              f"{subj if subj is None else f'{subj:.4f}':>7}")
    for task, single_mode in (("pol", "single-pol"), ("subj", "single-subj")):
        delta = accs[("mtl", task)] - accs[(single_mode, task)]
        print(f"mtl - single ({task}): {delta:+.4f}")


if __name__ == "__main__":
    main()
