#!/usr/bin/env python3
"""Full-data word-vector run: 10000+10000 sentences, 300-dim vectors,
20 epochs. Writes metrics, checkpoint and report.json (with soft-target
deltas) under --out, then emits the curve CSV."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtss import experiment  # noqa: E402
from mtss.config import ExperimentConfig  # noqa: E402
from mtss.report import read_metrics_csv, write_curves_csv  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/synth")
    ap.add_argument("--out", default="runs/full_glove")
    ap.add_argument("--seed", type=int, default=505)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        mode="mtl", embedding="glove", seed=args.seed, out_dir=args.out,
        pol_pos_path=os.path.join(args.data, "rt-polarity.pos"),
        pol_neg_path=os.path.join(args.data, "rt-polarity.neg"),
        subj_path=os.path.join(args.data, "quote.tok.gt9.5000"),
        obj_path=os.path.join(args.data, "plot.tok.gt9.5000"),
        glove_path=os.path.join(args.data, "vectors300.txt"),
        emb_dim=300).validate()
    out = experiment.run_training(cfg, log=print)
    curves = os.path.join(out["run_dir"], "curves.csv")
    write_curves_csv(read_metrics_csv(out["metrics"]), curves)
    print(f"curves: {curves}")
    print(f"report: {out['report']}")


if __name__ == "__main__":
    main()
