"""Command-line entry points: prepare, train, eval, gradcheck, export-report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

import argparse
import json
import os
import sys

from . import experiment, verification
from .config import ExperimentConfig
from .errors import DataFormatError, NumericsError, UsageError
from .report import read_metrics_csv, read_run_report, write_curves_csv


def _build_config(args):
    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else ExperimentConfig())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "embedding", None):
        cfg.embedding = args.embedding
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "f64", False):
        cfg.float64 = True
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        cfg.set_field(key.strip(), value.strip())
    return cfg.validate()


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="experiment seed")
    parser.add_argument("--mode", choices=("single-pol", "single-subj", "mtl"))
    parser.add_argument("--embedding", choices=("glove", "bert-file"))
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--f64", action="store_true",
                        help="64-bit parameters and math")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config field (repeatable)")


def cmd_prepare(args):
    cfg = _build_config(args)
    experiment.prepare(cfg, force=args.force, log=print)
    print(f"prepared data written to {experiment.prepared_dir(cfg)}")
    return 0


def cmd_train(args):
    cfg = _build_config(args)
    out = experiment.run_training(cfg, resume=args.resume, log=print)
    print(f"run artifacts in {out['run_dir']}")
    return 0


def cmd_eval(args):
    stats, cfg, loaded = experiment.evaluate_checkpoint(
        args.checkpoint, split=args.split,
        log=(lambda m: print(m, file=sys.stderr)))
    if args.json:
        row = {"checkpoint": args.checkpoint, "split": args.split,
               "mode": cfg.mode}
        for task, s in stats.items():
            row[f"{task}_accuracy"] = s["accuracy"]
            row[f"{task}_loss"] = s["loss"]
        print(json.dumps(row, sort_keys=True))
        return 0
    print(f"mode {cfg.mode}, split {args.split}")
    for task, s in stats.items():
        print(f"{task}: accuracy {s['accuracy']:.4f} loss {s['loss']:.4f} "
              f"(n={s['n']})")
        print(f"{task} confusion [true x pred]:")
        for row in s["confusion"]:
            print(f"  {row[0]:6d} {row[1]:6d}")
    return 0


def cmd_gradcheck(args):
    rows = verification.run_suite()
    width = max(len(r["name"]) for r in rows)
    failed = 0
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        detail = (f"max rel err {r['max_rel_err']:.3e} (tol {r['tol']:.0e})"
                  if r["error"] is None else r["error"])
        print(f"{r['name']:<{width}}  {status}  {detail}")
        failed += not r["passed"]
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    if failed:
        raise NumericsError(f"{failed} gradient checks failed")
    return 0


def cmd_export_report(args):
    run_dir = args.run
    metrics_path = os.path.join(run_dir, "metrics.csv")
    if not os.path.exists(metrics_path):
        raise DataFormatError(f"no metrics.csv under {run_dir}")
    records = read_metrics_csv(metrics_path)
    curves_path = args.out or os.path.join(run_dir, "curves.csv")
    write_curves_csv(records, curves_path)
    print(f"curve data written to {curves_path}")
    report_path = os.path.join(run_dir, "report.json")
    if os.path.exists(report_path):
        report = read_run_report(report_path)
        print(f"mode {report['mode']}, embedding {report['embedding']}, "
              f"best epoch {report['best_epoch']} "
              f"(dev avg {report['best_dev_accuracy_avg']:.4f})")
        for task, stats in sorted(report.get("test", {}).items()):
            print(f"test {task}: accuracy {stats['accuracy']:.4f}")
        for task, soft in sorted(report.get("soft_targets", {}).items()):
            print(f"soft target {task}: {soft['soft_target']:.3f} "
                  f"(delta {soft['delta']:+.3f})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtss",
        description="Joint polarity/subjectivity classifier workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build split manifests and caches")
    _add_common(p)
    p.add_argument("--force", action="store_true",
                   help="rebuild even if caches look valid")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write artifacts")
    _add_common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "dev", "test"))
    p.add_argument("--json", action="store_true",
                   help="one machine-readable summary row")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference suite over every op")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-report",
                       help="emit curve CSV + summary for a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", help="curves CSV path")
    p.set_defaults(fn=cmd_export_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
