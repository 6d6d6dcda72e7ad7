"""Metrics rows, the metrics CSV, curve export and the run report."""

import csv
import json
from dataclasses import dataclass

from .errors import DataFormatError

CSV_COLUMNS = ("epoch", "split", "task", "loss", "accuracy")

# soft targets for the full-scale 300-dim word-vector MTL configuration;
# recorded in run reports, never asserted
SOFT_TARGET_ACCURACY = {"subj": 0.923, "pol": 0.921}


@dataclass
class MetricsRecord:
    epoch: int
    split: str  # train | dev
    task: str  # pol | subj
    loss: float
    accuracy: float


def write_metrics_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.epoch, r.split, r.task,
                             f"{r.loss:.6f}", f"{r.accuracy:.6f}"])


def read_metrics_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise DataFormatError(f"{path}: unexpected metrics header "
                                  f"{header}")
        for row in reader:
            records.append(MetricsRecord(int(row[0]), row[1], row[2],
                                         float(row[3]), float(row[4])))
    return records


def write_curves_csv(records, path):
    """Per-epoch loss/accuracy curves, one row per (epoch, task)."""
    cells = {}
    tasks = []
    for r in records:
        if r.task not in tasks:
            tasks.append(r.task)
        cells[(r.epoch, r.task, r.split)] = r
    epochs = sorted({r.epoch for r in records})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task", "train_loss", "train_accuracy",
                         "dev_loss", "dev_accuracy"])
        for epoch in epochs:
            for task in tasks:
                tr = cells.get((epoch, task, "train"))
                dv = cells.get((epoch, task, "dev"))
                writer.writerow([
                    epoch, task,
                    f"{tr.loss:.6f}" if tr else "",
                    f"{tr.accuracy:.6f}" if tr else "",
                    f"{dv.loss:.6f}" if dv else "",
                    f"{dv.accuracy:.6f}" if dv else "",
                ])


def build_run_report(cfg, result, param_count):
    """JSON-serializable summary of one training run."""
    test = {}
    for task, stats in result.test.items():
        test[task] = {
            "accuracy": stats["accuracy"],
            "loss": stats["loss"],
            "n": stats["n"],
            "confusion": stats["confusion"].tolist(),
        }
    report = {
        "mode": cfg.mode,
        "embedding": cfg.embedding,
        "seed": cfg.seed,
        "epochs_run": max((r.epoch for r in result.records), default=0),
        "best_epoch": result.best_epoch,
        "best_dev_accuracy_avg": result.best_dev,
        "trainable_parameters": param_count,
        "test": test,
    }
    if cfg.embedding == "glove" and cfg.mode == "mtl":
        deltas = {}
        for task, target in SOFT_TARGET_ACCURACY.items():
            if task in test:
                deltas[task] = {
                    "soft_target": target,
                    "delta": test[task]["accuracy"] - target,
                }
        report["soft_targets"] = deltas
    return report


def write_run_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_run_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
