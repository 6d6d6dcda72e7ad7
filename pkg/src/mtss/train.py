"""Adam, cross-dataset batch pairing, the epoch loop, and evaluation.

The two corpora are disjoint, so which polarity batch meets which
subjectivity batch at the fusion layer is arbitrary; both streams reshuffle
independently every epoch so the pairing stays noise. Batch order and dropout
draws are seeded per (task, epoch), never per mode, which is what makes a
single-task run reproduce the matching half of an MTL run exactly.
"""

import numpy as np

from . import autodiff as ad
from .data import POL, SUBJ
from .errors import ConfigError, NumericsError, UsageError
from .report import MetricsRecord
from .seeds import BATCH, DROPOUT, TASK_IDS, derive_rng


class Adam:
    """Standard Adam with bias correction over named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise NumericsError(f"adam: gradient shape {g.shape} does not "
                                    f"match parameter {name} {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = [("t", np.array([self.t], dtype=np.float32))]
        for name, _ in self.params:
            out.append((f"m.{name}", np.asarray(self.m[name],
                                                dtype=np.float32)))
            out.append((f"v.{name}", np.asarray(self.v[name],
                                                dtype=np.float32)))
        return out

    def load_state(self, arrays):
        if "t" not in arrays:
            raise ConfigError("optimizer state is missing the step counter")
        self.t = int(arrays["t"][0])
        for name, p in self.params:
            for prefix, store in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{name}"
                if key not in arrays:
                    raise ConfigError(f"optimizer state missing {key!r}")
                arr = np.asarray(arrays[key], dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise ConfigError(f"optimizer state {key!r} has shape "
                                      f"{arr.shape}, expected {p.data.shape}")
                store[name][...] = arr


def clip_gradients(params, max_norm):
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def _epoch_order(n, batch_size, seed, task, epoch):
    rng = derive_rng(seed, BATCH, TASK_IDS[task], epoch)
    order = rng.permutation(n)
    n_full = n // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(n_full)]


def make_task_batches(split, batch_size, seed, epoch=0):
    """Full-size shuffled minibatches of one task; trailing remainder dropped."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    for idx in _epoch_order(split.size, batch_size, seed, split.task, epoch):
        yield split.take(idx)


def make_mtl_batches(pol_split, subj_split, batch_size, seed, epoch=0):
    """Paired minibatch stream; batch i of each reshuffled task pairs with
    batch i of the other, extra batches of the longer stream are dropped."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if pol_split.size == 0 or subj_split.size == 0:
        raise UsageError("make_mtl_batches: both splits must be nonempty")
    pol_idx = _epoch_order(pol_split.size, batch_size, seed, POL, epoch)
    subj_idx = _epoch_order(subj_split.size, batch_size, seed, SUBJ, epoch)
    for pi, si in zip(pol_idx, subj_idx):
        yield pol_split.take(pi), subj_split.take(si)


def _dropout_rngs(cfg, tasks, epoch, batch_index):
    return {task: derive_rng(cfg.seed, DROPOUT, TASK_IDS[task], epoch,
                             batch_index)
            for task in tasks}


def train_epoch(cfg, model, optimizer, encoded, epoch):
    """One pass over the training pairing; returns train+dev MetricsRecords."""
    tasks = model.tasks
    if len(tasks) == 2:
        batch_iter = make_mtl_batches(encoded[POL]["train"],
                                      encoded[SUBJ]["train"],
                                      cfg.batch_size, cfg.seed, epoch)
        pairs = ((dict(zip((POL, SUBJ), pair))) for pair in batch_iter)
    else:
        task = tasks[0]
        batch_iter = make_task_batches(encoded[task]["train"], cfg.batch_size,
                                       cfg.seed, epoch)
        pairs = ({task: b} for b in batch_iter)

    loss_sum = {t: 0.0 for t in tasks}
    correct = {t: 0 for t in tasks}
    seen = {t: 0 for t in tasks}
    n_batches = 0
    for batch_index, batches in enumerate(pairs):
        rngs = _dropout_rngs(cfg, tasks, epoch, batch_index)
        with ad.Tape() as tape:
            out = model.forward(batches, mode="train", rngs=rngs)
        joint = out["joint"]
        if not np.isfinite(joint.data).all():
            raise NumericsError(
                f"non-finite training loss in epoch {epoch}, batch "
                f"{batch_index}; try a lower learning_rate (current "
                f"{cfg.learning_rate}) or enable grad_clip")
        optimizer.zero_grad()
        tape.backward(joint)
        if cfg.grad_clip > 0:
            clip_gradients(model.parameters(), cfg.grad_clip)
        optimizer.step()
        n_batches += 1
        for task in tasks:
            loss_sum[task] += float(out["losses"][task].data)
            preds = out["probs"][task].data.argmax(axis=1)
            truth = batches[task].labels.argmax(axis=1)
            correct[task] += int((preds == truth).sum())
            seen[task] += batches[task].size
    if n_batches == 0:
        raise UsageError("train split smaller than one batch; lower "
                         "batch_size")

    records = []
    for task in tasks:
        records.append(MetricsRecord(epoch, "train", task,
                                     loss_sum[task] / n_batches,
                                     correct[task] / max(seen[task], 1)))
    dev = evaluate(model, {t: encoded[t]["dev"] for t in tasks},
                   batch_size=cfg.batch_size)
    for task in tasks:
        records.append(MetricsRecord(epoch, "dev", task,
                                     dev[task]["loss"],
                                     dev[task]["accuracy"]))
    return records


def evaluate(model, splits, batch_size=256):
    """Eval-mode accuracy, mean loss and confusion matrix per task.

    With a fused two-task model the streams advance together; if sizes
    differ, the shorter stream wraps cyclically to fill the fusion input and
    only each record's first pass is scored.
    """
    tasks = [t for t in model.tasks if t in splits]
    if len(tasks) != len(model.tasks):
        missing = set(model.tasks) - set(splits)
        raise UsageError(f"evaluate: model needs splits for {sorted(missing)}")
    sizes = {t: splits[t].size for t in tasks}
    if any(n == 0 for n in sizes.values()):
        raise UsageError("evaluate: empty split")
    n_max = max(sizes.values())
    stats = {t: {"loss": 0.0, "correct": 0,
                 "confusion": np.zeros((2, 2), dtype=np.int64)}
             for t in tasks}
    for lo in range(0, n_max, batch_size):
        hi = min(lo + batch_size, n_max)
        pos = np.arange(lo, hi)
        batches = {t: splits[t].take(pos % sizes[t]) for t in tasks}
        out = model.forward(batches, mode="eval")
        for t in tasks:
            counted = pos < sizes[t]
            if not counted.any():
                continue
            probs = out["probs"][t].data[counted]
            truth = batches[t].labels.argmax(axis=1)[counted]
            preds = probs.argmax(axis=1)
            picked = np.clip(probs[np.arange(len(truth)), truth], 1e-12, None)
            stats[t]["loss"] += float(-np.log(picked).sum())
            stats[t]["correct"] += int((preds == truth).sum())
            np.add.at(stats[t]["confusion"], (truth, preds), 1)
    results = {}
    for t in tasks:
        n = sizes[t]
        results[t] = {
            "accuracy": stats[t]["correct"] / n,
            "loss": stats[t]["loss"] / n,
            "confusion": stats[t]["confusion"],
            "n": n,
        }
    return results


def count_parameters(model):
    """Total trainable scalar count (embeddings included when trainable)."""
    return sum(t.size for _, t in model.parameters())


class TrainResult:
    def __init__(self, records, best_epoch, best_dev, test):
        self.records = records
        self.best_epoch = best_epoch
        self.best_dev = best_dev
        self.test = test


def fit(cfg, model, encoded, optimizer=None, log=None):
    """Run the training plan; leaves the best-dev parameters in the model.

    Returns TrainResult with per-epoch records and final test metrics
    (computed from the restored best parameters).
    """
    log = log or (lambda msg: None)
    optimizer = optimizer or Adam(model.parameters(), lr=cfg.learning_rate,
                                  beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                                  eps=cfg.adam_eps)
    records = []
    best = {"epoch": -1, "avg": -1.0, "state": None}
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        rows = train_epoch(cfg, model, optimizer, encoded, epoch)
        records.extend(rows)
        dev_rows = [r for r in rows if r.split == "dev"]
        avg_dev = sum(r.accuracy for r in dev_rows) / len(dev_rows)
        for r in rows:
            log(f"epoch {r.epoch:3d} {r.split:5s} {r.task:4s} "
                f"loss {r.loss:.4f} acc {r.accuracy:.4f}")
        if avg_dev > best["avg"]:
            best = {"epoch": epoch, "avg": avg_dev,
                    "state": [(n, t.data.copy()) for n, t in
                              model.parameters()]}
            stale = 0
        else:
            stale += 1
            if cfg.early_stop and stale >= cfg.early_stop_patience:
                log(f"early stop at epoch {epoch} (no dev improvement in "
                    f"{stale} epochs)")
                break
    if best["state"] is not None:
        for (name, t), (saved_name, arr) in zip(model.parameters(),
                                                best["state"]):
            assert name == saved_name
            t.data[...] = arr
    test = evaluate(model, {t: encoded[t]["test"] for t in model.tasks},
                    batch_size=cfg.batch_size)
    return TrainResult(records, best["epoch"], best["avg"], test)
