"""Experiment assembly shared by the CLI and the test suites.

prepare() turns corpus files into split manifests, vocabulary files and
encoded caches under <prepared_dir>; ensure_prepared() loads them back,
regenerating on checksum mismatch. run_training() / evaluate_checkpoint()
are the train and eval commands minus the argument parsing.
"""

import datetime
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .config import ExperimentConfig
from .data import (POL, EncodedBatch, SentenceRecord, SplitSpec,
                   Vocabulary, average_token_length,
                   encode_from_embedding_files, encode_pad, load_glove,
                   load_polarity, load_subjectivity, read_embedding_file,
                   split_dataset)
from .errors import ConfigError
from .model import JointModel, TaskSetup
from .report import (build_run_report, write_metrics_csv, write_run_report)
from .seeds import SUBSET, TASK_IDS, derive_rng
from .train import Adam, count_parameters, evaluate, fit

SPLITS = ("train", "dev", "test")
ORIGIN_CODES = {"pos": 0, "neg": 1, "subj": 2, "obj": 3}
CODE_ORIGINS = {v: k for k, v in ORIGIN_CODES.items()}


@dataclass
class PreparedTask:
    task: str
    splits: dict  # split -> EncodedBatch
    vocab: Vocabulary = None
    n_records: int = 0
    avg_token_length: float = 0.0
    empty_encoded: int = 0


def prepared_dir(cfg):
    return cfg.prepared_dir or os.path.join(cfg.out_dir, "prepared")


def corpus_paths(cfg, task):
    if task == POL:
        return {"pos": cfg.pol_pos_path, "neg": cfg.pol_neg_path}
    return {"subj": cfg.subj_path, "obj": cfg.obj_path}


def mtss_paths(cfg, task):
    if task == POL:
        return {"pos": cfg.mtss_pos_path, "neg": cfg.mtss_neg_path}
    return {"subj": cfg.mtss_subj_path, "obj": cfg.mtss_obj_path}


def _subset(records, cap, seed, task):
    """Stratified per-class cap, seeded; keeps original record order."""
    if not cap or cap >= len(records):
        return records
    per_class = cap // 2
    by_label = {}
    for i, rec in enumerate(records):
        by_label.setdefault(rec.label, []).append(i)
    keep = []
    for label in sorted(by_label):
        idx = by_label[label]
        rng = derive_rng(seed, SUBSET, TASK_IDS[task], label)
        take = min(per_class, len(idx))
        picked = rng.choice(len(idx), size=take, replace=False)
        keep.extend(idx[i] for i in picked)
    keep.sort()
    return [records[i] for i in keep]


def _load_task_records(cfg, task):
    paths = corpus_paths(cfg, task)
    for key, path in paths.items():
        if not path:
            raise ConfigError(f"missing corpus path for {task}:{key}")
    if task == POL:
        records = load_polarity(cfg.pol_pos_path, cfg.pol_neg_path, cfg.seed,
                                cfg.pol_sample_per_class)
    else:
        records = load_subjectivity(cfg.subj_path, cfg.obj_path)
    # record ids stay relative to the full task list so manifests are stable
    return _subset(records, cfg.subset_per_task, cfg.seed, task)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksum_path(cfg):
    return os.path.join(prepared_dir(cfg), "checksums.txt")


def _write_checksums(cfg, names):
    lines = [f"{_sha256_file(os.path.join(prepared_dir(cfg), n))}  {n}"
             for n in sorted(names)]
    with open(_checksum_path(cfg), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_checksums(cfg):
    path = _checksum_path(cfg)
    if not os.path.exists(path):
        return None
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                digest, _, name = line.partition("  ")
                out[name] = digest
    return out


def _encode_records(cfg, task, records, vocab):
    if cfg.embedding == "glove":
        return encode_pad(records, vocab, cfg.max_len(task),
                          cfg.num_classes)
    stores = {}
    for origin, path in mtss_paths(cfg, task).items():
        if not path:
            raise ConfigError(f"bert-file mode needs an embedding file for "
                              f"{task}:{origin}")
        stores[origin] = read_embedding_file(path).load_all()
    return encode_from_embedding_files(records, stores, cfg.max_len(task),
                                       cfg.num_classes)


def prepare(cfg, force=False, log=None):
    """Build split manifests, vocabulary and encoded caches on disk.

    Idempotent for a fixed seed: manifests and vocabulary files are pure
    functions of (config, seed, corpus bytes).
    """
    log = log or (lambda msg: None)
    cfg.validate()
    out = {}
    pdir = prepared_dir(cfg)
    os.makedirs(pdir, exist_ok=True)
    artifact_names = []
    summary = {}
    for task in cfg.tasks():
        records = _load_task_records(cfg, task)
        spec = SplitSpec(seed=derive_seed_for_task(cfg.seed, task),
                         fractions=cfg.fractions())
        train, dev, test = split_dataset(records, spec)
        vocab = None
        if cfg.embedding == "glove":
            vocab = tokenize_vocab_for(records)
            vocab_name = f"{task}.vocab.txt"
            vocab.save(os.path.join(pdir, vocab_name))
            artifact_names.append(vocab_name)
        splits = {}
        empty_total = 0
        cache = {}
        for split_name, recs in zip(SPLITS, (train, dev, test)):
            manifest = f"{task}.{split_name}.ids"
            with open(os.path.join(pdir, manifest), "w",
                      encoding="utf-8") as fh:
                for rec in recs:
                    fh.write(f"{rec.rid}\n")
            artifact_names.append(manifest)
            enc = _encode_records(cfg, task, recs, vocab)
            splits[split_name] = enc
            empty_total += enc.empty_count
            cache[f"{split_name}_mask"] = enc.mask
            cache[f"{split_name}_labels"] = enc.labels
            cache[f"{split_name}_rids"] = enc.record_ids
            cache[f"{split_name}_origin"] = np.array(
                [ORIGIN_CODES[r.origin] for r in recs], dtype=np.int64)
            cache[f"{split_name}_line"] = np.array(
                [r.line_no for r in recs], dtype=np.int64)
            if enc.ids is not None:
                cache[f"{split_name}_ids"] = enc.ids
        cache_name = f"{task}.cache.npz"
        np.savez(os.path.join(pdir, cache_name), **cache)
        artifact_names.append(cache_name)
        out[task] = PreparedTask(
            task=task, splits=splits, vocab=vocab, n_records=len(records),
            avg_token_length=average_token_length(records),
            empty_encoded=empty_total)
        summary[task] = {
            "records": len(records),
            "train": splits["train"].size,
            "dev": splits["dev"].size,
            "test": splits["test"].size,
            "vocabulary": len(vocab) if vocab else 0,
            "avg_token_length": round(out[task].avg_token_length, 2),
            "degenerate_sentences": empty_total,
        }
        log(f"prepared {task}: {summary[task]}")
    summary_name = "prepare_summary.json"
    with open(os.path.join(pdir, summary_name), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifact_names.append(summary_name)
    _write_checksums(cfg, artifact_names)
    return out


def derive_seed_for_task(seed, task):
    return seed * 2 + TASK_IDS[task]


def tokenize_vocab_for(records):
    from .data import tokenize_build_vocab
    return tokenize_build_vocab(records)


def _cache_valid(cfg, task, log):
    pdir = prepared_dir(cfg)
    sums = _read_checksums(cfg)
    if sums is None:
        return False
    needed = [f"{task}.cache.npz"]
    needed.extend(f"{task}.{s}.ids" for s in SPLITS)
    if cfg.embedding == "glove":
        needed.append(f"{task}.vocab.txt")
    for name in needed:
        path = os.path.join(pdir, name)
        if not os.path.exists(path):
            return False
        if name not in sums:
            return False
        if _sha256_file(path) != sums[name]:
            log(f"warning: prepared cache {name} failed its checksum; "
                f"regenerating")
            return False
    return True


def _load_cached_task(cfg, task):
    pdir = prepared_dir(cfg)
    vocab = None
    if cfg.embedding == "glove":
        vocab = Vocabulary.load(os.path.join(pdir, f"{task}.vocab.txt"))
    stores = None
    if cfg.embedding == "bert-file":
        stores = {origin: read_embedding_file(path).load_all()
                  for origin, path in mtss_paths(cfg, task).items()}
    splits = {}
    with np.load(os.path.join(pdir, f"{task}.cache.npz")) as blob:
        for split_name in SPLITS:
            mask = blob[f"{split_name}_mask"]
            labels = blob[f"{split_name}_labels"]
            rids = blob[f"{split_name}_rids"]
            if cfg.embedding == "glove":
                splits[split_name] = EncodedBatch(
                    task=task, mask=mask, labels=labels, record_ids=rids,
                    ids=blob[f"{split_name}_ids"])
            else:
                origins = blob[f"{split_name}_origin"]
                lines = blob[f"{split_name}_line"]
                recs = [SentenceRecord("", int(labels[i].argmax()), task,
                                       CODE_ORIGINS[int(origins[i])],
                                       int(lines[i]), int(rids[i]))
                        for i in range(len(rids))]
                splits[split_name] = encode_from_embedding_files(
                    recs, stores, cfg.max_len(task), cfg.num_classes)
    return PreparedTask(task=task, splits=splits, vocab=vocab,
                        n_records=sum(s.size for s in splits.values()))


def ensure_prepared(cfg, log=None, force=False):
    log = log or (lambda msg: None)
    cfg.validate()
    if not force and all(_cache_valid(cfg, task, log) for task in cfg.tasks()):
        return {task: _load_cached_task(cfg, task) for task in cfg.tasks()}
    return prepare(cfg, force=True, log=log)


def build_model(cfg, prepared, init_tables=True):
    setups = []
    for task in cfg.tasks():
        p = prepared[task]
        if cfg.embedding == "glove":
            emb_init = None
            if init_tables and cfg.glove_path:
                emb_init = load_glove(cfg.glove_path, p.vocab, cfg.emb_dim,
                                      cfg.seed)
            setups.append(TaskSetup(task, cfg.max_len(task), cfg.emb_dim,
                                    vocab_size=len(p.vocab),
                                    emb_init=emb_init))
        else:
            emb_dim = p.splits["train"].embeddings.shape[2]
            setups.append(TaskSetup(task, cfg.max_len(task), emb_dim,
                                    vocab_size=0))
    return JointModel(cfg, setups)


def resolve_run_dir(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    if not os.path.exists(os.path.join(out_dir, "metrics.csv")):
        return out_dir
    stamp = datetime.datetime.now().strftime("run-%Y%m%d-%H%M%S-%f")
    run_dir = os.path.join(out_dir, stamp)
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


def run_training(cfg, resume=None, log=None):
    """Full train command: prepare, fit, persist, report via the saved
    checkpoint so eval reproduces the printed numbers exactly."""
    log = log or (lambda msg: None)
    cfg.validate()
    with ad.precision("f64" if cfg.float64 else "f32"):
        prepared = ensure_prepared(cfg, log)
        model = build_model(cfg, prepared)
        optimizer = Adam(model.parameters(), lr=cfg.learning_rate,
                         beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                         eps=cfg.adam_eps)
        if resume:
            loaded = ckpt.load_checkpoint(resume)
            for warning in loaded.warnings:
                log(f"warning: {warning}")
            model.load_state(loaded.tensor_dict())
            if ckpt.SECTION_ADAM in loaded.sections:
                optimizer.load_state(ckpt.unpack_adam_section(
                    loaded.sections[ckpt.SECTION_ADAM]))
            else:
                log("warning: checkpoint has no optimizer state; resuming "
                    "with a fresh Adam state")
        n_params = count_parameters(model)
        log(f"trainable parameters ({cfg.mode}): {n_params}")
        result = fit(cfg, model, {t: prepared[t].splits for t in cfg.tasks()},
                     optimizer=optimizer, log=log)

        run_dir = resolve_run_dir(cfg.out_dir)
        metrics_path = os.path.join(run_dir, "metrics.csv")
        write_metrics_csv(result.records, metrics_path)
        if cfg.float64:
            log("warning: checkpoint format stores float32; float64 "
                "parameters are narrowed on save")
        sections = {ckpt.SECTION_META: ckpt.pack_meta_section({
            "best_epoch": result.best_epoch,
            "best_dev_accuracy_avg": f"{result.best_dev:.6f}",
            "epochs_run": max((r.epoch for r in result.records), default=0),
        })}
        if cfg.save_optimizer:
            sections[ckpt.SECTION_ADAM] = ckpt.pack_adam_section(
                optimizer.state_arrays())
        ckpt_path = os.path.join(run_dir, "checkpoint.mtsk")
        ckpt.save_checkpoint(ckpt_path, model.state_arrays(), cfg.to_text(),
                             sections)

        # report from the persisted tensors so eval matches bit-for-bit
        saved = ckpt.load_checkpoint(ckpt_path)
        model.load_state(saved.tensor_dict())
        result.test = evaluate(model,
                               {t: prepared[t].splits["test"]
                                for t in cfg.tasks()},
                               batch_size=cfg.batch_size)
        report = build_run_report(cfg, result, n_params)
        report_path = os.path.join(run_dir, "report.json")
        write_run_report(report, report_path)
        for task, stats in result.test.items():
            log(f"test {task}: accuracy {stats['accuracy']:.4f} "
                f"(n={stats['n']})")
    return {"run_dir": run_dir, "metrics": metrics_path,
            "checkpoint": ckpt_path, "report": report_path,
            "result": result, "report_data": report, "model": model}


def load_model_from_checkpoint(path, log=None):
    log = log or (lambda msg: None)
    loaded = ckpt.load_checkpoint(path)
    for warning in loaded.warnings:
        log(f"warning: {warning}")
    cfg = ExperimentConfig.from_text(loaded.config_text).validate()
    with ad.precision("f64" if cfg.float64 else "f32"):
        prepared = ensure_prepared(cfg, log)
        model = build_model(cfg, prepared, init_tables=False)
        model.load_state(loaded.tensor_dict())
    return model, cfg, prepared, loaded


def evaluate_checkpoint(path, split="test", log=None):
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    model, cfg, prepared, loaded = load_model_from_checkpoint(path, log)
    with ad.precision("f64" if cfg.float64 else "f32"):
        stats = evaluate(model,
                         {t: prepared[t].splits[split] for t in cfg.tasks()},
                         batch_size=cfg.batch_size)
    return stats, cfg, loaded
