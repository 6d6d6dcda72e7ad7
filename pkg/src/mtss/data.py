"""Corpus ingestion, tokenization, padding, splits, vectors, embedding files.

Corpus files are one sentence per line in the Cornell movie-review layout:
polarity comes as a positive file and a negative file, subjectivity as a
subjective (quote) file and an objective (plot) file. Source bytes are
transcoded from Latin-1, which is total, so nothing is ever dropped.
"""

import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, DimensionError
from .seeds import GLOVE_OOV, POL_SAMPLE, SPLIT, derive_rng

POL = "pol"
SUBJ = "subj"
TASKS = (POL, SUBJ)

# label conventions: pol 0=negative 1=positive; subj 0=objective 1=subjective
PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# characters stripped before whitespace splitting (replaced by a space)
FILTER_CHARS = '!"#$%&()*+,-./:;<=>?@[\\]^_`{|}~\t\n'
_FILTER_TABLE = str.maketrans({c: " " for c in FILTER_CHARS})


@dataclass
class SentenceRecord:
    text: str
    label: int
    task: str
    origin: str  # source file key: pos/neg/subj/obj
    line_no: int  # 0-based line within the source file
    rid: int = -1  # position in the task's canonical record list


@dataclass
class SplitSpec:
    seed: int
    fractions: tuple = (0.72, 0.08, 0.20)
    stratified: bool = True


def tokenize(text):
    return text.lower().translate(_FILTER_TABLE).split()


def read_sentence_file(path):
    """Lines of a Latin-1 sentence file; blank lines dropped (count returned)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read corpus file {path}: {exc}") from exc
    text = raw.decode("latin-1")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out, blanks = [], 0
    for ln in lines:
        ln = ln.rstrip("\r").strip()
        if ln:
            out.append(ln)
        else:
            blanks += 1
            out.append(None)  # keep positions so line_no stays file-accurate
    return out, blanks


def _file_records(path, origin, label, task):
    lines, _ = read_sentence_file(path)
    return [SentenceRecord(text, label, task, origin, i)
            for i, text in enumerate(lines) if text is not None]


def _assign_rids(records):
    for rid, rec in enumerate(records):
        rec.rid = rid
    return records


def load_polarity(pos_path, neg_path, seed, sample_per_class=5000):
    """Positive + negative polarity records; sample_per_class random
    sentences kept per class (0 keeps everything), seeded and order-stable."""
    pos = _file_records(pos_path, "pos", 1, POL)
    neg = _file_records(neg_path, "neg", 0, POL)
    if sample_per_class:
        rng = derive_rng(seed, POL_SAMPLE)
        pos = _sample_records(pos, sample_per_class, rng, pos_path)
        neg = _sample_records(neg, sample_per_class, rng, neg_path)
    return _assign_rids(pos + neg)


def load_subjectivity(subj_path, obj_path):
    """Subjective + objective records; every sentence is kept."""
    return _assign_rids(_file_records(subj_path, "subj", 1, SUBJ)
                        + _file_records(obj_path, "obj", 0, SUBJ))


def load_corpus(pol_pos, pol_neg, subj_path, obj_path, seed,
                pol_sample_per_class=5000):
    """Read the four corpus files; returns {task: [SentenceRecord]}."""
    return {
        POL: load_polarity(pol_pos, pol_neg, seed, pol_sample_per_class),
        SUBJ: load_subjectivity(subj_path, obj_path),
    }


def _sample_records(records, k, rng, path):
    if len(records) < k:
        raise DataFormatError(
            f"{path}: {len(records)} usable sentences, need {k} per class")
    if len(records) == k:
        return records
    picked = rng.choice(len(records), size=k, replace=False)
    picked.sort()
    return [records[i] for i in picked]


class Vocabulary:
    """token -> id map; id 0 is padding, id 1 is unknown, rest by frequency."""

    def __init__(self, tokens, counts=None):
        self.tokens = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.counts = counts or {}
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token):
        return self.index.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens[2:]:
                fh.write(f"{tok}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path):
        tokens, counts = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, cnt = line.partition("\t")
                tokens.append(tok)
                counts[tok] = int(cnt) if cnt else 0
        return cls(tokens, counts)


def tokenize_build_vocab(records):
    """Frequency-ranked vocabulary; ties broken by first occurrence."""
    counts = Counter()
    first_seen = {}
    for rec in records:
        for tok in tokenize(rec.text):
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    if not counts:
        raise DataFormatError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(ordered, dict(counts))


@dataclass
class EncodedBatch:
    """One task's encoded sentences; B may be a whole split or a minibatch."""

    task: str
    mask: np.ndarray  # [B,L] uint8, 1 for real tokens (prefix property)
    labels: np.ndarray  # [B,C] uint8 one-hot
    record_ids: np.ndarray  # [B] int64, task-level record ids
    ids: np.ndarray = None  # [B,L] int32 token ids (token-id mode)
    embeddings: np.ndarray = None  # [B,L,D] float32 (precomputed mode)
    empty_count: int = 0

    @property
    def size(self):
        return self.mask.shape[0]

    @property
    def max_len(self):
        return self.mask.shape[1]

    def take(self, idx):
        return EncodedBatch(
            task=self.task,
            mask=self.mask[idx],
            labels=self.labels[idx],
            record_ids=self.record_ids[idx],
            ids=None if self.ids is None else self.ids[idx],
            embeddings=None if self.embeddings is None else self.embeddings[idx],
        )

    def batches(self, batch_size):
        for lo in range(0, self.size, batch_size):
            yield self.take(np.arange(lo, min(lo + batch_size, self.size)))


def encode_pad(records, vocab, max_len, num_classes=2):
    """Token-id encoding: truncate to the first max_len tokens, post-pad."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    n = len(records)
    ids = np.zeros((n, max_len), dtype=np.int32)
    mask = np.zeros((n, max_len), dtype=np.uint8)
    labels = np.zeros((n, num_classes), dtype=np.uint8)
    rids = np.zeros(n, dtype=np.int64)
    empty = 0
    for r, rec in enumerate(records):
        toks = vocab.encode(tokenize(rec.text))[:max_len]
        if not toks:
            # never emit an all-zero mask row; attention needs one real slot
            toks = [UNK_ID]
            empty += 1
        ids[r, :len(toks)] = toks
        mask[r, :len(toks)] = 1
        labels[r, rec.label] = 1
        rids[r] = rec.rid
    task = records[0].task if records else POL
    return EncodedBatch(task=task, mask=mask, labels=labels, record_ids=rids,
                        ids=ids, empty_count=empty)


def encode_from_embedding_files(records, stores, max_len, num_classes=2):
    """Precomputed-embedding encoding; stores maps origin -> (emb, mask).

    emb is [N,L,D] float32 and mask [N,L] uint8 as produced by
    read_embedding_file().load_all(); record line numbers index into them.
    """
    n = len(records)
    if n == 0:
        raise DataFormatError("no records to encode")
    sample = next(iter(stores.values()))
    dim = sample[0].shape[2]
    emb = np.zeros((n, max_len, dim), dtype=np.float32)
    mask = np.zeros((n, max_len), dtype=np.uint8)
    labels = np.zeros((n, num_classes), dtype=np.uint8)
    rids = np.zeros(n, dtype=np.int64)
    empty = 0
    for r, rec in enumerate(records):
        if rec.origin not in stores:
            raise ConfigError(f"no embedding file configured for source "
                              f"'{rec.origin}'")
        src_emb, src_mask = stores[rec.origin]
        if src_emb.shape[1] != max_len:
            raise ConfigError(
                f"embedding file for '{rec.origin}' has L={src_emb.shape[1]} "
                f"but the task is configured with L={max_len}")
        if rec.line_no >= src_emb.shape[0]:
            raise DataFormatError(
                f"record line {rec.line_no} beyond embedding file for "
                f"'{rec.origin}' (N={src_emb.shape[0]})")
        emb[r] = src_emb[rec.line_no]
        mask[r] = src_mask[rec.line_no]
        if mask[r].sum() == 0:
            mask[r, 0] = 1  # degenerate sentence: keep one (zero) slot real
            empty += 1
        labels[r, rec.label] = 1
        rids[r] = rec.rid
    return EncodedBatch(task=records[0].task, mask=mask, labels=labels,
                        record_ids=rids, embeddings=emb, empty_count=empty)


def split_dataset(records, spec):
    """Deterministic (train, dev, test) partition, stratified by default."""
    f_train, f_dev, f_test = spec.fractions
    if abs(f_train + f_dev + f_test - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {spec.fractions} must sum to 1")
    if len(records) < 10:
        raise DataFormatError(
            f"refusing to split a corpus of {len(records)} records (< 10)")
    groups = {}
    if spec.stratified:
        for i, rec in enumerate(records):
            groups.setdefault(rec.label, []).append(i)
    else:
        groups[0] = list(range(len(records)))
    train_idx, dev_idx, test_idx = [], [], []
    for label in sorted(groups):
        idx = np.array(groups[label])
        rng = derive_rng(spec.seed, SPLIT, label)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_test = int(round(n * f_test))
        n_dev = int(round(n * f_dev))
        test_idx.extend(idx[:n_test])
        dev_idx.extend(idx[n_test:n_test + n_dev])
        train_idx.extend(idx[n_test + n_dev:])
    out = []
    for part in (train_idx, dev_idx, test_idx):
        part.sort()
        out.append([records[i] for i in part])
    return tuple(out)


def load_glove(path, vocab, dim, seed):
    """Word-vector table [|V|, dim] float32 aligned to the vocabulary.

    File rows are parsed in float64 then cast; words missing from the file get
    seeded uniform(-0.05, 0.05) rows; the padding row is forced to zeros.
    """
    rng = derive_rng(seed, GLOVE_OOV)
    table = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    filled = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2 or parts[0] == "":
                continue
            word = parts[0]
            if len(parts) - 1 != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} values after the word, "
                    f"got {len(parts) - 1}")
            wid = vocab.index.get(word)
            if wid is None or filled[wid]:
                continue
            table[wid] = np.array([float(v) for v in parts[1:]],
                                  dtype=np.float64)
            filled[wid] = True
    table[PAD_ID] = 0.0
    return table.astype(np.float32)


# ---------------------------------------------------------------------------
# MTSS precomputed-embedding container
#
# little-endian: "MTSS" | u32 version=1 | u32 N | u32 L | u32 D, then N
# records of L*D float32 (time-major rows) followed by L mask bytes.

MTSS_MAGIC = b"MTSS"
MTSS_VERSION = 1
MTSS_HEADER = struct.Struct("<4sIIII")


def mtss_total_size(n, max_len, dim):
    return MTSS_HEADER.size + n * (4 * max_len * dim + max_len)


def write_embedding_file(path, embeddings, masks):
    """embeddings [N,L,D] float32, masks [N,L] uint8 -> MTSS container."""
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    msk = np.ascontiguousarray(masks, dtype=np.uint8)
    n, max_len, dim = emb.shape
    if msk.shape != (n, max_len):
        raise DimensionError(f"masks {msk.shape} do not match embeddings "
                             f"{emb.shape}")
    with open(path, "wb") as fh:
        fh.write(MTSS_HEADER.pack(MTSS_MAGIC, MTSS_VERSION, n, max_len, dim))
        for i in range(n):
            fh.write(emb[i].tobytes())
            fh.write(msk[i].tobytes())


class EmbeddingFile:
    """Validated reader over an MTSS container; records stream in order."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            header = fh.read(MTSS_HEADER.size)
        if len(header) < MTSS_HEADER.size:
            raise DataFormatError(
                f"{path}: truncated header, file ends at byte {len(header)}")
        magic, version, n, max_len, dim = MTSS_HEADER.unpack(header)
        if magic != MTSS_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic {magic!r} at byte offset 0")
        if version != MTSS_VERSION:
            raise DataFormatError(
                f"{path}: unsupported version {version} at byte offset 4")
        self.n, self.max_len, self.dim = n, max_len, dim
        import os
        actual = os.path.getsize(path)
        expected = mtss_total_size(n, max_len, dim)
        if actual != expected:
            raise DataFormatError(
                f"{path}: file is {actual} bytes, header implies {expected} "
                f"(mismatch from byte offset {min(actual, expected)})")

    def iter_records(self):
        rec_emb = 4 * self.max_len * self.dim
        with open(self.path, "rb") as fh:
            fh.seek(MTSS_HEADER.size)
            for _ in range(self.n):
                emb = np.frombuffer(fh.read(rec_emb), dtype="<f4")
                emb = emb.reshape(self.max_len, self.dim)
                mask = np.frombuffer(fh.read(self.max_len), dtype=np.uint8)
                yield emb, mask

    def load_all(self):
        emb = np.zeros((self.n, self.max_len, self.dim), dtype=np.float32)
        mask = np.zeros((self.n, self.max_len), dtype=np.uint8)
        for i, (e, m) in enumerate(self.iter_records()):
            emb[i] = e
            mask[i] = m
        return emb, mask


def read_embedding_file(path):
    return EmbeddingFile(path)


def average_token_length(records):
    if not records:
        return 0.0
    return sum(len(tokenize(r.text)) for r in records) / len(records)
