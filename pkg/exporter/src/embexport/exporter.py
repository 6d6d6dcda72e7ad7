"""Run a pretrained encoder over sentence files and dump MTSS containers.

One record per input line, in input order. Sentences are subword-tokenized,
truncated to maxlen-2 before the start/end specials go in, padded to maxlen;
the final encoder layer's hidden states are written with pad rows zeroed so
consumers that ignore the mask degrade gracefully. Lines that tokenize to
zero subwords become all-zero records with all-zero masks and are counted in
the returned summary.
"""

from dataclasses import dataclass

import numpy as np

from . import mtss_format


@dataclass
class ExportJob:
    input_path: str
    output_path: str
    max_len: int
    model_name: str = "bert-base-uncased"  # 12-layer, 768-hidden, 12-head
    batch_size: int = 16


def read_sentences(path):
    """Latin-1 lines, one sentence each; blanks stay as empty strings so
    record indices keep matching file lines."""
    with open(path, "rb") as fh:
        text = fh.read().decode("latin-1")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r").strip() for ln in lines]


def load_encoder(model_name):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
    except OSError as exc:
        raise RuntimeError(
            f"pretrained weights for {model_name!r} are not obtainable "
            f"(no local directory and no reachable hub): {exc}") from exc
    model.eval()
    torch.set_grad_enabled(False)
    return tokenizer, model


def export_embeddings(job, log=None):
    """Write the MTSS file for one sentence file; returns a summary dict."""
    import torch

    log = log or (lambda msg: None)
    sentences = read_sentences(job.input_path)
    tokenizer, model = load_encoder(job.model_name)
    dim = model.config.hidden_size
    empty = 0
    with mtss_format.Writer(job.output_path, len(sentences), job.max_len,
                            dim) as writer:
        for lo in range(0, len(sentences), job.batch_size):
            chunk = sentences[lo:lo + job.batch_size]
            keep = [i for i, s in enumerate(chunk) if s]
            zero_emb = np.zeros((job.max_len, dim), dtype=np.float32)
            zero_mask = np.zeros(job.max_len, dtype=np.uint8)
            outputs = {}
            if keep:
                enc = tokenizer([chunk[i] for i in keep], padding="max_length",
                                truncation=True, max_length=job.max_len,
                                return_tensors="pt")
                hidden = model(**enc).last_hidden_state  # [b, L, D]
                mask = enc["attention_mask"]
                hidden = hidden * mask.unsqueeze(-1)  # zero the pad rows
                hidden = hidden.to(torch.float32).numpy()
                mask = mask.to(torch.uint8).numpy()
                for row, i in enumerate(keep):
                    outputs[i] = (hidden[row], mask[row])
            for i in range(len(chunk)):
                if i in outputs:
                    writer.add(*outputs[i])
                else:
                    empty += 1
                    writer.add(zero_emb, zero_mask)
            log(f"exported {min(lo + job.batch_size, len(sentences))}/"
                f"{len(sentences)}")
    summary = {"records": len(sentences), "max_len": job.max_len,
               "dim": dim, "empty_sentences": empty,
               "output": job.output_path}
    if empty:
        log(f"warning: {empty} sentence(s) tokenized to zero subwords and "
            f"were written as all-zero records")
    return summary


def verify_file(path, expected_n=None, expected_l=None, expected_d=None):
    """Structural checks over an MTSS file; returns [(name, ok, detail)]."""
    checks = []
    try:
        n, max_len, dim = mtss_format.read_header(path)
        checks.append(("header+length", True,
                       f"N={n} L={max_len} D={dim}"))
    except mtss_format.FormatError as exc:
        return [("header+length", False, str(exc))]
    for name, got, want in (("records", n, expected_n),
                            ("max_len", max_len, expected_l),
                            ("dim", dim, expected_d)):
        if want is not None:
            checks.append((f"expected_{name}", got == want,
                           f"got {got}, expected {want}"))
    prefix_ok = True
    zeros_ok = True
    finite_ok = True
    for emb, mask in mtss_format.iter_records(path):
        ones = int(mask.sum())
        if not (mask[:ones] == 1).all() or not (mask[ones:] == 0).all():
            prefix_ok = False
        if ones < max_len and np.abs(emb[ones:]).sum() != 0.0:
            zeros_ok = False
        if not np.isfinite(emb).all():
            finite_ok = False
    checks.append(("mask_prefix_property", prefix_ok, ""))
    checks.append(("zero_vectors_at_masked_positions", zeros_ok, ""))
    checks.append(("finite_values", finite_ok, ""))
    return checks
