"""Model assembly: per-task encoders, tensor fusion, softmax heads, losses.

Initialization is seeded per parameter name, so a task's encoder starts from
identical values whether it is built inside a single-task or an MTL model —
the trajectory-consistency checks rely on this.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import POL, SUBJ
from .errors import ConfigError, DimensionError
from .layers import (LSTM_PARAM_NAMES, LstmParams, TaskEncoderParams,
                     task_encode)
from .seeds import INIT, derive_rng, name_tag


@dataclass
class NtnParams:
    T: ad.Tensor  # [K, D, D] bilinear slices
    W: ad.Tensor  # [2D, K]
    b: ad.Tensor  # [K]


@dataclass
class HeadParams:
    W: ad.Tensor  # [D_in, C]
    b: ad.Tensor  # [C]


def ntn_fuse(s1, s2, p):
    """tanh(s1 T[k] s2 + (s1 ++ s2) W[:,k] + b[k]) per slice; s1 is the
    subjectivity-side vector when called from the joint model."""
    s1, squeeze = _promote(s1)
    s2, _ = _promote(s2)
    if s1.shape[1] != p.T.shape[1] or s2.shape[1] != p.T.shape[2]:
        raise DimensionError(f"ntn_fuse: inputs {tuple(s1.shape)}/"
                             f"{tuple(s2.shape)} vs T {tuple(p.T.shape)}")
    bil = ad.bilinear_form(p.T, s1, s2)
    lin = ad.matmul(ad.concat(s1, s2, axis=1), p.W)
    out = ad.tanh(ad.add_rowvec(ad.add(bil, lin), p.b))
    return ad.flatten(out) if squeeze else out


def classify_head(x, n, p):
    """softmax((X ++ N) W + b); N may be None (single-task heads)."""
    x, squeeze = _promote(x)
    if n is not None:
        n, _ = _promote(n)
        x = ad.concat(x, n, axis=1)
    if x.shape[1] != p.W.shape[0]:
        raise DimensionError(f"classify_head: input dim {x.shape[1]} vs "
                             f"weights {tuple(p.W.shape)}")
    probs = ad.softmax_rows(ad.add_rowvec(ad.matmul(x, p.W), p.b))
    return ad.flatten(probs) if squeeze else probs


def cross_entropy(probs, onehot):
    """Mean over the batch of -log P[true class]; log clamped at 1e-12."""
    probs, _ = _promote(probs)
    y = np.asarray(onehot.data if isinstance(onehot, ad.Tensor) else onehot)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape != probs.shape:
        raise DimensionError(f"cross_entropy: probs {tuple(probs.shape)} vs "
                             f"labels {tuple(y.shape)}")
    y_const = ad.constant(y.astype(probs.dtype))
    total = ad.sum_all(ad.mul(y_const, ad.log(ad.clamp_min(probs, 1e-12))))
    return ad.scale(total, -1.0 / probs.shape[0])


def joint_loss(j_subj, j_pol, w_subj=1.0, w_pol=1.0):
    if w_subj < 0 or w_pol < 0:
        raise ConfigError(f"loss weights must be >= 0, got "
                          f"({w_subj}, {w_pol})")
    return ad.add(ad.scale(j_subj, w_subj), ad.scale(j_pol, w_pol))


def predictions(probs):
    """Argmax class per row; ties resolve toward the lower index."""
    arr = probs.data if isinstance(probs, ad.Tensor) else np.asarray(probs)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr.argmax(axis=1)


def _promote(x):
    if x.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


# ---------------------------------------------------------------------------
# parameter construction


def _init_array(name, shape, seed, kind):
    rng = derive_rng(seed, INIT, name_tag(name))
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "embed":
        return rng.uniform(-0.05, 0.05, size=shape)
    # glorot uniform; rank-3 tensors use their two trailing fans
    fans = shape if len(shape) == 2 else (shape[-2], shape[-1]) \
        if len(shape) == 3 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fans[0] + fans[1]))
    return rng.uniform(-limit, limit, size=shape)


_LSTM_INIT_KINDS = {name: ("zeros" if name.startswith("w_c")
                           else "ones" if name == "b_f"
                           else "zeros" if name.startswith("b_")
                           else "glorot")
                    for name in LSTM_PARAM_NAMES}
_LSTM_SHAPES = {
    **{n: "x" for n in ("W_xi", "W_xf", "W_xc", "W_xo")},
    **{n: "h" for n in ("W_hi", "W_hf", "W_hc", "W_ho")},
    **{n: "v" for n in ("w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o")},
}


@dataclass
class TaskSetup:
    """What the model needs to know about one task's input side."""

    task: str
    max_len: int
    emb_dim: int
    vocab_size: int = 0              # 0 => precomputed-embedding mode
    emb_init: np.ndarray = None      # optional [V, emb_dim] starting table


class JointModel:
    """Holds every trainable tensor plus the forward graph builders."""

    def __init__(self, cfg, setups):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.float64 if cfg.float64 else np.float32
        self.tasks = cfg.tasks()
        by_task = {s.task: s for s in setups}
        missing = [t for t in self.tasks if t not in by_task]
        if missing:
            raise ConfigError(f"mode {cfg.mode} needs task setups for "
                              f"{missing}")
        self._ledger = []
        self.encoders = {}
        for task in self.tasks:
            self.encoders[task] = self._build_encoder(by_task[task])
        self.use_ntn = cfg.use_ntn and len(self.tasks) == 2
        self.ntn = self._build_ntn() if self.use_ntn else None
        head_in = cfg.repr_size + (cfg.ntn_size if self.use_ntn else 0)
        self.heads = {}
        for task in self.tasks:
            self.heads[task] = HeadParams(
                W=self._param(f"head.{task}.W", (head_in, cfg.num_classes),
                              "glorot"),
                b=self._param(f"head.{task}.b", (cfg.num_classes,), "zeros"))

    def _param(self, name, shape, kind, init_data=None):
        data = init_data if init_data is not None else \
            _init_array(name, shape, self.cfg.seed, kind)
        t = ad.parameter(np.asarray(data), name=name, dtype=self.dtype)
        if tuple(t.shape) != tuple(shape):
            raise ConfigError(f"{name}: initial data {tuple(t.shape)} does "
                              f"not match expected {tuple(shape)}")
        self._ledger.append((name, t))
        return t

    def _build_lstm(self, prefix, d_in, hidden):
        shapes = {"x": (d_in, hidden), "h": (hidden, hidden), "v": (hidden,)}
        tensors = {}
        for pname in LSTM_PARAM_NAMES:
            full = f"{prefix}.{pname}"
            tensors[pname] = self._param(full, shapes[_LSTM_SHAPES[pname]],
                                         _LSTM_INIT_KINDS[pname])
        return LstmParams(**tensors)

    def _build_encoder(self, setup):
        cfg = self.cfg
        task = setup.task
        embedding = None
        if setup.vocab_size:
            if setup.emb_init is not None:
                if setup.emb_init.shape != (setup.vocab_size, setup.emb_dim):
                    raise ConfigError(
                        f"{task}: embedding table {setup.emb_init.shape} vs "
                        f"vocab {setup.vocab_size} x dim {setup.emb_dim}")
                embedding = self._param(f"{task}.embedding",
                                        setup.emb_init.shape, "embed",
                                        init_data=setup.emb_init)
            else:
                embedding = self._param(f"{task}.embedding",
                                        (setup.vocab_size, setup.emb_dim),
                                        "embed")
        two_h = 2 * cfg.hidden_size
        return TaskEncoderParams(
            embedding=embedding,
            lstm_fwd=self._build_lstm(f"{task}.lstm.fwd", setup.emb_dim,
                                      cfg.hidden_size),
            lstm_bwd=self._build_lstm(f"{task}.lstm.bwd", setup.emb_dim,
                                      cfg.hidden_size),
            tdfc_W=self._param(f"{task}.tdfc.W", (two_h, cfg.tdfc_size),
                               "glorot"),
            tdfc_b=self._param(f"{task}.tdfc.b", (cfg.tdfc_size,), "zeros"),
            attn_W_att=self._param(f"{task}.attn.W_att", (cfg.tdfc_size, 1),
                                   "glorot"),
            attn_W_alpha=self._param(f"{task}.attn.W_alpha",
                                     (setup.max_len, setup.max_len), "glorot"),
            fc1_W=self._param(f"{task}.fc1.W", (cfg.tdfc_size, cfg.fc_size),
                              "glorot"),
            fc1_b=self._param(f"{task}.fc1.b", (cfg.fc_size,), "zeros"),
            fc2_W=self._param(f"{task}.fc2.W", (cfg.fc_size, cfg.repr_size),
                              "glorot"),
            fc2_b=self._param(f"{task}.fc2.b", (cfg.repr_size,), "zeros"),
        )

    def _build_ntn(self):
        cfg = self.cfg
        return NtnParams(
            T=self._param("ntn.T", (cfg.ntn_size, cfg.fc_size, cfg.fc_size),
                          "glorot"),
            W=self._param("ntn.W", (2 * cfg.fc_size, cfg.ntn_size), "glorot"),
            b=self._param("ntn.b", (cfg.ntn_size,), "zeros"),
        )

    # -- parameter plumbing --------------------------------------------

    def parameters(self):
        return list(self._ledger)

    def zero_grad(self):
        for _, t in self._ledger:
            t.zero_grad()

    def state_arrays(self):
        """Ordered (name, float32 array) pairs for checkpointing."""
        return [(name, np.asarray(t.data, dtype=np.float32))
                for name, t in self._ledger]

    def load_state(self, arrays):
        """arrays: name -> ndarray; names must match the ledger exactly."""
        known = dict(self._ledger)
        for name in arrays:
            if name not in known:
                raise ConfigError(f"checkpoint tensor {name!r} is not a "
                                  f"model parameter")
        for name, t in self._ledger:
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ConfigError(f"checkpoint tensor {name!r} has shape "
                                  f"{arr.shape}, model expects {t.data.shape}")
            t.data[...] = arr

    # -- forward graphs -------------------------------------------------

    def encode(self, task, batch, mode="eval", rng=None):
        return task_encode(batch, self.encoders[task],
                           dropout=self.cfg.dropout, mode=mode, rng=rng,
                           mask_attention=self.cfg.mask_attention)

    def forward(self, batches, mode="eval", rngs=None, loss_weights=None):
        """batches: task -> EncodedBatch (both tasks when fusing).

        Returns dict with per-task probs/losses and the combined 'joint'
        loss tensor (the single loss in single-task modes).
        """
        weights = dict(loss_weights or {})
        weights.setdefault(POL, self.cfg.loss_weight_pol)
        weights.setdefault(SUBJ, self.cfg.loss_weight_subj)
        enc = {}
        for task in self.tasks:
            if task not in batches:
                raise ConfigError(f"forward: mode {self.cfg.mode} needs a "
                                  f"{task} batch")
            rng = rngs.get(task) if rngs else None
            enc[task] = self.encode(task, batches[task], mode=mode, rng=rng)
        fused = None
        if self.use_ntn:
            fused = ntn_fuse(enc[SUBJ][0], enc[POL][0], self.ntn)
        probs, losses = {}, {}
        for task in self.tasks:
            probs[task] = classify_head(enc[task][1], fused, self.heads[task])
            losses[task] = cross_entropy(probs[task], batches[task].labels)
        if len(self.tasks) == 2:
            joint = joint_loss(losses[SUBJ], losses[POL],
                               w_subj=weights[SUBJ], w_pol=weights[POL])
        else:
            joint = losses[self.tasks[0]]
        return {"probs": probs, "losses": losses, "joint": joint,
                "fused": fused, "encoded": enc}
