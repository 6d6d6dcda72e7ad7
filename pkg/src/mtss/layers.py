"""Per-task encoder stack: embedding -> BiLSTM -> TDFC -> attention -> FCs.

Shapes are written [B,L,D] = batch, time, features. Single-example inputs
(rank one lower) are promoted to B=1 and demoted on return, so the layer
functions work both for batched training and for the worked single-sentence
examples in the tests.

bilstm_forward records one fused sequence op per direction on the tape; its
backward is hand-derived truncated-free BPTT over the peephole equations and
is validated against central finite differences by the gradient suite.
lstm_cell_step keeps the primitive-op composition so the two implementations
cross-check each other.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, UsageError

LSTM_PARAM_NAMES = (
    "W_xi", "W_xf", "W_xc", "W_xo",
    "W_hi", "W_hf", "W_hc", "W_ho",
    "w_ci", "w_cf", "w_co",
    "b_i", "b_f", "b_c", "b_o",
)


@dataclass
class LstmParams:
    """One direction of a peephole LSTM; peepholes are elementwise vectors."""

    W_xi: ad.Tensor
    W_xf: ad.Tensor
    W_xc: ad.Tensor
    W_xo: ad.Tensor
    W_hi: ad.Tensor
    W_hf: ad.Tensor
    W_hc: ad.Tensor
    W_ho: ad.Tensor
    w_ci: ad.Tensor
    w_cf: ad.Tensor
    w_co: ad.Tensor
    b_i: ad.Tensor
    b_f: ad.Tensor
    b_c: ad.Tensor
    b_o: ad.Tensor

    def tensors(self):
        return [getattr(self, n) for n in LSTM_PARAM_NAMES]

    @property
    def hidden(self):
        return self.b_i.shape[0]

    @property
    def input_dim(self):
        return self.W_xi.shape[0]


def _promote_matrix(x):
    if x.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def lstm_cell_step(x_t, h_prev, c_prev, p):
    """One peephole step from primitive ops; returns (h_t, c_t).

    i = sig(x W_xi + h W_hi + c*w_ci + b_i), f likewise, g = tanh(x W_xc +
    h W_hc + b_c), c' = f*c + i*g, o = sig(x W_xo + h W_ho + c'*w_co + b_o),
    h' = o * tanh(c').
    """
    x_t, squeeze = _promote_matrix(x_t)
    h_prev, _ = _promote_matrix(h_prev)
    c_prev, _ = _promote_matrix(c_prev)

    def gate(wx, wh, peep, bias, cell):
        pre = ad.add(ad.matmul(x_t, wx), ad.matmul(h_prev, wh))
        if cell is not None:
            pre = ad.add(pre, ad.mul_rowvec(cell, peep))
        return ad.add_rowvec(pre, bias)

    i_t = ad.sigmoid(gate(p.W_xi, p.W_hi, p.w_ci, p.b_i, c_prev))
    f_t = ad.sigmoid(gate(p.W_xf, p.W_hf, p.w_cf, p.b_f, c_prev))
    g_t = ad.tanh(gate(p.W_xc, p.W_hc, None, p.b_c, None))
    c_t = ad.add(ad.mul(f_t, c_prev), ad.mul(i_t, g_t))
    o_t = ad.sigmoid(gate(p.W_xo, p.W_ho, p.w_co, p.b_o, c_t))
    h_t = ad.mul(o_t, ad.tanh(c_t))
    if squeeze:
        h_t = ad.flatten(h_t)
        c_t = ad.flatten(c_t)
    return h_t, c_t


def lstm_sequence(x_seq, p, reverse=False):
    """Run one direction over x_seq [B,L,D] from zero state -> [B,L,H].

    Recorded as a single tape op; forward caches the per-step gate
    activations the hand-derived backward needs.
    """
    if x_seq.ndim != 3:
        raise DimensionError(f"lstm_sequence: need [B,L,D], got "
                             f"{tuple(x_seq.shape)}")
    n_batch, n_steps, _ = x_seq.shape
    hidden = p.hidden
    if x_seq.shape[2] != p.input_dim:
        raise DimensionError(f"lstm_sequence: input dim {x_seq.shape[2]} vs "
                             f"weights expecting {p.input_dim}")

    w_x4 = np.concatenate([p.W_xi.data, p.W_xf.data, p.W_xc.data, p.W_xo.data],
                          axis=1)
    w_h4 = np.concatenate([p.W_hi.data, p.W_hf.data, p.W_hc.data, p.W_ho.data],
                          axis=1)
    b4 = np.concatenate([p.b_i.data, p.b_f.data, p.b_c.data, p.b_o.data])
    w_ci, w_cf, w_co = p.w_ci.data, p.w_cf.data, p.w_co.data

    x2 = x_seq.data.reshape(n_batch * n_steps, -1)
    z_all = (x2 @ w_x4 + b4).reshape(n_batch, n_steps, 4 * hidden)

    times = list(range(n_steps - 1, -1, -1) if reverse else range(n_steps))
    shape = (n_steps, n_batch, hidden)
    sav_i = np.empty(shape, dtype=x2.dtype)
    sav_f = np.empty_like(sav_i)
    sav_g = np.empty_like(sav_i)
    sav_o = np.empty_like(sav_i)
    sav_tc = np.empty_like(sav_i)
    sav_cp = np.empty_like(sav_i)
    sav_hp = np.empty_like(sav_i)
    sav_c = np.empty_like(sav_i)
    out = np.empty((n_batch, n_steps, hidden), dtype=x2.dtype)

    h = np.zeros((n_batch, hidden), dtype=x2.dtype)
    c = np.zeros_like(h)
    for s, t in enumerate(times):
        z = z_all[:, t, :] + h @ w_h4
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        i = ad.sigmoid_array(zi + c * w_ci)
        f = ad.sigmoid_array(zf + c * w_cf)
        g = np.tanh(zg)
        sav_cp[s], sav_hp[s] = c, h
        c = f * c + i * g
        o = ad.sigmoid_array(zo + c * w_co)
        tc = np.tanh(c)
        h = o * tc
        sav_i[s], sav_f[s], sav_g[s], sav_o[s] = i, f, g, o
        sav_tc[s], sav_c[s] = tc, c
        out[:, t, :] = h

    def bw(g_out):
        d_z = np.zeros((n_batch, n_steps, 4 * hidden), dtype=x2.dtype)
        d_wh4 = np.zeros_like(w_h4)
        d_wci = np.zeros(hidden, dtype=x2.dtype)
        d_wcf = np.zeros_like(d_wci)
        d_wco = np.zeros_like(d_wci)
        dh_rec = np.zeros((n_batch, hidden), dtype=x2.dtype)
        dc_rec = np.zeros_like(dh_rec)
        for s in range(n_steps - 1, -1, -1):
            t = times[s]
            i, f, g, o = sav_i[s], sav_f[s], sav_g[s], sav_o[s]
            tc, c_prev, h_prev, c_cur = (sav_tc[s], sav_cp[s], sav_hp[s],
                                         sav_c[s])
            dh = g_out[:, t, :] + dh_rec
            do = dh * tc
            dzo = do * o * (1.0 - o)
            dc = dh * o * (1.0 - tc * tc) + dc_rec + dzo * w_co
            df = dc * c_prev
            dzf = df * f * (1.0 - f)
            di = dc * g
            dzi = di * i * (1.0 - i)
            dg = dc * i
            dzg = dg * (1.0 - g * g)
            d_wco += (dzo * c_cur).sum(axis=0)
            d_wci += (dzi * c_prev).sum(axis=0)
            d_wcf += (dzf * c_prev).sum(axis=0)
            dc_rec = dc * f + dzi * w_ci + dzf * w_cf
            dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
            d_wh4 += h_prev.T @ dz
            dh_rec = dz @ w_h4.T
            d_z[:, t, :] = dz
        dz2 = d_z.reshape(n_batch * n_steps, 4 * hidden)
        d_wx4 = x2.T @ dz2
        db4 = dz2.sum(axis=0)
        for k, (wx, wh, b) in enumerate(
                zip((p.W_xi, p.W_xf, p.W_xc, p.W_xo),
                    (p.W_hi, p.W_hf, p.W_hc, p.W_ho),
                    (p.b_i, p.b_f, p.b_c, p.b_o))):
            sl = slice(k * hidden, (k + 1) * hidden)
            ad.acc_grad(wx, d_wx4[:, sl])
            ad.acc_grad(wh, d_wh4[:, sl])
            ad.acc_grad(b, db4[sl])
        ad.acc_grad(p.w_ci, d_wci)
        ad.acc_grad(p.w_cf, d_wcf)
        ad.acc_grad(p.w_co, d_wco)
        if x_seq.requires_grad:
            ad.acc_grad(x_seq, (dz2 @ w_x4.T).reshape(x_seq.shape))

    return ad.record("lstm_sequence", (x_seq, *p.tensors()), out, bw)


def bilstm_forward(emb, mask, p_fwd, p_bwd):
    """[B,L,D] -> [B,L,2H]: forward and reversed-direction states per step.

    Masked timesteps are still computed; padding is handled downstream at the
    attention pooling. mask is accepted to keep the call sites uniform.
    """
    del mask
    emb, squeeze = _promote_rank3(emb)
    fwd = lstm_sequence(emb, p_fwd, reverse=False)
    bwd = lstm_sequence(emb, p_bwd, reverse=True)
    out = ad.concat(fwd, bwd, axis=2)
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    return out


def _promote_rank3(x):
    if x.ndim == 2:
        return ad.reshape(x, (1,) + tuple(x.shape)), True
    if x.ndim != 3:
        raise DimensionError(f"expected [B,L,D] or [L,D], got {tuple(x.shape)}")
    return x, False


def time_distributed_fc(h_seq, weight, bias):
    """Same affine + tanh applied at every timestep: [...,L,K] -> [...,L,M]."""
    h_seq, squeeze = _promote_rank3(h_seq)
    n_batch, n_steps, k = h_seq.shape
    flat = ad.reshape(h_seq, (n_batch * n_steps, k))
    out = ad.tanh(ad.add_rowvec(ad.matmul(flat, weight), bias))
    out = ad.reshape(out, (n_batch, n_steps, weight.shape[1]))
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    return out


def dropout_apply(x, rate, mode, rng=None):
    """Inverted dropout; identity at rate 0 and in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be train or eval, got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    keep /= (1.0 - rate)
    return ad.mul(x, ad.constant(keep))


def self_attention(f_seq, mask, w_att, w_alpha, masked=True):
    """Pooled self-attention over TDFC features.

    P = tanh(F W_att) [B,L]; logits = P W_alpha [B,L]; alpha = row softmax
    with masked positions pushed to -1e9 (off when masked=False for the
    literal unmasked form); s = sum_t alpha_t F_t. Returns (s [B,D], alpha
    [B,L]); single-example inputs come back rank-1.
    """
    f_seq, squeeze = _promote_rank3(f_seq)
    n_batch, n_steps, feat = f_seq.shape
    mask = np.asarray(mask)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != (n_batch, n_steps):
        raise DimensionError(f"self_attention: mask {mask.shape} vs sequence "
                             f"({n_batch},{n_steps})")
    if masked and (mask.sum(axis=1) == 0).any():
        raise UsageError("self_attention: a mask row has no attendable tokens")
    if w_alpha.shape != (n_steps, n_steps):
        raise DimensionError(f"self_attention: W_alpha {tuple(w_alpha.shape)} "
                             f"does not match L={n_steps}")
    flat = ad.reshape(f_seq, (n_batch * n_steps, feat))
    p_col = ad.tanh(ad.matmul(flat, w_att))  # [B*L,1]
    p_rows = ad.reshape(p_col, (n_batch, n_steps))
    logits = ad.matmul(p_rows, w_alpha)
    if masked:
        bias = (mask.astype(flat.dtype) - 1.0) * 1e9
        logits = ad.add(logits, ad.constant(bias))
    alpha = ad.softmax_rows(logits)
    pooled = ad.seqpool(f_seq, alpha)
    if squeeze:
        pooled = ad.flatten(pooled)
        alpha = ad.flatten(alpha)
    return pooled, alpha


@dataclass
class TaskEncoderParams:
    """Everything one task's encoder owns; embedding is None in
    precomputed-embedding mode."""

    embedding: ad.Tensor
    lstm_fwd: LstmParams
    lstm_bwd: LstmParams
    tdfc_W: ad.Tensor
    tdfc_b: ad.Tensor
    attn_W_att: ad.Tensor
    attn_W_alpha: ad.Tensor
    fc1_W: ad.Tensor
    fc1_b: ad.Tensor
    fc2_W: ad.Tensor
    fc2_b: ad.Tensor

    @property
    def dtype(self):
        return self.tdfc_W.dtype


def task_encode(batch, params, dropout=0.0, mode="eval", rng=None,
                mask_attention=True):
    """Encode one task batch: returns (Fn [B,D_a], X [B,D_t], alpha [B,L]).

    Fn is the pre-final-FC vector the tensor fusion consumes; X feeds the
    task's softmax head. The flatten step is shape normalization only, since
    attention already pools the sequence to a vector.
    """
    n_batch, n_steps = batch.mask.shape
    if batch.ids is not None:
        if params.embedding is None:
            raise ConfigError("token-id batch given to an encoder without an "
                              "embedding table")
        flat_ids = batch.ids.reshape(-1)
        emb2 = ad.gather_rows(params.embedding, flat_ids)
        emb = ad.reshape(emb2, (n_batch, n_steps, params.embedding.shape[1]))
    else:
        emb = ad.constant(np.asarray(batch.embeddings, dtype=params.dtype))
    if mask_attention:
        # zero padded positions before the recurrence so the pooled output
        # cannot depend on whatever values the pad slots carry
        mask3 = np.broadcast_to(
            batch.mask.astype(params.dtype)[:, :, None], emb.shape).copy()
        emb = ad.mul(emb, ad.constant(mask3))
    h_seq = bilstm_forward(emb, batch.mask, params.lstm_fwd, params.lstm_bwd)
    f_seq = time_distributed_fc(h_seq, params.tdfc_W, params.tdfc_b)
    f_seq = dropout_apply(f_seq, dropout, mode, rng)
    pooled, alpha = self_attention(f_seq, batch.mask, params.attn_W_att,
                                   params.attn_W_alpha, masked=mask_attention)
    hid = ad.tanh(ad.add_rowvec(ad.matmul(pooled, params.fc1_W), params.fc1_b))
    hid = dropout_apply(hid, dropout, mode, rng)
    fn = ad.reshape(hid, (n_batch, hid.shape[1]))  # Flatten step
    x_out = ad.tanh(ad.add_rowvec(ad.matmul(fn, params.fc2_W), params.fc2_b))
    return fn, x_out, alpha
