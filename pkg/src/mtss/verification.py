"""64-bit finite-difference suite over every differentiable op.

Each check builds a small random scalar function around one op (or one layer,
or the whole tiny model), runs grad_check, and reports the max relative
error. The CLI gradcheck command prints one row per check and exits nonzero
if any row misses its tolerance.
"""

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .data import EncodedBatch
from .errors import NumericsError
from .layers import (LstmParams, bilstm_forward, dropout_apply,
                     lstm_cell_step, lstm_sequence, self_attention,
                     time_distributed_fc)
from .model import (HeadParams, JointModel, NtnParams, TaskSetup,
                    classify_head, cross_entropy, joint_loss, ntn_fuse)

OP_TOL = 1e-5
END_TO_END_TOL = 1e-4


def _params(rng, *shapes):
    return [ad.parameter(rng.uniform(-0.8, 0.8, s)) for s in shapes]


def _mix(out, rng):
    """Reduce any-shaped output to a scalar with a fixed random weighting."""
    c = ad.constant(rng.uniform(-1.0, 1.0, out.shape))
    return ad.sum_all(ad.mul(out, c))


def _rng(tag):
    return np.random.default_rng(tag)


def check_add():
    rng = _rng(11)
    a, b = _params(rng, (3, 4), (3, 4))
    return ad.grad_check(lambda x, y: _mix(ad.add(x, y), _rng(12)), [a, b])


def check_mul():
    rng = _rng(13)
    a, b = _params(rng, (3, 4), (3, 4))
    return ad.grad_check(lambda x, y: _mix(ad.mul(x, y), _rng(14)), [a, b])


def check_scale():
    rng = _rng(15)
    (a,) = _params(rng, (2, 5))
    return ad.grad_check(lambda x: _mix(ad.scale(x, -1.7), _rng(16)), [a])


def check_add_rowvec():
    rng = _rng(17)
    x, v = _params(rng, (4, 3), (3,))
    return ad.grad_check(lambda a, b: _mix(ad.add_rowvec(a, b), _rng(18)),
                         [x, v])


def check_mul_rowvec():
    rng = _rng(19)
    x, v = _params(rng, (4, 3), (3,))
    return ad.grad_check(lambda a, b: _mix(ad.mul_rowvec(a, b), _rng(20)),
                         [x, v])


def check_matmul():
    rng = _rng(21)
    a, b = _params(rng, (4, 3), (3, 5))
    return ad.grad_check(lambda x, y: _mix(ad.matmul(x, y), _rng(22)), [a, b])


def check_tanh():
    rng = _rng(23)
    (x,) = _params(rng, (3, 3))
    return ad.grad_check(lambda a: _mix(ad.tanh(a), _rng(24)), [x])


def check_sigmoid():
    rng = _rng(25)
    (x,) = _params(rng, (3, 3))
    return ad.grad_check(lambda a: _mix(ad.sigmoid(a), _rng(26)), [x])


def check_log_clamp():
    rng = _rng(27)
    x = ad.parameter(rng.uniform(0.2, 1.5, (3, 4)))
    return ad.grad_check(
        lambda a: _mix(ad.log(ad.clamp_min(a, 1e-12)), _rng(28)), [x])


def check_softmax_rows():
    rng = _rng(29)
    (x,) = _params(rng, (4, 5))
    return ad.grad_check(lambda a: _mix(ad.softmax_rows(a), _rng(30)), [x])


def check_concat():
    rng = _rng(31)
    a, b = _params(rng, (2, 3), (2, 4))
    return ad.grad_check(lambda x, y: _mix(ad.concat(x, y, 1), _rng(32)),
                         [a, b])


def check_slice():
    rng = _rng(33)
    (x,) = _params(rng, (4, 6))
    return ad.grad_check(
        lambda a: _mix(ad.slice_axis(a, 1, 1, 4), _rng(34)), [x])


def check_flatten_reshape():
    rng = _rng(35)
    (x,) = _params(rng, (3, 4))
    return ad.grad_check(
        lambda a: _mix(ad.reshape(ad.flatten(a), (2, 6)), _rng(36)), [x])


def check_sum_all():
    rng = _rng(37)
    (x,) = _params(rng, (3, 3))
    return ad.grad_check(lambda a: ad.sum_all(a), [x])


def check_gather_rows():
    rng = _rng(39)
    (table,) = _params(rng, (6, 4))
    ids = np.array([0, 3, 3, 5, 1])
    return ad.grad_check(
        lambda t: _mix(ad.gather_rows(t, ids), _rng(40)), [table])


def check_seqpool():
    rng = _rng(41)
    f, w = _params(rng, (2, 4, 3), (2, 4))
    return ad.grad_check(lambda a, b: _mix(ad.seqpool(a, b), _rng(42)),
                         [f, w])


def check_bilinear_form():
    rng = _rng(43)
    t3, a, b = _params(rng, (3, 4, 2), (5, 4), (5, 2))
    return ad.grad_check(
        lambda t, x, y: _mix(ad.bilinear_form(t, x, y), _rng(44)), [t3, a, b])


def _lstm_params(rng, d_in, hidden):
    shapes = ([(d_in, hidden)] * 4 + [(hidden, hidden)] * 4
              + [(hidden,)] * 7)
    tensors = _params(rng, *shapes)
    from .layers import LSTM_PARAM_NAMES
    return LstmParams(**dict(zip(LSTM_PARAM_NAMES, tensors)))


def check_lstm_cell_step():
    rng = _rng(45)
    p = _lstm_params(rng, 3, 2)
    x, h, c = _params(rng, (2, 3), (2, 2), (2, 2))
    wrt = [x, h, c] + p.tensors()

    def f(*_):
        h_t, c_t = lstm_cell_step(x, h, c, p)
        return ad.add(_mix(h_t, _rng(46)), _mix(c_t, _rng(47)))

    return ad.grad_check(f, wrt)


def check_lstm_sequence():
    rng = _rng(48)
    p = _lstm_params(rng, 3, 2)
    (x,) = _params(rng, (2, 4, 3))
    wrt = [x] + p.tensors()
    return ad.grad_check(
        lambda *_: _mix(lstm_sequence(x, p, reverse=False), _rng(49)), wrt)


def check_lstm_sequence_reverse():
    rng = _rng(50)
    p = _lstm_params(rng, 2, 3)
    (x,) = _params(rng, (2, 3, 2))
    wrt = [x] + p.tensors()
    return ad.grad_check(
        lambda *_: _mix(lstm_sequence(x, p, reverse=True), _rng(51)), wrt)


def check_bilstm():
    rng = _rng(52)
    p_f = _lstm_params(rng, 2, 2)
    p_b = _lstm_params(rng, 2, 2)
    (x,) = _params(rng, (2, 3, 2))
    mask = np.ones((2, 3), dtype=np.uint8)
    wrt = [x] + p_f.tensors() + p_b.tensors()
    return ad.grad_check(
        lambda *_: _mix(bilstm_forward(x, mask, p_f, p_b), _rng(53)), wrt)


def check_time_distributed_fc():
    rng = _rng(54)
    x, w, b = _params(rng, (2, 3, 4), (4, 3), (3,))
    return ad.grad_check(
        lambda *_: _mix(time_distributed_fc(x, w, b), _rng(55)), [x, w, b])


def check_dropout():
    rng = _rng(56)
    (x,) = _params(rng, (4, 5))

    def f(a):
        # recreated rng per call => identical mask on every evaluation
        out = dropout_apply(a, 0.4, "train", np.random.default_rng(7))
        return _mix(out, _rng(57))

    return ad.grad_check(f, [x])


def check_self_attention():
    rng = _rng(58)
    f3, w_att, w_alpha = _params(rng, (2, 4, 3), (3, 1), (4, 4))
    mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=np.uint8)

    def f(*_):
        pooled, alpha = self_attention(f3, mask, w_att, w_alpha, masked=True)
        return ad.add(_mix(pooled, _rng(59)), _mix(alpha, _rng(60)))

    return ad.grad_check(f, [f3, w_att, w_alpha])


def check_ntn_fuse():
    rng = _rng(61)
    t3, w, b, s1, s2 = _params(rng, (3, 2, 2), (4, 3), (3,), (2, 2), (2, 2))
    p = NtnParams(T=t3, W=w, b=b)
    return ad.grad_check(
        lambda *_: _mix(ntn_fuse(s1, s2, p), _rng(62)), [t3, w, b, s1, s2])


def check_head_cross_entropy():
    rng = _rng(63)
    x, n, w, b = _params(rng, (3, 2), (3, 2), (4, 2), (2,))
    onehot = np.array([[1, 0], [0, 1], [1, 0]], dtype=np.uint8)
    head = HeadParams(W=w, b=b)
    return ad.grad_check(
        lambda *_: cross_entropy(classify_head(x, n, head), onehot),
        [x, n, w, b])


def check_joint_loss():
    rng = _rng(64)
    a, b = _params(rng, (3, 3), (2, 2))
    return ad.grad_check(
        lambda x, y: joint_loss(ad.sum_all(ad.tanh(x)),
                                ad.sum_all(ad.sigmoid(y)), 0.7, 1.3), [a, b])


def tiny_config():
    cfg = ExperimentConfig(
        mode="mtl", embedding="glove", seed=7, epochs=1, batch_size=2,
        max_len_pol=3, max_len_subj=3, emb_dim=2, hidden_size=2, tdfc_size=2,
        fc_size=2, repr_size=2, ntn_size=2, dropout=0.0, float64=True)
    return cfg


def tiny_batches(seed=5):
    rng = np.random.default_rng(seed)
    batches = {}
    for task in ("pol", "subj"):
        ids = rng.integers(1, 7, size=(2, 3)).astype(np.int32)
        mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=np.uint8)
        ids[0, :] *= mask[0]
        ids[1, :] *= mask[1]
        labels = np.zeros((2, 2), dtype=np.uint8)
        labels[0, rng.integers(2)] = 1
        labels[1, rng.integers(2)] = 1
        batches[task] = EncodedBatch(task=task, mask=mask, labels=labels,
                                     record_ids=np.arange(2), ids=ids)
    return batches


def check_end_to_end():
    # generic random parameter values: the training init has zero peepholes
    # and biases, which parks some gradients at the 1e-8 error floor where
    # central differences are pure roundoff; eps widened for the same reason
    cfg = tiny_config()
    model = JointModel(cfg, [TaskSetup("pol", 3, 2, vocab_size=7),
                             TaskSetup("subj", 3, 2, vocab_size=7)])
    rng = _rng(99)
    for _, t in model.parameters():
        t.data[...] = rng.uniform(-0.7, 0.7, t.data.shape)
    batches = tiny_batches()
    wrt = [t for _, t in model.parameters()]
    return ad.grad_check(lambda *_: model.forward(batches)["joint"], wrt,
                         eps=1e-5)


CHECKS = [
    ("add", check_add, OP_TOL),
    ("mul", check_mul, OP_TOL),
    ("scale", check_scale, OP_TOL),
    ("add_rowvec", check_add_rowvec, OP_TOL),
    ("mul_rowvec", check_mul_rowvec, OP_TOL),
    ("matmul", check_matmul, OP_TOL),
    ("tanh", check_tanh, OP_TOL),
    ("sigmoid", check_sigmoid, OP_TOL),
    ("log_clamp", check_log_clamp, OP_TOL),
    ("softmax_rows", check_softmax_rows, OP_TOL),
    ("concat", check_concat, OP_TOL),
    ("slice_axis", check_slice, OP_TOL),
    ("flatten_reshape", check_flatten_reshape, OP_TOL),
    ("sum_all", check_sum_all, OP_TOL),
    ("gather_rows", check_gather_rows, OP_TOL),
    ("seqpool", check_seqpool, OP_TOL),
    ("bilinear_form", check_bilinear_form, OP_TOL),
    ("lstm_cell_step", check_lstm_cell_step, OP_TOL),
    ("lstm_sequence", check_lstm_sequence, OP_TOL),
    ("lstm_sequence_reverse", check_lstm_sequence_reverse, OP_TOL),
    ("bilstm_forward", check_bilstm, OP_TOL),
    ("time_distributed_fc", check_time_distributed_fc, OP_TOL),
    ("dropout_train", check_dropout, OP_TOL),
    ("self_attention", check_self_attention, OP_TOL),
    ("ntn_fuse", check_ntn_fuse, OP_TOL),
    ("head_cross_entropy", check_head_cross_entropy, OP_TOL),
    ("joint_loss", check_joint_loss, OP_TOL),
    ("end_to_end_tiny", check_end_to_end, END_TO_END_TOL),
]


def run_suite(checks=None):
    """Run every check in float64; returns rows of (name, err, tol, ok)."""
    rows = []
    with ad.precision("f64"):
        for name, fn, tol in (checks or CHECKS):
            try:
                err = fn()
                rows.append({"name": name, "max_rel_err": err, "tol": tol,
                             "passed": bool(err < tol), "error": None})
            except NumericsError as exc:
                rows.append({"name": name, "max_rel_err": float("nan"),
                             "tol": tol, "passed": False, "error": str(exc)})
    return rows
