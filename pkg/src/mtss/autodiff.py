"""Dense tensors with reverse-mode differentiation on an explicit tape.

A forward op computes with numpy and registers itself on the active
ComputationTape via record(); execution order is the topological order, so
backward() is a single reverse sweep over the recorded list. Leaf gradients
accumulate across backward calls (callers zero them between optimizer steps);
gradients of tape-produced tensors are reset at the start of each traversal,
so repeated backward calls double the leaves, which is the accumulation
contract.

Only the broadcasting the model actually needs exists, and it is explicit:
add_rowvec / mul_rowvec for bias rows and peephole vectors. Everything else
demands exact shape agreement so backward rules stay auditable.

Default precision is float32; verification suites switch to float64 via
precision("f64").
"""

import contextlib

import numpy as np

from .errors import DimensionError, NumericsError, UsageError

_DTYPE = np.dtype(np.float32)
_TAPE = None
_CHECK_FINITE = False


def set_default_dtype(dtype):
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(mode):
    """Temporarily switch the default dtype; mode is 'f32', 'f64' or a dtype."""
    names = {"f32": np.float32, "f64": np.float64}
    old = _DTYPE
    set_default_dtype(names.get(mode, mode))
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def finite_checks(enabled=True):
    """Validate every op output for NaN/Inf while active (verification mode)."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tensor:
    """Dense n-d float array, optionally carrying a same-shape grad buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (
                    np.dtype(np.float32), np.dtype(np.float64)):
                dtype = data.dtype
            else:
                dtype = _DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad.fill(0.0)

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"


def parameter(data, name=None, dtype=None):
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def constant(data, name=None, dtype=None):
    return Tensor(data, requires_grad=False, name=name, dtype=dtype)


class _Node:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Recorded operation list; one training step builds and consumes one."""

    def __init__(self):
        self.ops = []
        self._produced = set()

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _TAPE
        _TAPE = self._prev
        return False

    def __len__(self):
        return len(self.ops)

    def backward(self, loss):
        """Reverse sweep from a scalar loss; leaf grads accumulate."""
        if loss.size != 1:
            raise UsageError(
                f"backward expects a scalar loss, got shape {tuple(loss.shape)}")
        if id(loss) not in self._produced:
            raise UsageError("loss was not produced through this tape")
        for node in self.ops:
            node.output.grad.fill(0.0)
        loss.grad += 1.0
        for node in reversed(self.ops):
            node.backward(node.output.grad)


def record(name, inputs, out_data, backward):
    """Wrap an op result; registers on the active tape when grads can flow.

    backward(g) must accumulate into the inputs' grads (use acc_grad). Raises
    NumericsError when finite checking is active and out_data is not finite.
    """
    if _CHECK_FINITE and not np.isfinite(out_data).all():
        raise NumericsError(f"non-finite values in output of {name}")
    tape = _TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        tape.ops.append(_Node(name, inputs, out, backward))
        tape._produced.add(id(out))
        return out
    return Tensor(out_data)


def acc_grad(t, g):
    """Accumulate a same-shape contribution into t.grad (no-op for constants)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _need_same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {tuple(a.shape)} and "
                             f"{tuple(b.shape)} must match")
    if a.dtype != b.dtype:
        raise UsageError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    _need_same_shape(a, b, "add")
    out = a.data + b.data

    def bw(g):
        acc_grad(a, g)
        acc_grad(b, g)

    return record("add", (a, b), out, bw)


def mul(a, b):
    _need_same_shape(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        if a.requires_grad:
            acc_grad(a, g * b.data)
        if b.requires_grad:
            acc_grad(b, g * a.data)

    return record("mul", (a, b), out, bw)


def scale(x, c):
    c = float(c)
    out = x.data * c

    def bw(g):
        acc_grad(x, g * c)

    return record("scale", (x,), out, bw)


def tanh(x):
    out = np.tanh(x.data)

    def bw(g):
        acc_grad(x, g * (1.0 - out * out))

    return record("tanh", (x,), out, bw)


def sigmoid(x):
    out = sigmoid_array(x.data)

    def bw(g):
        acc_grad(x, g * out * (1.0 - out))

    return record("sigmoid", (x,), out, bw)


def sigmoid_array(z):
    # piecewise form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log(x):
    out = np.log(x.data)

    def bw(g):
        acc_grad(x, g / x.data)

    return record("log", (x,), out, bw)


def clamp_min(x, floor):
    floor = float(floor)
    out = np.maximum(x.data, floor)
    passthrough = x.data >= floor

    def bw(g):
        acc_grad(x, g * passthrough)

    return record("clamp_min", (x,), out, bw)


# ---------------------------------------------------------------------------
# row-vector broadcasts (the only broadcasting in the system, kept explicit)


def add_rowvec(x, v):
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: got {tuple(x.shape)} and "
                             f"{tuple(v.shape)}, need [m,n] and [n]")
    out = x.data + v.data

    def bw(g):
        acc_grad(x, g)
        if v.requires_grad:
            acc_grad(v, g.sum(axis=0))

    return record("add_rowvec", (x, v), out, bw)


def mul_rowvec(x, v):
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise DimensionError(f"mul_rowvec: got {tuple(x.shape)} and "
                             f"{tuple(v.shape)}, need [m,n] and [n]")
    out = x.data * v.data

    def bw(g):
        if x.requires_grad:
            acc_grad(x, g * v.data)
        if v.requires_grad:
            acc_grad(v, (g * x.data).sum(axis=0))

    return record("mul_rowvec", (x, v), out, bw)


# ---------------------------------------------------------------------------
# linear algebra / shape


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {tuple(a.shape)} "
                             f"and {tuple(b.shape)}")
    if a.dtype != b.dtype:
        raise UsageError(f"matmul: mixed dtypes {a.dtype} and {b.dtype}")
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            acc_grad(a, g @ b.data.T)
        if b.requires_grad:
            acc_grad(b, a.data.T @ g)

    return record("matmul", (a, b), out, bw)


def softmax_rows(x):
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows: need [m,n], got {tuple(x.shape)}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        acc_grad(x, out * (g - inner))

    return record("softmax_rows", (x,), out, bw)


def concat(a, b, axis):
    if a.ndim != b.ndim:
        raise DimensionError(f"concat: ranks differ, {tuple(a.shape)} vs "
                             f"{tuple(b.shape)}")
    axis = int(axis)
    for ax in range(a.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise DimensionError(f"concat: shapes {tuple(a.shape)} and "
                                 f"{tuple(b.shape)} differ off axis {axis}")
    out = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis]

    def bw(g):
        ga, gb = np.split(g, [split], axis=axis)
        acc_grad(a, ga)
        acc_grad(b, gb)

    return record("concat", (a, b), out, bw)


def slice_axis(x, axis, start, stop):
    axis = int(axis)
    if not (0 <= axis < x.ndim):
        raise DimensionError(f"slice_axis: axis {axis} out of range for "
                             f"shape {tuple(x.shape)}")
    if not (0 <= start < stop <= x.shape[axis]):
        raise DimensionError(f"slice_axis: [{start}:{stop}] outside extent "
                             f"{x.shape[axis]}")
    idx = tuple(slice(None) if ax != axis else slice(start, stop)
                for ax in range(x.ndim))
    out = x.data[idx]

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[idx] += g

    return record("slice_axis", (x,), out, bw)


def flatten(x):
    out = x.data.reshape(-1)
    shape = x.shape

    def bw(g):
        acc_grad(x, g.reshape(shape))

    return record("flatten", (x,), out, bw)


def reshape(x, new_shape):
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != x.size:
        raise DimensionError(f"reshape: {tuple(x.shape)} has {x.size} items, "
                             f"cannot view as {new_shape}")
    out = x.data.reshape(new_shape)
    shape = x.shape

    def bw(g):
        acc_grad(x, g.reshape(shape))

    return record("reshape", (x,), out, bw)


def sum_all(x):
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bw(g):
        acc_grad(x, np.broadcast_to(g, x.shape))

    return record("sum_all", (x,), out, bw)


def gather_rows(table, ids):
    """Row lookup table[ids] -> [n, D]; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if table.ndim != 2 or ids.ndim != 1:
        raise DimensionError(f"gather_rows: need [V,D] table and [n] ids, got "
                             f"{tuple(table.shape)} and {tuple(ids.shape)}")
    out = table.data[ids]

    def bw(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return record("gather_rows", (table,), out, bw)


def seqpool(f, w):
    """Weighted sum over time: f [B,L,D], w [B,L] -> [B,D]."""
    if f.ndim != 3 or w.ndim != 2 or f.shape[:2] != w.shape:
        raise DimensionError(f"seqpool: got {tuple(f.shape)} and "
                             f"{tuple(w.shape)}, need [B,L,D] and [B,L]")
    out = np.einsum("bld,bl->bd", f.data, w.data)

    def bw(g):
        if f.requires_grad:
            acc_grad(f, np.einsum("bd,bl->bld", g, w.data))
        if w.requires_grad:
            acc_grad(w, np.einsum("bd,bld->bl", g, f.data))

    return record("seqpool", (f, w), out, bw)


def bilinear_form(t3, a, b):
    """Batched bilinear forms: out[n,k] = a[n]·T[k]·b[n] for T [K,D1,D2]."""
    if (t3.ndim != 3 or a.ndim != 2 or b.ndim != 2
            or a.shape[1] != t3.shape[1] or b.shape[1] != t3.shape[2]
            or a.shape[0] != b.shape[0]):
        raise DimensionError(f"bilinear_form: got T {tuple(t3.shape)}, "
                             f"a {tuple(a.shape)}, b {tuple(b.shape)}")
    out = np.einsum("bi,kij,bj->bk", a.data, t3.data, b.data)

    def bw(g):
        if t3.requires_grad:
            acc_grad(t3, np.einsum("bk,bi,bj->kij", g, a.data, b.data))
        if a.requires_grad:
            acc_grad(a, np.einsum("bk,kij,bj->bi", g, t3.data, b.data))
        if b.requires_grad:
            acc_grad(b, np.einsum("bk,kij,bi->bj", g, t3.data, a.data))

    return record("bilinear_form", (t3, a, b), out, bw)


# ---------------------------------------------------------------------------
# verification


def grad_check(f, inputs, eps=1e-6):
    """Max relative error between tape gradients and central differences.

    f(*inputs) must rebuild the graph and return a scalar Tensor. All inputs
    must be float64 tensors; eps is the central-difference step. The relative
    error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|,
    1e-8); the max over every coordinate of every input is returned.
    """
    for t in inputs:
        if t.dtype != np.dtype(np.float64):
            raise UsageError("grad_check requires float64 inputs")
        t.zero_grad()
    with finite_checks(True):
        with Tape() as tape:
            loss = f(*inputs)
        tape.backward(loss)
        analytic = [t.grad.copy() for t in inputs]

        worst = 0.0
        for t, ana in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                up = float(f(*inputs).data)
                flat[i] = keep - eps
                down = float(f(*inputs).data)
                flat[i] = keep
                numeric = (up - down) / (2.0 * eps)
                denom = max(abs(ana_flat[i]), abs(numeric), 1e-8)
                err = abs(ana_flat[i] - numeric) / denom
                if err > worst:
                    worst = err
    for t in inputs:
        t.zero_grad()
    return worst
