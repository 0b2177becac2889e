"""Reverse-mode automatic differentiation over dense numpy arrays.

Define-by-run: every op builds a node recording its parents and a closure
that maps the output gradient to parent gradients. `backward` walks the
graph once in reverse topological order. The op vocabulary is closed and
small, exactly what a Transformer encoder-decoder needs (see OPS at the
bottom of this module).

The `trainable` flag on a Tensor is advisory for the optimizer only.
Gradients always flow through frozen tensors; freezing a module means the
optimizer skips its update, not that backprop stops at its boundary.

Float64 is used for gradient checking; training runs in float32. Ops
preserve the dtype of their inputs.
"""

import math

import numpy as np

from . import _kernels as K


class Node:
    __slots__ = ("op", "parents", "bwd")

    def __init__(self, op, parents, bwd):
        self.op = op
        self.parents = parents
        self.bwd = bwd


class Tensor:
    """A dense array plus optional gradient and graph backpointer."""

    __slots__ = ("data", "grad", "trainable", "node", "name")

    def __init__(self, data, trainable=False, name=None, node=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.trainable = trainable
        self.node = node
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = self.name or (self.node.op if self.node else "leaf")
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"


def _out(data, op, parents, bwd):
    return Tensor(data, node=Node(op, parents, bwd))


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# ops


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul requires operands of rank >= 2")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = _reduce_to(np.matmul(g, _swap(b.data)), a.data.shape)
        gb = _reduce_to(np.matmul(_swap(a.data), g), b.data.shape)
        return ga, gb

    return _out(out, "matmul", (a, b), bwd)


def add(a, b):
    out = a.data + b.data

    def bwd(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return _out(out, "add", (a, b), bwd)


def subtract(a, b):
    out = a.data - b.data

    def bwd(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)

    return _out(out, "subtract", (a, b), bwd)


def multiply(a, b):
    out = a.data * b.data

    def bwd(g):
        return (_reduce_to(g * b.data, a.data.shape),
                _reduce_to(g * a.data, b.data.shape))

    return _out(out, "multiply", (a, b), bwd)


def absolute(a):
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        return (g * sign,)

    return _out(out, "absolute", (a,), bwd)


def relu(a):
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _out(out, "relu", (a,), bwd)


def softmax(a):
    """Softmax over the last axis."""
    shape = a.data.shape
    x2 = np.ascontiguousarray(a.data.reshape(-1, shape[-1]))
    y2 = K.softmax2d(x2)
    out = y2.reshape(shape)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        return (K.softmax2d_grad(y2, g2).reshape(shape),)

    return _out(out, "softmax", (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    shape = a.data.shape
    d = shape[-1]
    x2 = np.ascontiguousarray(a.data.reshape(-1, d))
    out2, xhat, rstd = K.layernorm2d(x2, gain.data, bias.data, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = K.layernorm2d_grad(g2, xhat, rstd, gain.data)
        return dx.reshape(shape), dgain, dbias

    return _out(out2.reshape(shape), "layer_norm", (a, gain, bias), bwd)


def embedding(table, ids):
    """Row lookup. `ids` is a plain integer array, not a Tensor."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _out(out, "embedding", (table,), bwd)


def concatenate(tensors, axis=-1):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p)
                     for p in np.split(g, splits, axis=axis))

    return _out(out, "concatenate", tuple(tensors), bwd)


def masked_mean(a, mask):
    """Mean over positions where mask is true: (B,S,D), (B,S) -> (B,D)."""
    if a.data.ndim != 3:
        raise ValueError("masked_mean expects a rank-3 input")
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("masked_mean: a row has no unmasked positions")
    m = mask[:, :, None]
    denom = counts[:, None].astype(a.data.dtype)
    out = (a.data * m).sum(axis=1) / denom

    def bwd(g):
        return ((g[:, None, :] / denom[:, None, :]) * m,)

    return _out(out, "masked_mean", (a,), bwd)


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over the last two axes.

    q: (..., Sq, dh), k/v: (..., Sk, dh). `mask`, when given, is a plain
    additive array broadcastable to (..., Sq, Sk); use a large negative
    value (not -inf, which would poison the softmax backward) to block
    a position.
    """
    dh = q.data.shape[-1]
    inv = 1.0 / math.sqrt(dh)
    scores = np.matmul(q.data, _swap(k.data)) * inv
    if mask is not None:
        scores = scores + mask
    sk = scores.shape[-1]
    attn2 = K.softmax2d(np.ascontiguousarray(scores.reshape(-1, sk)))
    attn = attn2.reshape(scores.shape)
    out = np.matmul(attn, v.data)

    def bwd(g):
        dattn = np.matmul(g, _swap(v.data))
        dv = _reduce_to(np.matmul(_swap(attn), g), v.data.shape)
        dscores = K.softmax2d_grad(
            attn2, np.ascontiguousarray(dattn.reshape(-1, sk))
        ).reshape(scores.shape)
        dq = _reduce_to(np.matmul(dscores, k.data) * inv, q.data.shape)
        dk = _reduce_to(np.matmul(_swap(dscores), q.data) * inv, k.data.shape)
        return dq, dk, dv

    return _out(out, "attention", (q, k, v), bwd)


def dropout(a, p, rng):
    """Train-mode dropout with an explicit generator. Identity when p <= 0.

    Evaluation-mode callers simply skip the call, so there is no `train`
    flag here.
    """
    if p <= 0.0:
        return a
    keep = rng.random(a.data.shape) >= p
    scale = 1.0 / (1.0 - p)
    out = a.data * keep * scale

    def bwd(g):
        return (g * keep * scale,)

    return _out(out, "dropout", (a,), bwd)


def cross_entropy(logits, targets, pad_id):
    """Mean negative log-softmax of target ids over non-pad positions.

    logits: (positions, vocab) Tensor. targets: integer sequence, same
    length as positions. Positions whose target equals pad_id contribute
    nothing to the value or the gradient.
    """
    if logits.data.ndim != 2:
        raise ValueError("cross_entropy expects (positions, vocab) logits")
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    valid = targets != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is padding")
    vocab = logits.data.shape[1]
    seen = targets[valid]
    if seen.min() < 0 or seen.max() >= vocab:
        raise ValueError("cross_entropy: target id outside [0, vocab)")
    total, probs = K.cross_entropy2d(
        np.ascontiguousarray(logits.data), targets, valid)
    loss = np.asarray(total / n_valid, dtype=np.float64)

    def bwd(g):
        scale = float(g) / n_valid
        return (K.cross_entropy2d_grad(probs, targets, valid, scale),)

    return _out(loss, "cross_entropy", (logits,), bwd)


# ---------------------------------------------------------------------------
# shape/scalar plumbing (not part of the op vocabulary proper)


def scale(a, s):
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _out(a.data * s, "scale", (a,), bwd)


def add_const(a, c):
    """Add a non-differentiable constant array (positional encodings etc.)."""
    c = np.asarray(c, dtype=a.data.dtype)

    def bwd(g):
        return (_reduce_to(g, a.data.shape),)

    return _out(a.data + c, "add_const", (a,), bwd)


def reshape(a, shape):
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _out(np.ascontiguousarray(a.data).reshape(shape),
                "reshape", (a,), bwd)


def swap_axes(a, ax1, ax2):
    def bwd(g):
        return (np.ascontiguousarray(np.swapaxes(g, ax1, ax2)),)

    return _out(np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)),
                "swap_axes", (a,), bwd)


def sum_all(a):
    def bwd(g):
        return (np.full(a.data.shape, float(g), dtype=a.data.dtype),)

    return _out(np.asarray(a.data.sum(), dtype=np.float64),
                "sum_all", (a,), bwd)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss, params=None):
    """Populate .grad for every tensor reachable from `loss`.

    Returns a dict mapping Tensor -> gradient array. When `params` is
    given the dict covers exactly those tensors, with zeros for any that
    the loss does not depend on; otherwise it covers every reachable
    tensor. Two runs over the same graph produce bit-identical results.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")

    # Post-order DFS with an explicit stack; leaves come first.
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None or t.node is None:
            continue
        parent_grads = t.node.bwd(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg

    for t in order:
        t.grad = grads.get(id(t))

    if params is None:
        return {t: grads[id(t)] for t in order if id(t) in grads}
    out = {}
    for p in params:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
            p.grad = g
        out[p] = g
    return out


def finite_diff_check(f, params, eps=1e-5, max_coords=20, seed=0):
    """Max relative error between analytic and central-difference grads.

    `f` is a zero-argument callable returning a scalar Tensor, closing
    over `params`; it is re-evaluated with individual coordinates nudged
    by ±eps. Checks every coordinate of a parameter when it has at most
    `max_coords`, otherwise a deterministic random sample of that size.
    Use float64 parameters; float32 drowns the difference quotient in
    rounding noise.
    """
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ValueError("finite_diff_check: non-finite loss at base point")
    backward(loss, params=params)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for pi, (p, an) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        aflat = an.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + eps
            fp = float(f().data)
            flat[i] = keep - eps
            fm = float(f().data)
            flat[i] = keep
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise ValueError(
                    f"finite_diff_check: non-finite value at param {pi}, "
                    f"coordinate {i}")
            numeric = (fp - fm) / (2.0 * eps)
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst


# The closed forward-op vocabulary.
OPS = {
    "matmul": matmul,
    "add": add,
    "multiply": multiply,
    "subtract": subtract,
    "absolute": absolute,
    "relu": relu,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "embedding": embedding,
    "concatenate": concatenate,
    "masked_mean": masked_mean,
    "attention": attention,
    "dropout": dropout,
    "cross_entropy": cross_entropy,
}
