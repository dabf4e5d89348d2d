"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Ops execute eagerly on numpy and append a backward closure to an explicit
Tape. backward(tape, loss) replays the tape once in reverse and accumulates
gradients into every requires_grad tensor reachable from the loss. Passing
tape=None runs the same forward math without recording (evaluation mode).

All reductions that combine contributions from several graph edges use a
fixed (destination, source) ordering so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .rng import as_generator

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "relu",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "mean_pool_rows",
    "sum_all",
    "dropout",
    "cross_entropy",
    "sparse_aggregate",
    "segment_sum_rows",
    "softmax_segments",
    "sum_col_blocks",
    "expand_col_blocks",
    "layer_norm",
]


class Tensor:
    """Dense 2-D float64 array with gradient bookkeeping.

    Scalars are stored as (1, 1), flat sequences as a single row. grad stays
    None until backward() deposits an array of identical shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1-element tensor, got {self.shape}")
        return float(self.data.flat[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("op", "inputs", "out", "grad_fn")

    def __init__(self, op, inputs, out, grad_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of executed ops; every node's inputs precede it."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)


def _record(tape, op, inputs, out, grad_fn):
    if tape is not None and out.requires_grad:
        tape.nodes.append(TapeNode(op, inputs, out, grad_fn))


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _int_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a flat index array, got shape {arr.shape}")
    return arr


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    Walks the tape in reverse, touching each recorded node at most once.
    Repeated calls accumulate, so two backward passes double the gradients.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    flow: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        gout = flow.pop(id(node.out), None)
        if gout is None:
            continue
        owners.pop(id(node.out), None)
        out = node.out
        out.grad = gout.copy() if out.grad is None else out.grad + gout
        for t, g in zip(node.inputs, node.grad_fn(gout)):
            if g is None or not t.requires_grad:
                continue
            k = id(t)
            if k in flow:
                flow[k] = flow[k] + g
            else:
                flow[k] = g
                owners[k] = t
    for k, g in flow.items():
        t = owners[k]
        # copy: ops may pass gout through unchanged, and leaf grads must
        # never alias each other (callers scale them in place)
        t.grad = g.copy() if t.grad is None else t.grad + g


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_needs(a, b))

    def grad_fn(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    _record(tape, "matmul", (a, b), out, grad_fn)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum; a single-row operand broadcasts over the other's rows."""
    if a.shape == b.shape:
        mode = "same"
    elif b.rows == 1 and b.cols == a.cols:
        mode = "bias_b"
    elif a.rows == 1 and a.cols == b.cols:
        mode = "bias_a"
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=_needs(a, b))

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = g.sum(axis=0, keepdims=True) if mode == "bias_a" else g
        if b.requires_grad:
            gb = g.sum(axis=0, keepdims=True) if mode == "bias_b" else g
        return ga, gb

    _record(tape, "add", (a, b), out, grad_fn)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data, requires_grad=_needs(a, b))

    def grad_fn(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    _record(tape, "mul", (a, b), out, grad_fn)
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    """Multiply every entry by the constant c."""
    c = float(c)
    out = Tensor(a.data * c, requires_grad=a.requires_grad)
    _record(tape, "scale", (a,), out, lambda g: (g * c,))
    return out


def relu(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    _record(tape, "relu", (a,), out, grad_fn)
    return out


def concat_cols(parts: list[Tensor], tape: Tape | None = None) -> Tensor:
    """Stack tensors along the feature axis."""
    if not parts:
        raise ShapeError("concat_cols of an empty list")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ, {p.rows} vs {rows}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1),
                 requires_grad=_needs(*parts))
    widths = [p.cols for p in parts]

    def grad_fn(g):
        grads = []
        offset = 0
        for p, w in zip(parts, widths):
            grads.append(g[:, offset:offset + w] if p.requires_grad else None)
            offset += w
        return tuple(grads)

    _record(tape, "concat_cols", tuple(parts), out, grad_fn)
    return out


def concat_rows(parts: list[Tensor], tape: Tape | None = None) -> Tensor:
    """Stack tensors along the row axis."""
    if not parts:
        raise ShapeError("concat_rows of an empty list")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"concat_rows: column counts differ, {p.cols} vs {cols}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 requires_grad=_needs(*parts))
    heights = [p.rows for p in parts]

    def grad_fn(g):
        grads = []
        offset = 0
        for p, h in zip(parts, heights):
            grads.append(g[offset:offset + h] if p.requires_grad else None)
            offset += h
        return tuple(grads)

    _record(tape, "concat_rows", tuple(parts), out, grad_fn)
    return out


def gather_rows(a: Tensor, idx, tape: Tape | None = None) -> Tensor:
    """Select rows of a by index, with repetition allowed."""
    idx = _int_vector(idx, "idx")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise IndexError(f"gather_rows: index out of range for {a.rows} rows")
    out = Tensor(a.data[idx], requires_grad=a.requires_grad)

    def grad_fn(g):
        return (_scatter_add_rows(np.zeros_like(a.data), idx, g),)

    _record(tape, "gather_rows", (a,), out, grad_fn)
    return out


def mean_pool_rows(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Average node rows into a single 1 x d vector."""
    if a.rows == 0:
        raise ShapeError("mean_pool_rows of an empty tensor")
    out = Tensor(a.data.mean(axis=0, keepdims=True), requires_grad=a.requires_grad)
    n = a.rows

    def grad_fn(g):
        return (np.repeat(g, n, axis=0) / n,)

    _record(tape, "mean_pool_rows", (a,), out, grad_fn)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries, as a 1 x 1 tensor."""
    out = Tensor(np.array([[a.data.sum()]]), requires_grad=a.requires_grad)

    def grad_fn(g):
        return (np.full_like(a.data, g[0, 0]),)

    _record(tape, "sum_all", (a,), out, grad_fn)
    return out


def dropout(a: Tensor, rate: float, mode: str, seed=0,
            tape: Tape | None = None) -> Tensor:
    """Zero entries with probability rate and rescale survivors by 1/(1-rate).

    In eval mode this is the identity (the input tensor itself). seed may be
    an int or a numpy Generator; the same seed reproduces the same mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return a
    rng = as_generator(seed)
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask, requires_grad=a.requires_grad)

    def grad_fn(g):
        return (g * mask,)

    _record(tape, "dropout", (a,), out, grad_fn)
    return out


def cross_entropy(logits: Tensor, labels, tape: Tape | None = None) -> Tensor:
    """Mean negative log-softmax of the true class over the batch rows."""
    labels = _int_vector(labels, "labels")
    b, c = logits.shape
    if labels.size != b:
        raise ShapeError(f"cross_entropy: {b} logit rows but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy: label out of range for {c} classes")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logsumexp = zmax + np.log(ez.sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(b), labels].mean()
    out = Tensor(np.array([[loss]]), requires_grad=logits.requires_grad)
    softmax = ez / ez.sum(axis=1, keepdims=True)

    def grad_fn(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        return (grad * (g[0, 0] / b),)

    _record(tape, "cross_entropy", (logits,), out, grad_fn)
    return out


def _segment_order(segments: np.ndarray):
    """Stable sort by segment id; returns (order, sorted ids, run starts)."""
    order = np.argsort(segments, kind="stable")
    s = segments[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    return order, s, starts


def _scatter_add_rows(target: np.ndarray, idx: np.ndarray, rows: np.ndarray):
    """target[idx[i]] += rows[i], accumulating repeated indices in sorted order."""
    if idx.size == 0:
        return target
    order, s, starts = _segment_order(idx)
    sums = np.add.reduceat(rows[order], starts, axis=0)
    target[s[starts]] += sums
    return target


def sparse_aggregate(edges, weights, h: Tensor, tape: Tape | None = None) -> Tensor:
    """Weighted neighbor sum: out[v] = sum over edges (u -> v) of w * h[u].

    Contributions are summed in (destination, source) order regardless of the
    edge list's ordering, so results are bit-stable. Differentiable in h only;
    weights are plain data.
    """
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        edges = edges.reshape(0, 2)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise ShapeError(f"edges must be (m, 2), got {edges.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (edges.shape[0],):
        raise ShapeError(
            f"weights must match edge count {edges.shape[0]}, got {weights.shape}")
    n = h.rows
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise IndexError(f"edge endpoint out of range for {n} nodes")
    if edges.shape[0] == 0:
        out = Tensor(np.zeros_like(h.data), requires_grad=h.requires_grad)
        _record(tape, "sparse_aggregate", (h,), out,
                lambda g: (np.zeros_like(h.data),))
        return out

    order = np.lexsort((edges[:, 0], edges[:, 1]))
    src = edges[order, 0]
    dst = edges[order, 1]
    w = weights[order]

    contrib = w[:, None] * h.data[src]
    _, s, starts = _segment_order(dst)  # dst already sorted; keeps run starts
    sums = np.add.reduceat(contrib, starts, axis=0)
    data = np.zeros_like(h.data)
    data[s[starts]] = sums
    out = Tensor(data, requires_grad=h.requires_grad)

    def grad_fn(g):
        return (_scatter_add_rows(np.zeros_like(h.data), src,
                                  w[:, None] * g[dst]),)

    _record(tape, "sparse_aggregate", (h,), out, grad_fn)
    return out


def segment_sum_rows(a: Tensor, segments, num_segments: int,
                     tape: Tape | None = None) -> Tensor:
    """Sum rows of a into num_segments buckets given per-row segment ids."""
    segments = _int_vector(segments, "segments")
    if segments.size != a.rows:
        raise ShapeError(f"segments length {segments.size} != rows {a.rows}")
    if segments.size and (segments.min() < 0 or segments.max() >= num_segments):
        raise IndexError(f"segment id out of range for {num_segments} segments")
    data = np.zeros((num_segments, a.cols))
    if segments.size:
        order, s, starts = _segment_order(segments)
        sums = np.add.reduceat(a.data[order], starts, axis=0)
        data[s[starts]] = sums
    out = Tensor(data, requires_grad=a.requires_grad)

    def grad_fn(g):
        return (g[segments],)

    _record(tape, "segment_sum_rows", (a,), out, grad_fn)
    return out


def softmax_segments(scores: Tensor, segments, tape: Tape | None = None) -> Tensor:
    """Softmax within each segment, independently per column.

    Rows are items (edges), columns are independent score sets (attention
    heads). Each segment's outputs sum to 1 per column; shifting all scores
    in a segment by a constant leaves the result unchanged.
    """
    segments = _int_vector(segments, "segments")
    if segments.size != scores.rows:
        raise ShapeError(f"segments length {segments.size} != rows {scores.rows}")
    if scores.rows == 0:
        out = Tensor(np.zeros_like(scores.data), requires_grad=scores.requires_grad)
        _record(tape, "softmax_segments", (scores,), out,
                lambda g: (np.zeros_like(scores.data),))
        return out

    order, s, starts = _segment_order(segments)
    counts = np.diff(np.r_[starts, s.size])
    v = scores.data[order]
    seg_max = np.maximum.reduceat(v, starts, axis=0)
    e = np.exp(v - np.repeat(seg_max, counts, axis=0))
    denom = np.add.reduceat(e, starts, axis=0)
    y_sorted = e / np.repeat(denom, counts, axis=0)
    y = np.empty_like(y_sorted)
    y[order] = y_sorted
    out = Tensor(y, requires_grad=scores.requires_grad)

    def grad_fn(g):
        gs = g[order]
        dot = np.add.reduceat(y_sorted * gs, starts, axis=0)
        ds_sorted = y_sorted * (gs - np.repeat(dot, counts, axis=0))
        ds = np.empty_like(ds_sorted)
        ds[order] = ds_sorted
        return (ds,)

    _record(tape, "softmax_segments", (scores,), out, grad_fn)
    return out


def sum_col_blocks(a: Tensor, num_blocks: int, tape: Tape | None = None) -> Tensor:
    """Sum each contiguous block of columns down to one column per block."""
    if num_blocks < 1 or a.cols % num_blocks != 0:
        raise ShapeError(f"{a.cols} columns not divisible into {num_blocks} blocks")
    width = a.cols // num_blocks
    out = Tensor(a.data.reshape(a.rows, num_blocks, width).sum(axis=2),
                 requires_grad=a.requires_grad)

    def grad_fn(g):
        return (np.repeat(g, width, axis=1),)

    _record(tape, "sum_col_blocks", (a,), out, grad_fn)
    return out


def expand_col_blocks(a: Tensor, width: int, tape: Tape | None = None) -> Tensor:
    """Repeat every column width times (inverse layout of sum_col_blocks)."""
    if width < 1:
        raise ShapeError(f"block width must be >= 1, got {width}")
    out = Tensor(np.repeat(a.data, width, axis=1), requires_grad=a.requires_grad)
    cols = a.cols

    def grad_fn(g):
        return (g.reshape(a.rows, cols, width).sum(axis=2),)

    _record(tape, "expand_col_blocks", (a,), out, grad_fn)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor,
               tape: Tape | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise ShapeError(
            f"layer_norm gain/bias must be (1, {a.cols}), got {gain.shape} / {bias.shape}")
    mean = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv
    out = Tensor(xhat * gain.data + bias.data, requires_grad=_needs(a, gain, bias))

    def grad_fn(g):
        ga = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=0, keepdims=True)
        if bias.requires_grad:
            gbias = g.sum(axis=0, keepdims=True)
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            ga = inv * (dxhat - m1 - xhat * m2)
        return ga, ggain, gbias

    _record(tape, "layer_norm", (a, gain, bias), out, grad_fn)
    return out
