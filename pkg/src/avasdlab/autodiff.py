"""Reverse-mode automatic differentiation over dense float32 arrays.

A minimal define-by-run engine: each operation records its inputs and a
local-gradient rule on the output node, and ``Tensor.backward`` walks the
resulting graph once in reverse topological order. The graph (the "tape")
is rebuilt on every forward pass, which keeps iterative attack loops simple
and makes replays deterministic. Values are stored as row-major float32;
reductions accumulate in float64 before rounding back to float32.

Only the operations needed by the speaker-detection model, its losses and
the input-gradient attacks are provided. Elementwise binary ops require
identical shapes (or a Python scalar / constant ndarray operand); anything
else is rejected with a shape diagnostic.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_node_ids = itertools.count()

# Guards for cosine denominators and vector-norm backward rules.
COSINE_EPS = 1e-8
_NORM_FLOOR = 1e-30


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation's contract."""


class GraphError(RuntimeError):
    """Invalid use of the computation graph.

    Raised for non-scalar losses, repeated backward passes over the same
    graph, and losses that are not connected to any gradient-tracked input.
    """


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Dense float32 value with optional gradient tracking.

    ``data`` is a row-major float32 ndarray, ``grad`` (populated by
    ``backward``) is a same-shape float32 buffer, and ``node_id`` identifies
    the node within the graph built by the current forward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_grad_fn",
                 "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents = ()
        self._grad_fn = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal op instead")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Populate ``grad`` on every gradient-tracked node reachable from here.

        The receiver must be a scalar (size-1) result of a live graph.
        Gradients accumulate additively across fan-out. A second call on the
        same node is rejected: the graph must be rebuilt (a fresh forward
        pass) before differentiating again.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {tuple(self.shape)}")
        if not self.requires_grad:
            raise GraphError("loss is not connected to any gradient-tracked tensor")
        if self._backward_done:
            raise GraphError("backward already ran on this graph; rebuild the forward pass first")
        self._backward_done = True

        # reverse topological order via iterative post-order DFS; nodes are
        # marked visited at expansion (not push) so that a tensor reachable
        # through paths of different depths still lands after all consumers
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._grad_fn is None:
                continue
            for parent, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.node_id = next(_node_ids)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    out._backward_done = False
    return out


def _const_operand(x):
    """Split an operand into (tensor_or_None, constant ndarray)."""
    if isinstance(x, Tensor):
        return x, x.data
    if isinstance(x, (int, float, np.floating, np.integer)):
        return None, np.float32(x)
    return None, _as_f32(x)


def _check_same_shape(op: str, a: np.ndarray, b) -> None:
    if np.ndim(b) == 0:
        return
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {np.shape(b)} do not match")


# elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    ta, da = _const_operand(a)
    tb, db = _const_operand(b)
    if ta is None and tb is None:
        raise TypeError("add needs at least one Tensor operand")
    base = da if ta is not None else db
    _check_same_shape("add", np.asarray(base), db if ta is not None else da)
    data = np.asarray(da + db, dtype=np.float32)
    parents = tuple(t for t in (ta, tb) if t is not None)

    def grad_fn(g):
        return tuple(g for _ in parents)

    return _result(data, parents, grad_fn)


def sub(a, b) -> Tensor:
    ta, da = _const_operand(a)
    tb, db = _const_operand(b)
    if ta is None and tb is None:
        raise TypeError("sub needs at least one Tensor operand")
    _check_same_shape("sub", np.asarray(da if ta is not None else db), db if ta is not None else da)
    data = np.asarray(da - db, dtype=np.float32)

    if ta is not None and tb is not None:
        def grad_fn(g):
            return g, -g
        parents = (ta, tb)
    elif ta is not None:
        def grad_fn(g):
            return (g,)
        parents = (ta,)
    else:
        def grad_fn(g):
            return (-g,)
        parents = (tb,)
    return _result(data, parents, grad_fn)


def mul(a, b) -> Tensor:
    ta, da = _const_operand(a)
    tb, db = _const_operand(b)
    if ta is None and tb is None:
        raise TypeError("mul needs at least one Tensor operand")
    _check_same_shape("mul", np.asarray(da if ta is not None else db), db if ta is not None else da)
    data = np.asarray(da * db, dtype=np.float32)

    if ta is not None and tb is not None:
        def grad_fn(g):
            return g * db, g * da
        parents = (ta, tb)
    elif ta is not None:
        def grad_fn(g):
            return (np.asarray(g * db, dtype=np.float32),)
        parents = (ta,)
    else:
        def grad_fn(g):
            return (np.asarray(g * da, dtype=np.float32),)
        parents = (tb,)
    return _result(data, parents, grad_fn)


def neg(a: Tensor) -> Tensor:
    return _result(np.asarray(-a.data), (a,), lambda g: (-g,))


# linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul needs Tensor operands")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    da, db = a.data, b.data
    data = da @ db

    def grad_fn(g):
        return g @ db.T, da.T @ g

    return _result(data, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got {a.shape}")
    data = np.ascontiguousarray(a.data.T)

    def grad_fn(g):
        return (np.ascontiguousarray(g.T),)

    return _result(data, (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    new_shape = tuple(int(s) for s in shape)
    if int(np.prod(new_shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {new_shape}")
    old_shape = a.data.shape
    data = a.data.reshape(new_shape)

    def grad_fn(g):
        return (g.reshape(old_shape),)

    return _result(data, (a,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts or not all(isinstance(t, Tensor) for t in ts):
        raise TypeError("concat needs a non-empty sequence of Tensors")
    nd = ts[0].ndim
    for t in ts[1:]:
        if t.ndim != nd:
            raise ShapeError(f"concat: rank mismatch {ts[0].shape} vs {t.shape}")
        for ax in range(nd):
            if ax != axis % nd and t.shape[ax] != ts[0].shape[ax]:
                raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis % nd] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _result(data, tuple(ts), grad_fn)


def take_rows(a: Tensor, indices) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"take_rows: expected a 2-d tensor, got {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: expected 1-d indices, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")
    data = np.ascontiguousarray(a.data[idx])
    in_shape = a.data.shape

    def grad_fn(g):
        out = np.zeros(in_shape, dtype=np.float32)
        np.add.at(out, idx, g)
        return (out,)

    return _result(data, (a,), grad_fn)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-m vector to every row of an (n, m) tensor."""
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to rows of {a.shape}")
    data = a.data + b.data

    def grad_fn(g):
        return g, g.sum(axis=0, dtype=np.float64).astype(np.float32)

    return _result(data, (a, b), grad_fn)


# nonlinearities ----------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, np.float32(0.0))

    def grad_fn(g):
        return (np.where(mask, g, np.float32(0.0)),)

    return _result(data, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = np.asarray(1.0 / (1.0 + np.exp(-a.data)), dtype=np.float32)

    def grad_fn(g):
        return (np.asarray(g * s * (1.0 - s), dtype=np.float32),)

    return _result(s, (a,), grad_fn)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def grad_fn(g):
        return (np.asarray(g * (1.0 - t * t), dtype=np.float32),)

    return _result(t, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    src = a.data

    def grad_fn(g):
        return (np.asarray(g / src, dtype=np.float32),)

    return _result(data, (a,), grad_fn)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through the interior only."""
    lo32, hi32 = np.float32(lo), np.float32(hi)
    data = np.clip(a.data, lo32, hi32)
    mask = (a.data >= lo32) & (a.data <= hi32)

    def grad_fn(g):
        return (np.where(mask, g, np.float32(0.0)),)

    return _result(data, (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along one axis."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    denom = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    s = np.asarray(e / denom, dtype=np.float32)

    def grad_fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)
        return (np.asarray(s * (g - inner), dtype=np.float32),)

    return _result(s, (a,), grad_fn)


# reductions --------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=np.float32)
    shp = a.data.shape

    def grad_fn(g):
        return (np.full(shp, np.float32(g), dtype=np.float32),)

    return _result(data, (a,), grad_fn)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=np.float32)
    shp = a.data.shape

    def grad_fn(g):
        return (np.full(shp, np.float32(g / n), dtype=np.float32),)

    return _result(data, (a,), grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Column means of an (n, m) tensor, accumulated in float64."""
    if a.ndim != 2:
        raise ShapeError(f"mean_rows: expected a 2-d tensor, got {a.shape}")
    n = a.shape[0]
    data = (a.data.sum(axis=0, dtype=np.float64) / n).astype(np.float32)

    def grad_fn(g):
        return (np.ascontiguousarray(np.broadcast_to(g / np.float32(n), (n, g.shape[0]))),)

    return _result(data, (a,), grad_fn)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of the whole tensor (scalar result)."""
    sq = np.float64(np.square(a.data, dtype=np.float64).sum())
    nrm = math.sqrt(sq)
    data = np.asarray(nrm, dtype=np.float32)
    src = a.data

    def grad_fn(g):
        return (np.asarray(src * (g / np.float32(max(nrm, _NORM_FLOOR))), dtype=np.float32),)

    return _result(data, (a,), grad_fn)


def row_l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Per-row Euclidean distance between two (n, m) tensors -> (n,)."""
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"row_l2_distance: shapes {a.shape} and {b.shape} must match and be 2-d")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    dist = np.sqrt(np.square(diff).sum(axis=1))
    data = dist.astype(np.float32)
    unit = (diff / np.maximum(dist, _NORM_FLOOR)[:, None]).astype(np.float32)

    def grad_fn(g):
        scaled = unit * g[:, None]
        return scaled, -scaled

    return _result(data, (a, b), grad_fn)


# similarity --------------------------------------------------------------

def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two 1-d vectors with a guarded denominator.

    The denominator is max(|u|*|v|, 1e-8), so (near-)zero vectors yield a
    similarity of 0 instead of NaN. Inside the guard the result is treated
    as locally constant: the gradient is zero there, which keeps training
    finite when an embedding collapses to the origin.
    """
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: expected equal 1-d shapes, got {u.shape} and {v.shape}")
    du = u.data.astype(np.float64)
    dv = v.data.astype(np.float64)
    nu = math.sqrt(float(np.square(du).sum()))
    nv = math.sqrt(float(np.square(dv).sum()))
    raw = nu * nv
    denom = max(raw, COSINE_EPS)
    dot = float(du @ dv)
    cos = dot / denom
    data = np.asarray(cos, dtype=np.float32)
    guarded = raw < COSINE_EPS

    def grad_fn(g):
        if guarded:
            z = np.zeros(du.shape, dtype=np.float32)
            return z, z.copy()
        gs = float(g)
        gu = (dv / denom - cos * du / max(nu * nu, _NORM_FLOOR)) * gs
        gv = (du / denom - cos * dv / max(nv * nv, _NORM_FLOOR)) * gs
        return gu.astype(np.float32), gv.astype(np.float32)

    return _result(data, (u, v), grad_fn)


def rows_cosine(m: Tensor, c: Tensor) -> Tensor:
    """Cosine similarity of every row of an (n, d) tensor with a vector -> (n,).

    Same guarded denominator and locally-constant guard behaviour as
    :func:`cosine_similarity`, applied per row.
    """
    if m.ndim != 2 or c.ndim != 1 or m.shape[1] != c.shape[0]:
        raise ShapeError(f"rows_cosine: cannot pair rows of {m.shape} with vector {c.shape}")
    dm = m.data.astype(np.float64)
    dc = c.data.astype(np.float64)
    row_n = np.sqrt(np.square(dm).sum(axis=1))
    nc = math.sqrt(float(np.square(dc).sum()))
    raw = row_n * nc
    denom = np.maximum(raw, COSINE_EPS)
    dots = dm @ dc
    cos = dots / denom
    data = cos.astype(np.float32)
    live = raw >= COSINE_EPS  # rows where the guard is inactive

    def grad_fn(g):
        g_live = g.astype(np.float64) * live
        gm = (np.outer(g_live / denom, dc)
              - (g_live * cos / np.maximum(row_n * row_n, _NORM_FLOOR))[:, None] * dm)
        gc = (dm.T @ (g_live / denom)
              - ((g_live * cos).sum() / max(nc * nc, _NORM_FLOOR)) * dc)
        return gm.astype(np.float32), gc.astype(np.float32)

    return _result(data, (m, c), grad_fn)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-head scaled dot-product attention: softmax(q k^T / sqrt(d)) v.

    Composed from elementary ops, so its gradient needs no dedicated rule.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("scaled_dot_attention: expected 2-d q, k, v")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"scaled_dot_attention: incompatible shapes q={q.shape} k={k.shape} v={v.shape}")
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return matmul(softmax(scores, axis=-1), v)


# gradient helpers ---------------------------------------------------------

def input_gradients(build_loss, *inputs):
    """Gradients of a scalar loss with respect to raw input arrays.

    ``build_loss`` receives one gradient-tracked Tensor per input array and
    must return a scalar Tensor. Returns ``(grads, loss_value)`` where
    ``grads`` holds one float32 array per input (zeros for inputs the loss
    does not touch). Only the supplied inputs are tracked, so parameters
    wrapped without ``requires_grad`` stay untouched.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    loss = build_loss(*tensors)
    if not isinstance(loss, Tensor):
        raise TypeError("build_loss must return a Tensor")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any of the supplied inputs")
    loss.backward()
    grads = tuple(t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors)
    return grads, loss.item()
