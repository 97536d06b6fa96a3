"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built symbolically from named leaves (``inp``/``param``) and a
fixed set of primitives, then evaluated against a ``name -> ndarray``
binding map.  A graph is cheap to build and can be re-evaluated with fresh
bindings, so training reuses one graph per sequence length.

Shape rules are strict: every operand shape is checked at construction
time and the only implicit broadcast is ``bias_add``.  All arithmetic is
float64.
"""
from __future__ import annotations

import itertools
from typing import Iterable, Mapping, Sequence

import numpy as np

Value = np.ndarray

_ids = itertools.count()


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Operand shapes violate an operation's shape rule."""


class BindingError(AutodiffError):
    """A leaf is unbound or bound to a value of the wrong shape."""


class Expr:
    """One node of an acyclic expression graph.

    ``op`` is the primitive kind ("input", "param", "const" for leaves),
    ``args`` the operand nodes, ``meta`` per-op constants (axis, slice
    bounds, python floats).  Values are never stored on the node; they
    live in per-evaluation dictionaries so distinct evaluations of the
    same graph can run concurrently.
    """

    __slots__ = ("op", "args", "shape", "name", "meta", "id", "_topo")

    def __init__(self, op, args=(), shape=(), name=None, meta=None):
        self.op = op
        self.args = tuple(args)
        self.shape = tuple(shape)
        self.name = name
        self.meta = meta
        self.id = next(_ids)
        self._topo = None

    def __repr__(self):
        tag = f"{self.op}#{self.id}"
        if self.name is not None:
            tag += f"({self.name})"
        return f"<{tag} shape={self.shape}>"


def _as_value(x) -> Value:
    a = np.asarray(x, dtype=np.float64)
    return a


def inp(name: str, shape: Sequence[int]) -> Expr:
    """Named input leaf; bound at evaluation time, no gradient reported."""
    return Expr("input", (), shape, name=name)


def param(name: str, shape: Sequence[int]) -> Expr:
    """Named trainable leaf; bound at evaluation time, gradient reported."""
    return Expr("param", (), shape, name=name)


def const(value) -> Expr:
    a = _as_value(value)
    node = Expr("const", (), a.shape)
    node.meta = a
    return node


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ ({a!r}, {b!r})")


def add(a: Expr, b: Expr) -> Expr:
    _same_shape("add", a, b)
    return Expr("add", (a, b), a.shape)


def sub(a: Expr, b: Expr) -> Expr:
    _same_shape("sub", a, b)
    return Expr("sub", (a, b), a.shape)


def mul(a: Expr, b: Expr) -> Expr:
    _same_shape("mul", a, b)
    return Expr("mul", (a, b), a.shape)


def scale(a: Expr, c: float) -> Expr:
    """Multiply by a python-float compile-time constant."""
    return Expr("scale", (a,), a.shape, meta=float(c))


def scale_by(a: Expr, s: Expr) -> Expr:
    """Multiply every entry of ``a`` by a scalar expression ``s``."""
    if s.shape != ():
        raise ShapeError(f"scale_by: scalar operand must have shape (), got {s.shape}")
    return Expr("scale_by", (a, s), a.shape)


def matmul(a: Expr, b: Expr) -> Expr:
    if len(a.shape) == 2 and len(b.shape) == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape} ({a!r}, {b!r})")
        out = (a.shape[0], b.shape[1])
    elif len(a.shape) == 1 and len(b.shape) == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        out = (b.shape[1],)
    elif len(a.shape) == 2 and len(b.shape) == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        out = (a.shape[0],)
    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    return Expr("matmul", (a, b), out)


def transpose(a: Expr) -> Expr:
    if len(a.shape) != 2:
        raise ShapeError(f"transpose: need matrix, got {a.shape}")
    return Expr("transpose", (a,), (a.shape[1], a.shape[0]))


def tanh(a: Expr) -> Expr:
    return Expr("tanh", (a,), a.shape)


def sigmoid(a: Expr) -> Expr:
    return Expr("sigmoid", (a,), a.shape)


def exp(a: Expr) -> Expr:
    return Expr("exp", (a,), a.shape)


def log(a: Expr) -> Expr:
    return Expr("log", (a,), a.shape)


def softmax(a: Expr) -> Expr:
    """Softmax over the last axis (1-D or 2-D)."""
    if len(a.shape) not in (1, 2):
        raise ShapeError(f"softmax: rank must be 1 or 2, got {a.shape}")
    return Expr("softmax", (a,), a.shape)


def masked_softmax(scores: Expr, mask: Expr) -> Expr:
    """Row-wise softmax over the last axis with masked columns forced to 0.

    ``mask`` is a 0/1 vector over the last axis; masked entries get exactly
    zero weight and receive zero gradient.  A fully-masked row yields an
    all-zero row.
    """
    if len(scores.shape) != 2 or len(mask.shape) != 1:
        raise ShapeError(f"masked_softmax: need 2-D scores and 1-D mask, got {scores.shape}, {mask.shape}")
    if scores.shape[1] != mask.shape[0]:
        raise ShapeError(f"masked_softmax: mask length {mask.shape} != columns of {scores.shape}")
    return Expr("masked_softmax", (scores, mask), scores.shape)


def logsumexp(a: Expr, axis: int | None = None) -> Expr:
    """Overflow-safe log-sum-exp.  1-D -> scalar; 2-D with axis 0/1 -> 1-D."""
    if len(a.shape) == 1:
        if axis not in (None, 0):
            raise ShapeError(f"logsumexp: bad axis {axis} for shape {a.shape}")
        return Expr("logsumexp", (a,), (), meta=0)
    if len(a.shape) == 2:
        if axis not in (0, 1):
            raise ShapeError(f"logsumexp: axis required for 2-D input, got {axis}")
        out = (a.shape[1],) if axis == 0 else (a.shape[0],)
        return Expr("logsumexp", (a,), out, meta=axis)
    raise ShapeError(f"logsumexp: rank must be 1 or 2, got {a.shape}")


def concat(parts: Sequence[Expr]) -> Expr:
    """Concatenate along the last axis.  All ranks equal (1 or 2)."""
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat: no operands")
    rank = len(parts[0].shape)
    if rank not in (1, 2) or any(len(p.shape) != rank for p in parts):
        raise ShapeError(f"concat: mixed or unsupported ranks {[p.shape for p in parts]}")
    if rank == 2 and any(p.shape[0] != parts[0].shape[0] for p in parts):
        raise ShapeError(f"concat: row counts differ {[p.shape for p in parts]}")
    width = sum(p.shape[-1] for p in parts)
    out = (width,) if rank == 1 else (parts[0].shape[0], width)
    return Expr("concat", parts, out)


def stack_rows(rows: Sequence[Expr]) -> Expr:
    """Stack 1-D vectors of equal length into a matrix (one per row)."""
    rows = tuple(rows)
    if not rows or any(len(r.shape) != 1 for r in rows):
        raise ShapeError("stack_rows: need non-empty list of vectors")
    if any(r.shape != rows[0].shape for r in rows):
        raise ShapeError(f"stack_rows: lengths differ {[r.shape for r in rows]}")
    return Expr("stack_rows", rows, (len(rows), rows[0].shape[0]))


def select_row(a: Expr, i: int) -> Expr:
    if len(a.shape) != 2 or not 0 <= i < a.shape[0]:
        raise ShapeError(f"select_row: row {i} of {a.shape}")
    return Expr("select_row", (a,), (a.shape[1],), meta=i)


def select_col(a: Expr, j: int) -> Expr:
    if len(a.shape) != 2 or not 0 <= j < a.shape[1]:
        raise ShapeError(f"select_col: col {j} of {a.shape}")
    return Expr("select_col", (a,), (a.shape[0],), meta=j)


def select_index(a: Expr, i: int) -> Expr:
    if len(a.shape) != 1 or not 0 <= i < a.shape[0]:
        raise ShapeError(f"select_index: index {i} of {a.shape}")
    return Expr("select_index", (a,), (), meta=i)


def slice_vec(a: Expr, start: int, stop: int) -> Expr:
    if len(a.shape) != 1 or not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_vec: [{start}:{stop}] of {a.shape}")
    return Expr("slice_vec", (a,), (stop - start,), meta=(start, stop))


def slice2d(a: Expr, r0: int, r1: int, c0: int, c1: int) -> Expr:
    if len(a.shape) != 2 or not (0 <= r0 < r1 <= a.shape[0] and 0 <= c0 < c1 <= a.shape[1]):
        raise ShapeError(f"slice2d: [{r0}:{r1}, {c0}:{c1}] of {a.shape}")
    return Expr("slice2d", (a,), (r1 - r0, c1 - c0), meta=(r0, r1, c0, c1))


def bias_add(a: Expr, b: Expr) -> Expr:
    """Add a vector to every row of a matrix (the only implicit broadcast)."""
    if len(a.shape) != 2 or len(b.shape) != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_add: {a.shape} + {b.shape}")
    return Expr("bias_add", (a, b), a.shape)


def outer_add(u: Expr, v: Expr) -> Expr:
    """Matrix with entries u[i] + v[j]."""
    if len(u.shape) != 1 or len(v.shape) != 1:
        raise ShapeError(f"outer_add: need vectors, got {u.shape}, {v.shape}")
    return Expr("outer_add", (u, v), (u.shape[0], v.shape[0]))


def _check_time_mask(op, a, mask):
    if len(a.shape) != 2:
        raise ShapeError(f"{op}: need matrix, got {a.shape}")
    if mask is not None and mask.shape != (a.shape[0],):
        raise ShapeError(f"{op}: mask {mask.shape} != rows of {a.shape}")


def max_over_time(a: Expr) -> Expr:
    _check_time_mask("max_over_time", a, None)
    return Expr("max_t", (a,), (a.shape[1],))


def masked_max(a: Expr, mask: Expr) -> Expr:
    """Column-wise max over unmasked rows; masked rows are absent, not zero."""
    _check_time_mask("masked_max", a, mask)
    return Expr("max_t", (a, mask), (a.shape[1],))


def mean_over_time(a: Expr) -> Expr:
    _check_time_mask("mean_over_time", a, None)
    return Expr("mean_t", (a,), (a.shape[1],))


def masked_mean(a: Expr, mask: Expr) -> Expr:
    """Column-wise mean over unmasked rows only."""
    _check_time_mask("masked_mean", a, mask)
    return Expr("mean_t", (a, mask), (a.shape[1],))


def mask_rows(a: Expr, mask: Expr) -> Expr:
    """Zero out the rows whose mask entry is 0."""
    _check_time_mask("mask_rows", a, mask)
    return Expr("mask_rows", (a, mask), a.shape)


def sum_all(a: Expr) -> Expr:
    return Expr("sum_all", (a,), ())


# ---------------------------------------------------------------------------
# forward kernels


def _fwd_masked_softmax(s, m):
    neg = np.where(m > 0, s, -np.inf)
    hi = neg.max(axis=-1, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    e = np.exp(s - hi) * m
    z = e.sum(axis=-1, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def _fwd_logsumexp(a, axis):
    hi = a.max(axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    out = np.log(np.exp(a - hi).sum(axis=axis)) + np.squeeze(hi, axis=axis)
    return out if a.ndim == 2 else np.asarray(out)


def _fwd_max_t(a, m):
    if m is None:
        return a.max(axis=0)
    shifted = np.where(m[:, None] > 0, a, -np.inf)
    return shifted.max(axis=0)


def _fwd_mean_t(a, m):
    if m is None:
        return a.mean(axis=0)
    n = m.sum()
    return (a * m[:, None]).sum(axis=0) / n


_FORWARD = {
    "add": lambda n, v: v[0] + v[1],
    "sub": lambda n, v: v[0] - v[1],
    "mul": lambda n, v: v[0] * v[1],
    "scale": lambda n, v: v[0] * n.meta,
    "scale_by": lambda n, v: v[0] * v[1],
    "matmul": lambda n, v: v[0] @ v[1],
    "transpose": lambda n, v: v[0].T.copy(),
    "tanh": lambda n, v: np.tanh(v[0]),
    # overflow-safe logistic via the tanh identity
    "sigmoid": lambda n, v: 0.5 * (np.tanh(0.5 * v[0]) + 1.0),
    "exp": lambda n, v: np.exp(v[0]),
    "log": lambda n, v: np.log(v[0]),
    "softmax": lambda n, v: _fwd_masked_softmax(v[0], np.ones(v[0].shape[-1])),
    "masked_softmax": lambda n, v: _fwd_masked_softmax(v[0], v[1]),
    "logsumexp": lambda n, v: _fwd_logsumexp(v[0], n.meta),
    "concat": lambda n, v: np.concatenate(v, axis=-1),
    "stack_rows": lambda n, v: np.stack(v, axis=0),
    "select_row": lambda n, v: v[0][n.meta].copy(),
    "select_col": lambda n, v: v[0][:, n.meta].copy(),
    "select_index": lambda n, v: np.asarray(v[0][n.meta]),
    "slice_vec": lambda n, v: v[0][n.meta[0]:n.meta[1]].copy(),
    "slice2d": lambda n, v: v[0][n.meta[0]:n.meta[1], n.meta[2]:n.meta[3]].copy(),
    "bias_add": lambda n, v: v[0] + v[1][None, :],
    "outer_add": lambda n, v: v[0][:, None] + v[1][None, :],
    "max_t": lambda n, v: _fwd_max_t(v[0], v[1] if len(v) > 1 else None),
    "mean_t": lambda n, v: _fwd_mean_t(v[0], v[1] if len(v) > 1 else None),
    "mask_rows": lambda n, v: v[0] * v[1][:, None],
    "sum_all": lambda n, v: np.asarray(v[0].sum()),
}


# ---------------------------------------------------------------------------
# backward kernels: bwd(node, operand_values, out_value, out_grad) -> operand grads
# (None entries mean "no gradient for this operand", e.g. masks)


def _bwd_matmul(n, v, y, g):
    a, b = v
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    return np.outer(g, b), a.T @ g


def _bwd_softmax_like(n, v, y, g):
    dot = (g * y).sum(axis=-1, keepdims=True)
    gs = y * (g - dot)
    return (gs,) if n.op == "softmax" else (gs, None)


def _bwd_logsumexp(n, v, y, g):
    a = v[0]
    axis = n.meta
    if a.ndim == 1:
        return (np.exp(a - y) * g,)
    ye = np.expand_dims(y, axis)
    ge = np.expand_dims(g, axis)
    return (np.exp(a - ye) * ge,)


def _bwd_concat(n, v, y, g):
    grads, off = [], 0
    for part in v:
        w = part.shape[-1]
        grads.append(g[..., off:off + w])
        off += w
    return tuple(grads)


def _bwd_select_row(n, v, y, g):
    out = np.zeros_like(v[0])
    out[n.meta] = g
    return (out,)


def _bwd_select_col(n, v, y, g):
    out = np.zeros_like(v[0])
    out[:, n.meta] = g
    return (out,)


def _bwd_select_index(n, v, y, g):
    out = np.zeros_like(v[0])
    out[n.meta] = g
    return (out,)


def _bwd_slice_vec(n, v, y, g):
    out = np.zeros_like(v[0])
    out[n.meta[0]:n.meta[1]] = g
    return (out,)


def _bwd_slice2d(n, v, y, g):
    out = np.zeros_like(v[0])
    out[n.meta[0]:n.meta[1], n.meta[2]:n.meta[3]] = g
    return (out,)


def _bwd_max_t(n, v, y, g):
    a = v[0]
    m = v[1] if len(v) > 1 else None
    shifted = a if m is None else np.where(m[:, None] > 0, a, -np.inf)
    idx = shifted.argmax(axis=0)  # first max on ties
    out = np.zeros_like(a)
    np.add.at(out, (idx, np.arange(a.shape[1])), g)
    return (out, None) if m is not None else (out,)


def _bwd_mean_t(n, v, y, g):
    a = v[0]
    if len(v) > 1:
        m = v[1]
        return (np.outer(m, g) / m.sum(), None)
    return (np.tile(g / a.shape[0], (a.shape[0], 1)),)


_BACKWARD = {
    "add": lambda n, v, y, g: (g, g),
    "sub": lambda n, v, y, g: (g, -g),
    "mul": lambda n, v, y, g: (g * v[1], g * v[0]),
    "scale": lambda n, v, y, g: (g * n.meta,),
    "scale_by": lambda n, v, y, g: (g * v[1], np.asarray((g * v[0]).sum())),
    "matmul": _bwd_matmul,
    "transpose": lambda n, v, y, g: (g.T,),
    "tanh": lambda n, v, y, g: (g * (1.0 - y * y),),
    "sigmoid": lambda n, v, y, g: (g * y * (1.0 - y),),
    "exp": lambda n, v, y, g: (g * y,),
    "log": lambda n, v, y, g: (g / v[0],),
    "softmax": _bwd_softmax_like,
    "masked_softmax": _bwd_softmax_like,
    "logsumexp": _bwd_logsumexp,
    "concat": _bwd_concat,
    "stack_rows": lambda n, v, y, g: tuple(g[i] for i in range(len(v))),
    "select_row": _bwd_select_row,
    "select_col": _bwd_select_col,
    "select_index": _bwd_select_index,
    "slice_vec": _bwd_slice_vec,
    "slice2d": _bwd_slice2d,
    "bias_add": lambda n, v, y, g: (g, g.sum(axis=0)),
    "outer_add": lambda n, v, y, g: (g.sum(axis=1), g.sum(axis=0)),
    "max_t": _bwd_max_t,
    "mean_t": _bwd_mean_t,
    "mask_rows": lambda n, v, y, g: (g * v[1][:, None], None),
    "sum_all": lambda n, v, y, g: (np.full(v[0].shape, float(g)),),
}


# ---------------------------------------------------------------------------
# engine


def topo_order(root: Expr) -> list[Expr]:
    """Operands-before-users ordering, cached on the root node."""
    if root._topo is not None:
        return root._topo
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for arg in node.args:
            if arg.id not in seen:
                stack.append((arg, False))
    root._topo = order
    return order


def _leaf_value(node: Expr, bindings: Mapping[str, Value], dtype) -> Value:
    if node.op == "const":
        return node.meta.astype(dtype) if node.meta.dtype != dtype else node.meta
    if node.name not in bindings:
        raise BindingError(f"unbound {node.op} {node.name!r} ({node!r})")
    val = np.asarray(bindings[node.name], dtype=dtype)
    if val.shape != node.shape:
        raise BindingError(
            f"{node.op} {node.name!r} bound to shape {val.shape}, declared {node.shape}"
        )
    return val


def _run_forward(order: Iterable[Expr], bindings: Mapping[str, Value],
                 dtype=np.float64) -> dict[int, Value]:
    vals: dict[int, Value] = {}
    for node in order:
        if node.op in ("input", "param", "const"):
            vals[node.id] = _leaf_value(node, bindings, dtype)
        else:
            out = _FORWARD[node.op](node, [vals[a.id] for a in node.args])
            if out.shape != node.shape:
                raise ShapeError(f"{node!r}: forward produced shape {out.shape}")
            vals[node.id] = out
    return vals


def evaluate(root: Expr, bindings: Mapping[str, Value]) -> Value:
    """Forward pass; deterministic for identical bindings."""
    return _run_forward(topo_order(root), bindings)[root.id]


def evaluate_many(roots: Sequence[Expr], bindings: Mapping[str, Value]) -> list[Value]:
    """Evaluate several roots of one graph sharing intermediate values."""
    holder = Expr("const", (), ())
    holder.args = tuple(roots)  # aggregation shim, never executed
    order = [n for n in topo_order(holder) if n is not holder]
    vals = _run_forward(order, bindings)
    return [vals[r.id] for r in roots]


def graph_params(root: Expr) -> list[str]:
    return sorted({n.name for n in topo_order(root) if n.op == "param"})


def value_and_grad(
    root: Expr,
    bindings: Mapping[str, Value],
    wrt: Sequence[str] | None = None,
    aux: Sequence[Expr] = (),
) -> tuple[float, dict[str, Value], list[Value]]:
    """Scalar forward value plus d(root)/d(param) for the requested params.

    ``aux`` nodes must be ancestors of ``root``; their already-computed
    forward values are returned for free alongside the gradients.
    """
    if root.shape != ():
        raise ShapeError(f"gradients need a scalar root, got shape {root.shape}")
    order = topo_order(root)
    names = graph_params(root)
    if wrt is None:
        wrt = names
    else:
        missing = set(wrt) - set(names)
        if missing:
            raise BindingError(f"parameters not in graph: {sorted(missing)}")
    vals = _run_forward(order, bindings)
    adj: dict[int, Value] = {root.id: np.asarray(1.0)}
    for node in reversed(order):
        g = adj.pop(node.id, None)
        if g is None or node.op in ("input", "param", "const"):
            if node.op == "param" and g is not None:
                adj[node.id] = g
            continue
        operand_vals = [vals[a.id] for a in node.args]
        grads = _BACKWARD[node.op](node, operand_vals, vals[node.id], g)
        for arg, ag in zip(node.args, grads):
            if ag is None:
                continue
            if arg.id in adj:
                adj[arg.id] = adj[arg.id] + ag
            else:
                adj[arg.id] = ag
    out: dict[str, Value] = {}
    for node in order:
        if node.op == "param" and node.name in wrt:
            g = adj.get(node.id)
            prev = out.get(node.name)
            cur = np.zeros(node.shape) if g is None else np.asarray(g, dtype=np.float64)
            out[node.name] = cur if prev is None else prev + cur
    for node in aux:
        if node.id not in vals:
            raise BindingError(f"aux node {node!r} is not part of the root's graph")
    return float(vals[root.id]), out, [vals[a.id] for a in aux]


def gradients(
    root: Expr,
    bindings: Mapping[str, Value],
    wrt: Sequence[str] | None = None,
) -> dict[str, Value]:
    return value_and_grad(root, bindings, wrt)[1]


def check_gradients(
    root: Expr,
    bindings: Mapping[str, Value],
    eps: float = 1e-5,
    wrt: Sequence[str] | None = None,
) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8)
    element-wise; the report maps parameter name -> worst element.

    The finite-difference side is evaluated in extended precision where
    the platform provides it, so the difference quotient stays meaningful
    even for gradient entries near zero; the analytic side under test is
    the ordinary 64-bit backward pass.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    analytic = gradients(root, bindings, wrt)
    order = topo_order(root)
    fd_dtype = np.longdouble if np.finfo(np.longdouble).eps < 1e-17 else np.float64
    report: dict[str, float] = {}
    # C-ordered copies so reshape(-1) below is a mutable view, never a copy
    work = {k: np.array(v, dtype=fd_dtype, order="C") for k, v in bindings.items()}

    def fd_eval():
        # keep extended precision: the hi-lo cancellation must not round first
        return _run_forward(order, work, dtype=fd_dtype)[root.id][()]

    two_eps = fd_dtype(2.0) * fd_dtype(eps)
    for name, grad in analytic.items():
        p = work[name]
        num = np.zeros(grad.shape)
        flat = p.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + fd_dtype(eps)
            hi = fd_eval()
            flat[i] = keep - fd_dtype(eps)
            lo = fd_eval()
            flat[i] = keep
            nflat[i] = float((hi - lo) / two_eps)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-8)
        report[name] = float((np.abs(grad - num) / denom).max()) if grad.size else 0.0
    return report
