"""Reverse-mode autodiff over float64 numpy arrays.

The op surface is deliberately closed: every differentiable computation
in the package is expressed through the `OpKind` members below, so the
gradient checker exercises the exact same code paths the trainer uses.

Graphs are built eagerly while grad mode is on, consumed by a single
`backward` call, and freed afterwards. Leaf gradients accumulate across
backward calls until `zero_grad` resets them.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from radkg import kernels
from radkg.errors import EmptyMask, NonScalarLoss, ShapeError

NEG_FILL = -1e30

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class OpKind(Enum):
    MATMUL = "matmul"
    ADD = "add"
    MUL = "mul"
    SCALE = "scale"
    SOFTMAX_LASTDIM = "softmax_lastdim"
    LAYER_NORM = "layer_norm"
    GELU = "gelu"
    EMBEDDING_LOOKUP = "embedding_lookup"
    CONCAT_ROWS = "concat_rows"
    SLICE_ROWS = "slice_rows"
    CROSS_ENTROPY_MASKED = "cross_entropy_masked"
    TRANSPOSE_2D = "transpose_2d"
    RESHAPE = "reshape"
    CAUSAL_MASKED_FILL = "causal_masked_fill"


class _Node:
    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: OpKind, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A float64 array with an optional grad and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        # contiguity keeps in-place coordinate edits (grad_check) on views;
        # ascontiguousarray would promote 0-d to 1-d, so guard scalars
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLoss(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flags = "param" if self.requires_grad else ("node" if self.node else "const")
        return f"Tensor(shape={self.data.shape}, {flags})"


def _out(op: OpKind, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    t = Tensor(data)
    if _grad_enabled and any(p.tracked() for p in parents):
        t.node = _Node(op, tuple(parents), backward_fn)
    return t


def _need_2d(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{op} expects 2-D operands, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_2d("matmul", a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _out(OpKind.MATMUL, out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape == b.data.shape:
        def bw(g):
            return g, g

        return _out(OpKind.ADD, a.data + b.data, (a, b), bw)
    # bias broadcast: b is 1-D and matches the last axis of a
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        def bw_bias(g):
            axes = tuple(range(g.ndim - 1))
            return g, g.sum(axis=axes) if axes else g

        return _out(OpKind.ADD, a.data + b.data, (a, b), bw_bias)
    raise ShapeError(f"add mismatch: {a.data.shape} + {b.data.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul mismatch: {a.data.shape} * {b.data.shape}")
    out = a.data * b.data

    def bw(g):
        return g * b.data, g * a.data

    return _out(OpKind.MUL, out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)

    return _out(OpKind.SCALE, a.data * c, (a,), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.data.ndim < 1 or x.data.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs a non-empty last axis, got {x.data.shape}")
    shape = x.data.shape
    flat = np.ascontiguousarray(x.data.reshape(-1, shape[-1]))
    y = kernels.softmax_fwd(flat)

    def bw(g):
        gflat = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        return (kernels.softmax_bwd(y, gflat).reshape(shape),)

    return _out(OpKind.SOFTMAX_LASTDIM, y.reshape(shape), (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim < 1:
        raise ShapeError("layer_norm needs at least 1-D input")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis of {x.data.shape}"
        )
    shape = x.data.shape
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, inv_std = kernels.layer_norm_fwd(flat, gain.data, bias.data, float(eps))

    def bw(g):
        gflat = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layer_norm_bwd(gflat, xhat, inv_std, gain.data)
        return dx.reshape(shape), dgain, dbias

    return _out(OpKind.LAYER_NORM, y.reshape(shape), (x, gain, bias), bw)


def gelu(x: Tensor) -> Tensor:
    shape = x.data.shape
    flat = np.ascontiguousarray(x.data.reshape(-1))
    y = kernels.gelu_fwd(flat)

    def bw(g):
        gflat = np.ascontiguousarray(g.reshape(-1))
        return (kernels.gelu_bwd(flat, gflat).reshape(shape),)

    return _out(OpKind.GELU, y.reshape(shape), (x,), bw)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    _need_2d("embedding_lookup", table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding_lookup ids must be 1-D, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding_lookup id out of range for table with {table.data.shape[0]} rows"
        )
    out = table.data[ids]

    def bw(g):
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids, g)
        return (dtable,)

    return _out(OpKind.EMBEDDING_LOOKUP, out, (table,), bw)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    _need_2d("concat_rows", a, b)
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"concat_rows width mismatch: {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)

    def bw(g):
        return g[:na], g[na:]

    return _out(OpKind.CONCAT_ROWS, out, (a, b), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _need_2d("slice_rows", x)
    n = x.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {x.data.shape}")
    out = x.data[start:stop].copy()

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        return (dx,)

    return _out(OpKind.SLICE_ROWS, out, (x,), bw)


def cross_entropy_masked(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    _need_2d("cross_entropy_masked", logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask_bool = np.asarray(mask, dtype=bool)
    t, v = logits.data.shape
    if labels.shape != (t,) or mask_bool.shape != (t,):
        raise ShapeError(
            f"cross_entropy_masked labels/mask shapes {labels.shape}/{mask_bool.shape} "
            f"do not match logits {logits.data.shape}"
        )
    if not mask_bool.any():
        raise EmptyMask("cross_entropy_masked needs at least one unmasked position")
    if labels[mask_bool].min() < 0 or labels[mask_bool].max() >= v:
        raise ShapeError(f"cross_entropy_masked label out of range for vocab {v}")
    mask_u8 = np.ascontiguousarray(mask_bool, dtype=np.uint8)
    logits_c = np.ascontiguousarray(logits.data)
    labels_c = np.ascontiguousarray(labels)
    loss, probs = kernels.cross_entropy_fwd(logits_c, labels_c, mask_u8)

    def bw(g):
        return (kernels.cross_entropy_bwd(probs, labels_c, mask_u8, float(g)),)

    return _out(OpKind.CROSS_ENTROPY_MASKED, np.float64(loss), (logits,), bw)


def transpose_2d(x: Tensor) -> Tensor:
    _need_2d("transpose_2d", x)

    def bw(g):
        return (np.ascontiguousarray(g.T),)

    return _out(OpKind.TRANSPOSE_2D, np.ascontiguousarray(x.data.T), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape {x.data.shape} -> {shape}: {exc}") from exc
    old = x.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _out(OpKind.RESHAPE, out.copy(), (x,), bw)


def causal_masked_fill(x: Tensor) -> Tensor:
    if x.data.ndim < 2 or x.data.shape[-1] != x.data.shape[-2]:
        raise ShapeError(f"causal_masked_fill needs square last two axes, got {x.data.shape}")
    t = x.data.shape[-1]
    keep = np.tril(np.ones((t, t), dtype=bool))
    out = np.where(keep, x.data, NEG_FILL)

    def bw(g):
        return (np.where(keep, g, 0.0),)

    return _out(OpKind.CAUSAL_MASKED_FILL, out, (x,), bw)


_DISPATCH = {
    OpKind.MATMUL: matmul,
    OpKind.ADD: add,
    OpKind.MUL: mul,
    OpKind.SCALE: scale,
    OpKind.SOFTMAX_LASTDIM: softmax_lastdim,
    OpKind.LAYER_NORM: layer_norm,
    OpKind.GELU: gelu,
    OpKind.EMBEDDING_LOOKUP: embedding_lookup,
    OpKind.CONCAT_ROWS: concat_rows,
    OpKind.SLICE_ROWS: slice_rows,
    OpKind.CROSS_ENTROPY_MASKED: cross_entropy_masked,
    OpKind.TRANSPOSE_2D: transpose_2d,
    OpKind.RESHAPE: reshape,
    OpKind.CAUSAL_MASKED_FILL: causal_masked_fill,
}


def apply(op: OpKind, *args, **kwargs) -> Tensor:
    """Uniform entry point over the closed op set."""
    return _DISPATCH[op](*args, **kwargs)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.node is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to all tracked leaves.

    Leaf grads accumulate (+=) across calls; the graph hanging off
    `loss` is freed afterwards and cannot be replayed.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.node is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.tracked():
                continue
            if p.requires_grad:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            if p.node is not None:
                held = grads.get(id(p))
                grads[id(p)] = pg if held is None else held + pg
    for t in order:
        t.node = None


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient check."""

    passed: bool
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int = 32,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of `f` against central differences.

    `f` must rebuild its graph on every call from the current contents
    of `params`. At most `n_coords` coordinates per parameter are
    sampled. Relative error uses max(|analytic|, |numeric|, 1e-8) as
    the denominator.

    Each coordinate is tried at step sizes h, 10h, and 100h and the
    smallest relative error wins: tiny gradients drown in cancellation
    noise at small steps, while a genuinely wrong gradient disagrees at
    every scale.
    """
    for t in params.values():
        t.zero_grad()
    loss = f()
    backward(loss)
    analytic = {}
    for name, t in params.items():
        if t.grad is None:
            raise ShapeError(f"grad_check: parameter {name!r} received no gradient")
        analytic[name] = t.grad.copy()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(passed=True, max_rel_err=0.0)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        size = flat.size
        idx = np.arange(size) if size <= n_coords else rng.choice(size, size=n_coords, replace=False)
        worst = 0.0
        for i in idx:
            a = analytic[name].reshape(-1)[i]
            best = np.inf
            orig = flat[i]
            for step in (h, 10.0 * h, 100.0 * h):
                flat[i] = orig + step
                with no_grad():
                    up = f().item()
                flat[i] = orig - step
                with no_grad():
                    down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                best = min(best, rel)
                if best <= tol:
                    break
            if best > worst:
                worst = best
        report.per_param[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
        if worst > tol:
            report.passed = False
            report.failures.append(f"{name}: rel err {worst:.3e} > {tol:.1e}")
    return report
