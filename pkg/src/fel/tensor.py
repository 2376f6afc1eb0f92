"""Dense tensors with reverse-mode automatic differentiation.

Only the operations a small BERT-style encoder needs are provided.  Every
operation records its parents and a closure mapping the output gradient to
parent gradients; :func:`backward` walks that graph in reverse topological
order.  Broadcasting is limited to adding a bias over the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

IGNORE_INDEX = -100

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Raised when operand extents do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        self.grad = np.zeros_like(self.data) if (self.requires_grad and not _parents) else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self) -> None:
        backward(self)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar for the few ops that are unambiguous
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _node(data, parents: Sequence[Tensor], grad_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=grad_fn)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            np.add(node.grad, g, out=node.grad)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return _node(x.data * c, (x,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast over every axis but the last."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def grad_fn(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _node(x.data + b.data, (x, b), grad_fn)


def gelu(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    out = x.data * cdf

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _node(out, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions

def sum_all(x: Tensor) -> Tensor:
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise ValueError("add_scalars needs at least one term")
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def gather_rows(x: Tensor, index) -> Tensor:
    """Rows ``x[index]`` of a 2-D tensor; also serves as an embedding lookup."""
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def grad_fn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index.reshape(-1), g.reshape(-1, x.shape[1]))
        return (out,)

    return _node(x.data[index], (x,), grad_fn)


embedding = gather_rows


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands or stacks with identical leading extents."""
    if a.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise ShapeError(f"matmul: incompatible ranks for shapes {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Apply ``x @ weight + bias`` over the last axis of ``x``."""
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.data.ndim != 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add_bias(out, bias)
    if x.data.ndim != 2:
        out = reshape(out, (*lead, weight.shape[1]))
    return out


# ---------------------------------------------------------------- normalisation

def softmax(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``additive_mask`` is a constant added first."""
    z = x.data if additive_mask is None else x.data + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/bias {bias.shape} do not match last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        gx = gb = gg = None
        axes = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if bias.requires_grad:
            gb = g.sum(axis=axes)
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _node(out, (x, gain, bias), grad_fn)


# ---------------------------------------------------------------- loss

class NoSupervisedPositions(ValueError):
    """Every target carried the ignore sentinel."""


def softmax_xent(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over rows whose target is not ``ignore_index``.

    Returns the scalar loss tensor and the row-wise softmax probabilities.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_xent expects (n, C) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if targets.shape[0] != n:
        raise ShapeError(f"softmax_xent: {n} rows but {targets.shape[0]} targets")
    keep = targets != ignore_index
    if not keep.any():
        raise NoSupervisedPositions("no supervised positions")
    bad = targets[keep]
    if bad.min() < 0 or bad.max() >= c:
        raise IndexError(f"softmax_xent: target outside [0, {c})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    rows = np.nonzero(keep)[0]
    m = rows.size
    loss = -logp[rows, targets[rows]].sum() / m

    def grad_fn(g):
        d = np.zeros_like(probs)
        d[rows] = probs[rows]
        d[rows, targets[rows]] -= 1.0
        return (d * (g / m),)

    return _node(np.asarray(loss, dtype=logits.data.dtype), (logits,), grad_fn), probs


# ---------------------------------------------------------------- finite differences

def finite_diff_grad(f: Callable[[], float], params: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` with respect to each parameter.

    ``f`` takes no arguments and reads the parameters' current values, which
    are perturbed in place and restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = []
    for p in params:
        g = np.zeros(p.shape, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f())
            flat[i] = orig - h
            fm = float(f())
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite objective while perturbing {p.name or 'param'}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def pass_(self) -> bool:
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    tol: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn`` against central differences."""
    params = [p for p in params if p.data.size]
    if not params:
        raise ValueError("nothing to check: no parameters")
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters, {p.name} is {p.data.dtype}")
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = finite_diff_grad(lambda: loss_fn().data, params, h)
    per = {}
    for i, (p, ga, gn) in enumerate(zip(params, analytic, numeric)):
        per[p.name or f"param{i}"] = relative_error(ga, gn)
    worst = max(per.values())
    return GradCheckReport(max_rel_err=worst, passed=worst < tol, tol=tol, per_param=per)
