"""Reverse-mode automatic differentiation on dense float64 numpy buffers.

Small on purpose: only the primitives the forecasting graph needs. Every op
computes its forward value eagerly and, when a tape is active, registers a
backward rule. Gradients are exact reverse-mode; `grad_check` compares them
against central finite differences.

Conventions:
  * everything is float64
  * abs/relu use subgradient 0 at the kink
  * ops raise ShapeMismatch with both offending shapes in the message
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense float64 array plus a gradient slot.

    Leaf tensors are created directly (parameters) or via `constant`
    (inputs that never need gradients). Non-leaf tensors are produced by the
    ops below and carry a backward closure while their tape is alive.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward_fn")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of the ops of one forward pass.

    Nodes are appended in creation order, which is a topological order of the
    compute graph; `backward` walks the list once in reverse.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into `.grad` of every tensor on the tape.

    Visits each recorded node exactly once, in reverse creation order.
    """
    if loss.data.shape != ():
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward_fn is None:
            continue
        node._backward_fn(node.grad)
        node._backward_fn = None  # break reference cycles early


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE_TAPE is not None:
        out._backward_fn = backward_fn
        _ACTIVE_TAPE.nodes.append(out)
    return out


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; `b` may also be a 1-D bias matching a's last axis."""
    bias = b.data.ndim == 1 and a.data.ndim > 1
    if bias:
        if a.data.shape[-1] != b.data.shape[0]:
            raise ShapeMismatch(f"add bias: {a.data.shape} vs {b.data.shape}")
    elif a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        if bias:
            _accum(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))
        else:
            _accum(b, g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"sub: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _accum(a, c * g)

    return _make(c * a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    shapes = [p.data.shape for p in parts]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(
            s[i] != base[i] for i in range(len(base)) if i != axis % len(base)
        ):
            raise ShapeMismatch(f"concat: {shapes}")
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, gp)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def tslice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into a zero buffer."""
    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accum(a, full)

    return _make(a.data[key], (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # evaluated in two branches for overflow safety
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def absval(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, g * np.sign(a.data))  # sign(0)=0: subgradient convention

    return _make(np.abs(a.data), (a,), bwd)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), bwd)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy())

    return _make(a.data.mean(axis=axis), (a,), bwd)


def inner_product(a: Tensor, b: Tensor) -> Tensor:
    """Sum of elementwise products over the last axis.

    (n,)x(n,) -> scalar; (B,n)x(B,n) -> (B,).
    """
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"inner_product: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, np.expand_dims(g, -1) * b.data)
        _accum(b, np.expand_dims(g, -1) * a.data)

    return _make((a.data * b.data).sum(axis=-1), (a, b), bwd)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows (first axis); backward scatter-adds, so repeats are fine."""
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), bwd)


def take_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather columns of a 2-D tensor, returned as rows: (R,C)[:,idx].T -> (len(idx),R)."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"take_columns needs 2-D, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        full = np.zeros((a.data.shape[1], a.data.shape[0]))
        np.add.at(full, idx, g)
        _accum(a, full.T)

    return _make(a.data[:, idx].T, (a,), bwd)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    rel_err: dict[str, np.ndarray]
    excluded: dict[str, np.ndarray]
    tol: float
    passed: bool

    @property
    def max_rel_err(self) -> float:
        vals = [
            e[~x].max()
            for e, x in zip(self.rel_err.values(), self.excluded.values())
            if (~x).any()
        ]
        return max(vals) if vals else 0.0

    @property
    def n_excluded(self) -> int:
        return int(sum(x.sum() for x in self.excluded.values()))


def grad_check(
    fn,
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    denom_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar `fn()` against central differences.

    `fn` must be a closure over `params` returning a scalar Tensor; it is
    re-evaluated with perturbed entries, so it must be deterministic.

    Relative error per entry is |a - d| / max(|a|, |d|, denom_floor); the floor
    keeps finite-difference roundoff from dominating near-zero gradients.
    Entries where the second difference |f(x+h)+f(x-h)-2f(x)| / (2h) exceeds
    sqrt(h) sit on a nonsmooth point (abs/relu kink); they are reported as
    excluded rather than failed.
    """
    for p in params.values():
        if not np.all(np.isfinite(p.data)):
            raise ValueError("grad_check requires finite parameters")

    with Tape() as tape:
        out = fn()
    backward(tape, out)
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }
    for p in params.values():
        p.zero_grad()

    f0 = float(fn().data)
    kink_tol = np.sqrt(h)
    rel_err: dict[str, np.ndarray] = {}
    excluded: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        errs = np.zeros(flat.size)
        excl = np.zeros(flat.size, dtype=bool)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            d = (f_plus - f_minus) / (2.0 * h)
            if abs(f_plus + f_minus - 2.0 * f0) / (2.0 * h) > kink_tol:
                excl[i] = True
                continue
            errs[i] = abs(a[i] - d) / max(abs(a[i]), abs(d), denom_floor)
        rel_err[name] = errs.reshape(p.data.shape)
        excluded[name] = excl.reshape(p.data.shape)

    passed = all(
        bool(np.all(e[~x] < tol)) for e, x in zip(rel_err.values(), excluded.values())
    )
    return GradCheckReport(rel_err=rel_err, excluded=excluded, tol=tol, passed=passed)
