"""Tape-based reverse-mode autodiff over float64 numpy arrays, plus SGD.

Values are plain ``np.ndarray`` (float64, row-major). A :class:`Var` wraps a
value and, when it was produced under a :class:`GradTape`, the tape index
needed to route gradients back to watched parameters. Ops on untaped inputs
compute values only, so the same model code serves training and inference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels

Tensor = np.ndarray


class Var:
    __slots__ = ("value", "tape", "id")

    def __init__(self, value, tape: "GradTape | None" = None, id: int = -1):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.id = id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, taped={self.tape is not None})"


class GradTape:
    """Ordered record of primitive ops between watched parameters and a scalar."""

    def __init__(self):
        self._records: list[tuple[int, tuple, Callable]] = []
        self._watched: list[tuple[str, Var]] = []
        self._next = 0
        # smallest |input| seen by relu on this tape; gradcheck uses it to avoid kinks
        self.relu_margin = np.inf

    def _new_id(self) -> int:
        self._next += 1
        return self._next - 1

    def watch(self, value, name: str | None = None) -> Var:
        v = Var(np.array(value, dtype=np.float64), self, self._new_id())
        self._watched.append((name if name is not None else f"p{len(self._watched)}", v))
        return v

    @property
    def watched(self) -> list[tuple[str, Var]]:
        return list(self._watched)

    def __len__(self) -> int:
        return len(self._records)


def constant(value) -> Var:
    """A value that never receives gradient."""
    return Var(value)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _make(value: np.ndarray, parents: Sequence[Var], vjp: Callable) -> Var:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced")
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = p.tape
    if tape is None:
        return Var(value)
    out = Var(value, tape, tape._new_id())
    ids = tuple(p.id if p.tape is tape else None for p in parents)
    tape._records.append((out.id, ids, vjp))
    return out


def backward(tape: GradTape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every watched parameter, keyed by name.

    Parameters not on the path to ``loss`` get zeros.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.tape is tape:
        grads[loss.id] = np.ones_like(loss.value)
    for out_id, ids, vjp in reversed(tape._records):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for pid, pg in zip(ids, vjp(g)):
            if pid is None or pg is None:
                continue
            prev = grads.get(pid)
            grads[pid] = pg if prev is None else prev + pg
    return {name: grads.get(v.id, np.zeros_like(v.value)) for name, v in tape._watched}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives

def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a: Var, c: float) -> Var:
    return _make(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def relu(a: Var) -> Var:
    av = a.value
    if a.tape is not None and av.size:
        a.tape.relu_margin = min(a.tape.relu_margin, float(np.min(np.abs(av))))
    mask = av > 0
    return _make(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def total(a: Var) -> Var:
    shape = a.shape
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Var) -> Var:
    shape, n = a.shape, a.value.size
    return _make(np.asarray(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def row_norms(a: Var) -> Var:
    """Euclidean norm of each row of a 2-D value; subgradient 0 at the origin."""
    av = a.value
    n = np.sqrt(np.einsum("ij,ij->i", av, av))
    safe = np.where(n > 0, n, 1.0)
    return _make(n, (a,), lambda g: ((g / safe)[:, None] * av * (n > 0)[:, None],))


def l2_normalize_rows(a: Var) -> Var:
    av = a.value
    n = np.sqrt(np.einsum("ij,ij->i", av, av))
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero vector")
    u = av / n[:, None]

    def vjp(g):
        return ((g - u * np.einsum("ij,ij->i", g, u)[:, None]) / n[:, None],)

    return _make(u, (a,), vjp)


def softmax_cross_entropy(logits: Var, labels) -> Var:
    """Mean over rows of -log softmax(logits)[label]."""
    z = logits.value
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ValueError("logits must be (B, C) with one label per row")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.asarray(np.mean(lse - shifted[rows, y]))

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, y] -= 1.0
        return (p * (float(g) / z.shape[0]),)

    return _make(loss, (logits,), vjp)


def conv2d(x: Var, w: Var, b: Var) -> Var:
    """Stride-1 'same' 2-D convolution, NCHW layout, odd square-ish kernel."""
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
        raise ValueError(f"conv2d shape mismatch x{xv.shape} w{wv.shape}")
    out = kernels.conv2d_forward(xv, wv, b.value)

    def vjp(g):
        dx, dw, db = kernels.conv2d_backward(xv, wv, g)
        return dx, dw, db

    return _make(out, (x, w, b), vjp)


def mean_pool2(x: Var) -> Var:
    """2x2 non-overlapping mean pooling over the last two axes (even extents)."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("mean_pool2 needs even spatial extents")
    out = x.value.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------- optimizer

@dataclass
class SgdState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        # lr == 0 is allowed: a null step is a useful reduction case
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def fresh(self) -> "SgdState":
        return SgdState(self.lr, self.momentum, self.weight_decay)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             state: SgdState) -> dict[str, np.ndarray]:
    """One momentum-SGD step; returns new parameter arrays and updates ``state.velocity``.

    v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
    """
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"velocity shape mismatch for {name!r}")
        v = state.momentum * v + (g + state.weight_decay * p)
        state.velocity[name] = v
        out[name] = p - state.lr * v
    return out


# ---------------------------------------------------------------- checking

def finite_difference(fn: Callable[[dict[str, np.ndarray]], float], params: Mapping[str, np.ndarray],
                      eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite-difference gradient of a scalar function of named arrays."""
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(base)
            flat[i] = orig - eps
            fm = fn(base)
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * eps)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradcheck(build: Callable[[GradTape, dict[str, Var]], Var], params: Mapping[str, np.ndarray],
              eps: float = 1e-5) -> tuple[float, float]:
    """Compare autodiff with central differences for ``build(tape, vars) -> scalar``.

    Returns (max relative error, smallest relu input magnitude seen).
    """
    tape = GradTape()
    pv = {k: tape.watch(v, k) for k, v in params.items()}
    loss = build(tape, pv)
    auto = backward(tape, loss)

    def f(p):
        t = GradTape()
        return float(build(t, {k: t.watch(v, k) for k, v in p.items()}).value)

    num = finite_difference(f, params, eps)
    err = max(relative_error(auto[k], num[k]) for k in params)
    return err, tape.relu_margin
