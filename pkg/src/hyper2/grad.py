"""A small reverse-mode tape over batched numpy arrays.

Only the handful of primitives the scoring path needs are provided. Values are
float64 arrays; parameters enter the tape through :meth:`Tape.gather`, which
records (table, row) slots so that :meth:`Tape.backward` can return sparse
per-row gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .ball import ARTANH_MAX


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("tape", "value", "id")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", value: np.ndarray, id_: int):
        self.tape = tape
        self.value = value
        self.id = id_

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"


@dataclass
class _Record:
    out: int
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Slot:
    table: str
    rows: np.ndarray
    valid: np.ndarray | None


class GradientStore:
    """Sparse Euclidean gradients keyed by (table, row); accumulation is additive."""

    def __init__(self):
        self._tables: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def accumulate(self, table: str, rows: np.ndarray, grads: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        if len(rows) == 0:
            return
        grads = np.asarray(grads, dtype=np.float64).reshape(len(rows), -1)
        if table in self._tables:
            old_rows, old_grads = self._tables[table]
            rows = np.concatenate([old_rows, rows])
            grads = np.concatenate([old_grads, grads])
        uniq, inverse = np.unique(rows, return_inverse=True)
        merged = np.zeros((len(uniq), grads.shape[1]))
        np.add.at(merged, inverse, grads)
        self._tables[table] = (uniq, merged)

    def __add__(self, other: "GradientStore") -> "GradientStore":
        out = GradientStore()
        for store in (self, other):
            for table, (rows, grads) in store._tables.items():
                out.accumulate(table, rows, grads)
        return out

    def __len__(self) -> int:
        return sum(len(rows) for rows, _ in self._tables.values())

    def __contains__(self, key) -> bool:
        table, row = key
        return table in self._tables and row in set(self._tables[table][0].tolist())

    def __getitem__(self, key) -> np.ndarray:
        table, row = key
        rows, grads = self._tables[table]
        pos = np.searchsorted(rows, row)
        if pos >= len(rows) or rows[pos] != row:
            raise KeyError(key)
        return grads[pos]

    def tables(self) -> list[str]:
        return sorted(self._tables)

    def table(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """``(rows, grads)`` for one table; empty arrays if untouched."""
        if name not in self._tables:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 0))
        return self._tables[name]

    def touched(self) -> set[tuple[str, int]]:
        return {(t, int(r)) for t, (rows, _) in self._tables.items() for r in rows}

    def dense(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        out = np.zeros(shape)
        rows, grads = self.table(name)
        if len(rows):
            out[rows] = grads.reshape((len(rows),) + tuple(shape[1:]))
        return out


class Tape:
    """Records primitive ops in execution order. With ``record=False`` it only computes values."""

    def __init__(self, record: bool = True):
        self.record = record
        self._records: list[_Record] = []
        self._slots: dict[int, _Slot] = {}
        self._next = 0

    def __len__(self) -> int:
        return len(self._records)

    def _new(self, value) -> Var:
        v = Var(self, np.asarray(value, dtype=np.float64), self._next)
        self._next += 1
        return v

    def constant(self, value) -> Var:
        return self._new(value)

    def gather(self, table: str, values: np.ndarray, rows, valid=None) -> Var:
        """Look up ``values[rows]`` as a differentiable leaf.

        Entries where ``valid`` is False read as zeros and receive no gradient.
        """
        rows = np.asarray(rows, dtype=np.int64)
        if valid is None:
            out = values[rows]
        else:
            valid = np.asarray(valid, dtype=bool)
            out = values[np.where(valid, rows, 0)]
            out = np.where(valid.reshape(valid.shape + (1,) * (out.ndim - valid.ndim)), out, 0.0)
        v = self._new(out)
        if self.record:
            self._slots[v.id] = _Slot(table, rows, valid)
        return v

    def _op(self, value, inputs: Sequence[Var], vjp) -> Var:
        out = self._new(value)
        if self.record:
            self._records.append(_Record(out.id, tuple(v.id for v in inputs), vjp))
        return out

    def backward(self, loss: Var) -> GradientStore:
        if not self.record:
            raise TapeError("tape was created with record=False")
        if loss.tape is not self:
            raise TapeError("loss does not belong to this tape")
        if loss.value.size != 1:
            raise TapeError("backward needs a scalar loss")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for rec in reversed(self._records):
            if rec.out > loss.id:
                continue
            g = grads.pop(rec.out, None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if inp >= rec.out:
                    raise TapeError(f"slot {inp} consumed before it was written (cycle)")
                if gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        store = GradientStore()
        for vid, slot in self._slots.items():
            g = grads.get(vid)
            if g is None:
                continue
            rows, gg = slot.rows, g
            if slot.valid is not None:
                keep = slot.valid
                rows, gg = rows[keep], gg[keep]
            store.accumulate(slot.table, rows.ravel(), gg.reshape(rows.size, -1))
        return store


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("no Var among operands")


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t._op(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t._op(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    return t._op(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    out = av / bv
    return t._op(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def sum_last(x: Var, keepdims: bool = True) -> Var:
    shape = x.shape
    return x.tape._op(x.value.sum(axis=-1, keepdims=keepdims), (x,),
                      lambda g: (np.broadcast_to(g if keepdims else g[..., None], shape),))


def mean_all(x: Var) -> Var:
    shape, n = x.shape, x.value.size
    return x.tape._op(x.value.mean(), (x,), lambda g: (np.broadcast_to(g / n, shape),))


def sqrt(x: Var) -> Var:
    out = np.sqrt(x.value)
    return x.tape._op(out, (x,), lambda g: (g / (2 * out),))


def clamp_min(x: Var, lo: float) -> Var:
    """``max(x, lo)``; zero gradient where the clamp is active."""
    active = x.value < lo
    return x.tape._op(np.where(active, lo, x.value), (x,), lambda g: (np.where(active, 0.0, g),))


def clip(x: Var, lo: float, hi: float) -> Var:
    inside = (x.value >= lo) & (x.value <= hi)
    return x.tape._op(np.clip(x.value, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return x.tape._op(out, (x,), lambda g: (g * (1 - out * out),))


def artanh(x: Var) -> Var:
    """Inverse tanh with arguments clamped to ``±ARTANH_MAX``; zero gradient past the clamp."""
    v = x.value
    inside = np.abs(v) <= ARTANH_MAX
    c = np.clip(v, -ARTANH_MAX, ARTANH_MAX)
    return x.tape._op(np.arctanh(c), (x,), lambda g: (np.where(inside, g / (1 - c * c), 0.0),))


def log(x: Var) -> Var:
    v = x.value
    return x.tape._op(np.log(v), (x,), lambda g: (g / v,))


def sigmoid(x: Var) -> Var:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return x.tape._op(out, (x,), lambda g: (g * out * (1 - out),))


def log_sigmoid(x: Var) -> Var:
    v = x.value
    return x.tape._op(-np.logaddexp(0.0, -v), (x,), lambda g: (g * 0.5 * (1.0 - np.tanh(0.5 * v)),))


def where(cond, a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return t._op(np.where(cond, a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                            _unbroadcast(np.where(cond, 0.0, g), sb)))


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.tape._op(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Var], axis: int) -> Var:
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return t._op(np.concatenate([x.value for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def min_subgradient_mask(inputs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """One-hot routing of an element-wise min: shape ``(len(inputs), ...)``.

    Each coordinate routes to exactly one argmin input, ties to the lowest index.
    """
    stacked = np.asarray(inputs, dtype=np.float64)
    if stacked.ndim == 0 or stacked.shape[0] == 0:
        raise ValueError("min_subgradient_mask needs at least one input")
    idx = np.argmin(stacked, axis=0)
    return np.arange(stacked.shape[0]).reshape((-1,) + (1,) * idx.ndim) == idx[None]


REDUCERS = ("min", "max", "mean")


def reduce_slots(x: Var, mask: np.ndarray, kind: str) -> Var:
    """Reduce ``(B, S, d)`` over the slot axis using only slots where ``mask`` (B, S) is True.

    Rows with no valid slot produce zeros.
    """
    if kind not in REDUCERS:
        raise ValueError(f"unknown reducer {kind!r}")
    v = x.value
    m = np.asarray(mask, dtype=bool)[..., None]
    any_valid = m.any(axis=1)
    if kind == "mean":
        count = np.maximum(m.sum(axis=1), 1)
        # summing in sorted order makes the result independent of slot order
        out = np.sort(np.where(m, v, 0.0), axis=1).sum(axis=1) / count
        out = np.where(any_valid, out, 0.0)
        return x.tape._op(out, (x,),
                          lambda g: (np.where(m, (g / count)[:, None, :], 0.0),))
    fill = np.inf if kind == "min" else -np.inf
    filled = np.where(m, v, fill)
    # argmin/argmax return the first hit: ties go to the lowest slot
    idx = np.argmin(filled, axis=1) if kind == "min" else np.argmax(filled, axis=1)
    out = np.take_along_axis(filled, idx[:, None, :], axis=1)[:, 0, :]
    out = np.where(any_valid, out, 0.0)

    def vjp(g):
        routed = np.zeros_like(v)
        np.put_along_axis(routed, idx[:, None, :], np.where(any_valid, g, 0.0)[:, None, :], axis=1)
        return (routed,)

    return x.tape._op(out, (x,), vjp)


def riemannian_rescale(grad, x, k: float = 1.0) -> np.ndarray:
    """Multiply Euclidean gradients by the inverse metric ``(1 - k|x|^2)^2 / 4``."""
    x = np.asarray(x, dtype=np.float64)
    factor = (1.0 - k * np.sum(x * x, axis=-1, keepdims=True)) ** 2 / 4.0
    return np.asarray(grad, dtype=np.float64) * factor
