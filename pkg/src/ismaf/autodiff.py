"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every differentiable operation in execution order.  A
``Tensor`` is an immutable value wrapper: either a constant (``tape is None``)
or bound to the tape that produced it.  ``Tape.backward`` walks the record
list in reverse, accumulating vector-Jacobian products into per-node gradient
buffers keyed by node id.

Single-threaded by design: one tape per training context.  Tensors are safe
to share read-only across threads; a tape must never be mutated concurrently.
"""

from __future__ import annotations

import logging
import zlib

import numpy as np

log = logging.getLogger(__name__)

EPS = 1e-12
# Additive mask value for disallowed attention slots; large enough that
# exp(x - rowmax) underflows to exactly 0, small enough to stay finite.
NEG_MASK = -1e30


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense float64 array, optionally bound to a tape node."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

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
        return float(self.data)

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor(shape={self.data.shape}, {tag})"

    # Operator sugar; all real work happens in the module-level ops.
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations plus gradient buffers for backward."""

    def __init__(self):
        self._records = []  # (out_id, parent_ids, vjp)
        self._grads: dict[int, np.ndarray] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, value) -> Tensor:
        """Register a leaf (trainable input) on this tape."""
        return Tensor(value, tape=self, node_id=self._new_id())

    def emit(self, data, parents, vjp) -> Tensor:
        """Record one op.  ``vjp(grad_out)`` must return one gradient (or
        None) per parent, aligned with ``parents``."""
        out = Tensor(data, tape=self, node_id=self._new_id())
        self._records.append((out.node_id, tuple(p.node_id for p in parents), vjp))
        return out

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate gradients of a scalar loss w.r.t. every reachable node."""
        if loss.tape is not self:
            raise ValueError("loss tensor was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        grads = self._grads
        grads.clear()
        grads[loss.node_id] = np.ones_like(loss.data)
        # First stores keep the vjp output without copying; such buffers may
        # alias another node's gradient, so they are never mutated in place.
        borrowed: set[int] = set()
        for out_id, parent_ids, vjp in reversed(self._records):
            g = grads.get(out_id)
            if g is None:
                continue
            for pid, pg in zip(parent_ids, vjp(g)):
                if pid is None or pg is None:
                    continue
                buf = grads.get(pid)
                if buf is None:
                    # asarray: 0-d numpy scalars must become writable arrays
                    # or later in-place accumulation would silently rebind.
                    grads[pid] = np.asarray(pg)
                    borrowed.add(pid)
                elif pid in borrowed:
                    grads[pid] = np.asarray(buf + pg)
                    borrowed.discard(pid)
                else:
                    buf += pg
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient buffer for a tensor; zeros if the loss never reached it.

        Buffers may share memory with one another; treat them as read-only.
        """
        if t.tape is not self:
            raise ValueError("tensor does not belong to this tape")
        g = self._grads.get(t.node_id)
        return np.zeros_like(t.data) if g is None else g


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands were recorded on different tapes")
    return tape


def _emit(tape, data, parents, vjp) -> Tensor:
    if tape is None:
        return Tensor(data)
    return tape.emit(data, parents, vjp)


def _pid(t: Tensor):
    return t.node_id if t.tape is not None else None


class _Parent:
    """Lightweight stand-in so emit() can mix tape and constant parents."""

    __slots__ = ("node_id",)

    def __init__(self, t: Tensor):
        self.node_id = _pid(t)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(tape, out, (_Parent(a), _Parent(b)), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(tape, out, (_Parent(a), _Parent(b)), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit(tape, out, (_Parent(a), _Parent(b)), vjp)


def div(a, b) -> Tensor:
    """Elementwise a / b with a sign-preserving 1e-12 guard on b."""
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)
    ad = a.data
    bsafe = np.where(b.data >= 0, b.data + EPS, b.data - EPS)
    out = ad / bsafe

    def vjp(g):
        ga = _unbroadcast(g / bsafe, ad.shape)
        gb = _unbroadcast(-g * ad / (bsafe * bsafe), b.data.shape)
        return ga, gb

    return _emit(tape, out, (_Parent(a), _Parent(b)), vjp)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _emit(a.tape, a.data * c, (_Parent(a),), vjp)


# ---------------------------------------------------------------------------
# linear algebra and layout


def matmul(a, b) -> Tensor:
    """Matrix product; 1-D operands follow numpy's promotion rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(
            f"matmul expects 1-D or 2-D operands, got {a.data.shape} x {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    tape = _tape_of(a, b)
    a2 = a.data if a.data.ndim == 2 else a.data[None, :]
    b2 = b.data if b.data.ndim == 2 else b.data[:, None]
    out2 = a2 @ b2
    out = out2
    if a.data.ndim == 1:
        out = out[0]
    if b.data.ndim == 1:
        out = out[..., 0] if a.data.ndim == 2 else out[0]

    def vjp(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = g2 @ b2.T
        gb = a2.T @ g2
        if a.data.ndim == 1:
            ga = ga.reshape(-1)
        if b.data.ndim == 1:
            gb = gb.reshape(-1)
        return ga, gb

    return _emit(tape, out, (_Parent(a), _Parent(b)), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.data.shape}")

    def vjp(g):
        return (g.T,)

    return _emit(a.tape, a.data.T, (_Parent(a),), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(orig),)

    return _emit(a.tape, out, (_Parent(a),), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    tape = _tape_of(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(tape, out, tuple(_Parent(t) for t in tensors), vjp)


def split(a, sizes, axis: int = 0) -> list[Tensor]:
    """Inverse of concat: split into pieces of the given sizes along axis."""
    a = as_tensor(a)
    if sum(sizes) != a.data.shape[axis]:
        raise ShapeError(
            f"split sizes {tuple(sizes)} do not cover axis {axis} of {a.data.shape}"
        )
    pieces = []
    start = 0
    for size in sizes:
        sl = [slice(None)] * a.data.ndim
        sl[axis] = slice(start, start + size)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            buf = np.zeros_like(a.data)
            buf[sl] = g
            return (buf,)

        pieces.append(_emit(a.tape, a.data[sl], (_Parent(a),), vjp))
        start += size
    return pieces


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[start:stop] = g
        return (buf,)

    return _emit(a.tape, a.data[start:stop], (_Parent(a),), vjp)


def gather_rows(a, indices) -> Tensor:
    """Select rows by an integer index array (the indices are constants)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(
            f"gather index out of range [0, {a.data.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _emit(a.tape, a.data[idx], (_Parent(a),), vjp)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of a 2-D tensor into ``num_segments`` groups."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments, a.data.shape[1]))
    np.add.at(out, seg, a.data)

    def vjp(g):
        return (g[seg],)

    return _emit(a.tape, out, (_Parent(a),), vjp)


def segment_max(a, segment_ids, num_segments: int) -> Tensor:
    """Per-segment max over rows; gradient flows to the first attaining row."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    x = a.data
    out = np.full((num_segments, x.shape[1]), -np.inf)
    np.maximum.at(out, seg, x)
    n_rows = x.shape[0]
    rows = np.arange(n_rows)[:, None]
    cand = np.where(x == out[seg], rows, n_rows)
    first = np.full(out.shape, n_rows, dtype=np.int64)
    np.minimum.at(first, seg, cand)

    def vjp(g):
        return (g[seg] * (rows == first[seg]),)

    return _emit(a.tape, out, (_Parent(a),), vjp)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _emit(a.tape, np.where(mask, a.data, 0.0), (_Parent(a),), vjp)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0

    def vjp(g):
        return (g * np.where(pos, 1.0, slope),)

    return _emit(
        a.tape, np.where(pos, a.data, slope * a.data), (_Parent(a),), vjp
    )


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _emit(a.tape, t, (_Parent(a),), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)

    def vjp(g):
        return (g * e,)

    return _emit(a.tape, e, (_Parent(a),), vjp)


def log(a) -> Tensor:
    """Natural log clamped below at 1e-12; gradient is 0 in the clamped zone."""
    a = as_tensor(a)
    xs = np.maximum(a.data, EPS)
    inside = a.data > EPS

    def vjp(g):
        return (g * np.where(inside, 1.0 / xs, 0.0),)

    return _emit(a.tape, np.log(xs), (_Parent(a),), vjp)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)

    def vjp(g):
        return (g * s,)

    return _emit(a.tape, np.abs(a.data), (_Parent(a),), vjp)


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full(shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(a.tape, out, (_Parent(a),), vjp)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction."""
    a = as_tensor(a)
    x = a.data if a.data.ndim == 2 else a.data[None, :]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = s if a.data.ndim == 2 else s[0]

    def vjp(g):
        g2 = g if g.ndim == 2 else g[None, :]
        gx = s * (g2 - (g2 * s).sum(axis=1, keepdims=True))
        return (gx if a.data.ndim == 2 else gx[0],)

    return _emit(a.tape, out, (_Parent(a),), vjp)


def row_l2_normalize(a) -> Tensor:
    """Divide each row by its L2 norm (+1e-12).  Rows must be nonzero for a
    meaningful gradient."""
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    denom = norm + EPS

    def vjp(g):
        dot = (g * x).sum(axis=1, keepdims=True)
        return (g / denom - x * dot / (np.maximum(norm, EPS) * denom * denom),)

    return _emit(a.tape, x / denom, (_Parent(a),), vjp)


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two 1-D vectors; returns 0 when both are zero.

    Denominator carries a 1e-12 guard, so the value stays inside [-1, 1].
    The gradient at a zero vector follows the documented zero convention.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(
            f"cosine_sim expects matching 1-D vectors, got {a.data.shape} and {b.data.shape}"
        )
    tape = _tape_of(a, b)
    na = np.sqrt((a.data * a.data).sum())
    nb = np.sqrt((b.data * b.data).sum())
    dot = float(a.data @ b.data)
    denom = na * nb + EPS
    c = dot / denom

    def vjp(g):
        if na < EPS or nb < EPS:
            return np.zeros_like(a.data), np.zeros_like(b.data)
        ga = g * (b.data - c * nb * a.data / na) / denom
        gb = g * (a.data - c * na * b.data / nb) / denom
        return ga, gb

    return _emit(tape, np.float64(c), (_Parent(a), _Parent(b)), vjp)


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: seeded mask scaled by 1/(1-rate) in training mode,
    identity in eval mode."""
    if not training or rate == 0.0:
        return as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = as_tensor(a)
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# parameters


def _name_rng(seed: int, name: str) -> np.random.Generator:
    # Per-name substream: reproducible regardless of creation order.
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode())])
    )


class ParamStore:
    """Named, seeded collection of trainable arrays.

    Creating the same (seed, name, shape) twice reproduces bitwise-identical
    initial values; each parameter draws from its own seed substream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._values: dict[str, np.ndarray] = {}

    def create(self, name: str, shape, init: str = "xavier", fan=None) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "xavier":
            if fan is None:
                if len(shape) == 2:
                    fan = (shape[0], shape[1])
                else:
                    fan = (shape[0] if shape else 1, 1)
            bound = np.sqrt(6.0 / (fan[0] + fan[1]))
            value = _name_rng(self.seed, name).uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self._values[name] = value
        return value

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def assign(self, name: str, value: np.ndarray) -> None:
        old = self._values[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != old.shape:
            raise ShapeError(
                f"assign to {name!r}: shape {value.shape} != {old.shape}"
            )
        self._values[name] = value

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def __contains__(self, name):
        return name in self._values

    def tensor(self, name: str) -> Tensor:
        return Tensor(self._values[name])

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        """Leaf tensors for every parameter, bound to the given tape."""
        return {name: tape.watch(value) for name, value in self._values.items()}

    def constants(self) -> dict[str, Tensor]:
        return {name: Tensor(value) for name, value in self._values.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self._values.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._values):
            missing = set(self._values) ^ set(state)
            raise ValueError(f"state does not match parameter set: {sorted(missing)}")
        for name, value in state.items():
            self.assign(name, value.copy())


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, store: ParamStore, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a dict of parameter tensors to a scalar Tensor and must be
    deterministic for fixed parameter values.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    tape = Tape()
    leaves = store.watch(tape)
    loss = f(leaves)
    tape.backward(loss)
    analytic = {name: tape.grad(t) for name, t in leaves.items()}

    consts = store.constants()
    worst = 0.0
    for name in store.names():
        base = store.value(name)
        work = base.copy()
        consts[name] = Tensor(work)
        flat = work.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(consts).data)
            flat[i] = orig - h
            f_minus = float(f(consts).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(an_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(an_flat[i] - numeric) / denom)
        consts[name] = Tensor(base)
    return worst
