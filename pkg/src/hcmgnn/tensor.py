"""Dense 2-D float64 tensors with a reverse-mode gradient tape.

Every differentiable quantity in the model is a `Tensor`: a row-major
float64 matrix, optionally tracked on the active `Tape`.  The tape is
define-by-run: ops executed while a tape is active append their backward
rules, and `Tape.backward(loss)` replays them in reverse.  Without an
active tape ops just compute values (inference mode).

Tapes are thread-local, so concurrent evaluations must each open their
own `Tape`.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "TapeError",
    "tensor", "constant", "zeros", "ones",
    "matmul", "transpose", "add", "hadamard", "smul",
    "concat_cols", "concat_rows", "gather_rows",
    "segment_sum", "segment_mean", "mean_rows",
    "row_softmax", "segment_softmax",
    "leaky_relu", "elu", "tanh", "sigmoid", "sum_sq",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to the primitive's rule."""


class TapeError(RuntimeError):
    """Tape misuse: non-scalar loss, double backward, etc."""


class Tensor:
    """A rows x cols float64 matrix, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_LOCAL = threading.local()


def _tape_stack() -> list:
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one reverse-mode sweep."""

    def __init__(self):
        self._records: list[tuple[Tensor, "callable"]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted: exiting a non-active tape")
        stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Populate grads of every requires_grad ancestor of `loss`."""
        if loss.shape != (1, 1):
            raise TapeError(f"loss must be 1x1, got {loss.shape}")
        if self._consumed:
            raise TapeError("backward already ran on this tape; build a new tape")
        self._consumed = True
        loss.grad = np.ones((1, 1))
        for out, rule in reversed(self._records):
            if out.grad is None or not out.requires_grad:
                continue
            rule(out.grad)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, rule))
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def ones(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones((rows, cols)), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _record(out, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.T.copy())

    def rule(g):
        _accumulate(a, g.T)

    return _record(out, (a,), rule)


def _broadcast_kind(a: Tensor, b: Tensor, opname: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.shape == (1, a.shape[1]):
        return "row"
    if b.shape == (a.shape[0], 1):
        return "col"
    raise ShapeError(f"{opname}: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; b may be a 1 x cols row or rows x 1 column."""
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b, "add")
    out = Tensor(a.data + b.data)

    def rule(g):
        _accumulate(a, g)
        if kind == "same":
            _accumulate(b, g)
        elif kind == "row":
            _accumulate(b, g.sum(axis=0, keepdims=True))
        else:
            _accumulate(b, g.sum(axis=1, keepdims=True))

    return _record(out, (a, b), rule)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b; b may be a 1 x cols row or rows x 1 column."""
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b, "hadamard")
    out = Tensor(a.data * b.data)

    def rule(g):
        _accumulate(a, g * b.data)
        gb = g * a.data
        if kind == "row":
            gb = gb.sum(axis=0, keepdims=True)
        elif kind == "col":
            gb = gb.sum(axis=1, keepdims=True)
        _accumulate(b, gb)

    return _record(out, (a, b), rule)


def smul(a: Tensor, s) -> Tensor:
    """Scale by a python float or a differentiable 1x1 tensor."""
    a = _as_tensor(a)
    if isinstance(s, Tensor):
        if s.shape != (1, 1):
            raise ShapeError(f"smul: scalar operand must be 1x1, got {s.shape}")
        out = Tensor(a.data * s.data[0, 0])

        def rule(g):
            _accumulate(a, g * s.data[0, 0])
            _accumulate(s, np.array([[float((g * a.data).sum())]]))

        return _record(out, (a, s), rule)

    c = float(s)
    out = Tensor(a.data * c)

    def rule(g):
        _accumulate(a, g * c)

    return _record(out, (a,), rule)


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols: empty input list")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row mismatch {p.shape} vs {parts[0].shape}")
    widths = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def rule(g):
        off = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[:, off:off + w])
            off += w

    return _record(out, tuple(parts), rule)


def concat_rows(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: empty input list")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: col mismatch {p.shape} vs {parts[0].shape}")
    heights = [p.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))

    def rule(g):
        off = 0
        for p, h in zip(parts, heights):
            _accumulate(p, g[off:off + h, :])
            off += h

    return _record(out, tuple(parts), rule)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows a[idx]; repeated indices accumulate gradient."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-D, got ndim={idx.ndim}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx])

    def rule(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accumulate(a, ga)

    return _record(out, (a,), rule)


def _check_segments(seg: np.ndarray, nrows: int, num_segments: int, opname: str):
    if seg.ndim != 1 or seg.size != nrows:
        raise ShapeError(f"{opname}: need one segment id per row ({nrows}), got {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ShapeError(f"{opname}: segment id out of range [0, {num_segments})")


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    """out[j] = sum of rows i with segments[i] == j; empty segments give 0."""
    a = _as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    _check_segments(seg, a.shape[0], num_segments, "segment_sum")
    acc = np.zeros((num_segments, a.shape[1]))
    np.add.at(acc, seg, a.data)
    out = Tensor(acc)

    def rule(g):
        _accumulate(a, g[seg])

    return _record(out, (a,), rule)


def segment_mean(a: Tensor, segments, num_segments: int) -> Tensor:
    """out[j] = mean of rows i with segments[i] == j; empty segments give 0."""
    a = _as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    _check_segments(seg, a.shape[0], num_segments, "segment_mean")
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    acc = np.zeros((num_segments, a.shape[1]))
    np.add.at(acc, seg, a.data)
    safe = np.maximum(counts, 1.0)
    out = Tensor(acc / safe[:, None])

    def rule(g):
        _accumulate(a, g[seg] / safe[seg][:, None])

    return _record(out, (a,), rule)


def mean_rows(a: Tensor) -> Tensor:
    """Column means as a 1 x cols row."""
    a = _as_tensor(a)
    if a.shape[0] == 0:
        raise ShapeError("mean_rows: empty tensor")
    n = a.shape[0]
    out = Tensor(a.data.mean(axis=0, keepdims=True))

    def rule(g):
        _accumulate(a, np.repeat(g, n, axis=0) / n)

    return _record(out, (a,), rule)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along each row; rows sum to 1."""
    a = _as_tensor(a)
    if a.data.size == 0:
        raise ShapeError("row_softmax: softmax over an empty set")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def rule(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _record(out, (a,), rule)


def segment_softmax(a: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax of a column vector normalized within each segment.

    Segment sizes may vary; every listed segment with at least one row
    sums to 1 afterwards.  An entirely empty input is rejected.
    """
    a = _as_tensor(a)
    if a.shape[1] != 1:
        raise ShapeError(f"segment_softmax: need a column vector, got {a.shape}")
    if a.shape[0] == 0:
        raise ShapeError("segment_softmax: softmax over an empty set")
    seg = np.asarray(segments, dtype=np.int64)
    _check_segments(seg, a.shape[0], num_segments, "segment_softmax")

    x = a.data[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, x)
    e = np.exp(x - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    y = e / denom[seg]
    out = Tensor(y[:, None])

    def rule(g):
        gy = g[:, 0] * y
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, gy)
        _accumulate(a, (gy - y * dot[seg])[:, None])

    return _record(out, (a,), rule)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.where(a.data > 0, a.data, slope * a.data))
    deriv = np.where(a.data > 0, 1.0, slope)

    def rule(g):
        _accumulate(a, g * deriv)

    return _record(out, (a,), rule)


def elu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    ex = np.exp(np.minimum(a.data, 0.0))
    out = Tensor(np.where(a.data > 0, a.data, ex - 1.0))
    deriv = np.where(a.data > 0, 1.0, ex)

    def rule(g):
        _accumulate(a, g * deriv)

    return _record(out, (a,), rule)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def rule(g):
        _accumulate(a, g * (1.0 - y * y))

    return _record(out, (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # stable in both tails
    y = np.where(a.data >= 0,
                 1.0 / (1.0 + np.exp(-np.maximum(a.data, 0))),
                 np.exp(np.minimum(a.data, 0)) / (1.0 + np.exp(np.minimum(a.data, 0))))
    out = Tensor(y)

    def rule(g):
        _accumulate(a, g * y * (1.0 - y))

    return _record(out, (a,), rule)


def sum_sq(a: Tensor) -> Tensor:
    """Squared L2 norm of all entries, as a 1x1 tensor."""
    a = _as_tensor(a)
    out = Tensor(np.array([[float((a.data * a.data).sum())]]))

    def rule(g):
        _accumulate(a, 2.0 * a.data * g[0, 0])

    return _record(out, (a,), rule)
