"""Dense 2-D tensors with a recorded tape and reverse-mode gradients.

Every value is a float64 matrix (scalars are 1x1).  Ops executed while a
Tape is active append a backward rule; Tape.backward walks the records in
reverse and accumulates gradients into ``Tensor.grad``.  There is no
broadcasting beyond row-vector bias addition: shape mismatches raise
immediately, naming the op.

Graph aggregation is expressed with gather/segment primitives instead of
sparse matrices: ``row_gather`` pulls per-edge rows, ``segment_sum`` and
``softmax_by_segment`` reduce them back per target node.
"""
from __future__ import annotations

import threading
import weakref
from typing import Callable, Optional, Sequence

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A (rows, cols) float64 matrix, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        # (weakref to tape, record index).  A weak reference keeps recorded
        # tensors and their tape from forming reference cycles, so whole
        # per-step graphs are reclaimed by refcounting alone.
        self.tape_id: Optional[tuple] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def scalar(x: float) -> Tensor:
    return Tensor(np.array([[float(x)]]), requires_grad=False)


class Tape:
    """Ordered record of executed ops; recording order is topological order."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable) -> None:
        out.tape_id = (weakref.ref(self), len(self._records))
        self._records.append((out, tuple(parents), backward))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every tracked tensor reachable from loss."""
        if loss.data.shape != (1, 1):
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise ValueError("backward on an empty tape")
        if loss.tape_id is None or loss.tape_id[0]() is not self:
            raise ValueError("loss was not recorded on this tape")
        loss.accumulate_grad(np.ones((1, 1)))
        for out, parents, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for parent, g in zip(parents, grads):
                if g is None:
                    continue
                if parent.requires_grad or _on_tape(parent, self):
                    parent.accumulate_grad(g)


def _on_tape(t: Tensor, tape: Tape) -> bool:
    return t.tape_id is not None and t.tape_id[0]() is tape


def _tracked(t: Tensor, tape: Optional[Tape]) -> bool:
    if tape is None:
        return False
    return t.requires_grad or _on_tape(t, tape)


def _emit(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(_tracked(p, tape) for p in parents):
        tape.record(out, parents, backward)
    return out


def _shape_error(op: str, *shapes) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _emit(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a (1, d) row bias added to every row."""
    if a.shape == b.shape:
        def backward(g):
            return (g, g)
    elif b.shape == (1, a.shape[1]):
        def backward(g):
            return (g, g.sum(axis=0, keepdims=True))
    else:
        raise _shape_error("add", a.shape, b.shape)
    return _emit(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)

    def backward(g):
        return (g, -g)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)

    def backward(g):
        return (g * b.data, g * a.data)

    return _emit(a.data * b.data, (a, b), backward)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of x by the scalar s[i, 0]."""
    if s.shape != (x.shape[0], 1):
        raise _shape_error("scale_rows", x.shape, s.shape)

    def backward(g):
        return (g * s.data, (g * x.data).sum(axis=1, keepdims=True))

    return _emit(x.data * s.data, (x, s), backward)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g,)

    return _emit(x.data + c, (x,), backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _emit(x.data * c, (x,), backward)


def pow_scalar(x: Tensor, p: float) -> Tensor:
    """x ** p elementwise; callers keep x in the domain of the power."""
    out = x.data ** p

    def backward(g):
        if p == 0.0:  # constant output; avoids 0 * x**-1 at x=0
            return (np.zeros_like(x.data),)
        return (g * p * x.data ** (p - 1.0),)

    return _emit(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where x was in range."""
    mask = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * mask,)

    return _emit(np.clip(x.data, lo, hi), (x,), backward)


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        return (g.T,)

    return _emit(x.data.T.copy(), (x,), backward)


def row_gather(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of x; duplicates allowed (gradients scatter-add back)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"row_gather: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError("row_gather: index out of range")

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit(x.data[idx], (x,), backward)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x grouped by segment id into a (num_segments, d) matrix."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise _shape_error("segment_sum", x.shape, seg.shape)
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError("segment_sum: segment id out of range")
    out = np.zeros((num_segments, x.shape[1]))
    np.add.at(out, seg, x.data)

    def backward(g):
        return (g[seg],)

    return _emit(out, (x,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_cols: empty input")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise _shape_error("concat_cols", *[p.shape for p in parts])
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _emit(np.hstack([p.data for p in parts]), tuple(parts), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _emit(np.where(mask, x.data, 0.0), (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _emit(np.where(mask, x.data, slope * x.data), (x,), backward)


def elu(x: Tensor) -> Tensor:
    mask = x.data > 0
    neg = np.exp(np.minimum(x.data, 0.0)) - 1.0
    out = np.where(mask, x.data, neg)

    def backward(g):
        return (g * np.where(mask, 1.0, neg + 1.0),)

    return _emit(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp.
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (g / x.data,)

    return _emit(np.log(x.data), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _emit(out, (x,), backward)


def softmax_by_segment(logits: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax-normalize a (m, 1) logit column within each segment."""
    if logits.shape[1] != 1:
        raise _shape_error("softmax_by_segment", logits.shape)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (logits.shape[0],):
        raise _shape_error("softmax_by_segment", logits.shape, seg.shape)
    col = logits.data[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, col)
    z = np.exp(col - seg_max[seg])
    denom = np.bincount(seg, weights=z, minlength=num_segments)
    alpha = z / denom[seg]
    out = alpha[:, None]

    def backward(g):
        gcol = g[:, 0]
        inner = np.bincount(seg, weights=gcol * alpha, minlength=num_segments)
        return ((alpha * (gcol - inner[seg]))[:, None],)

    return _emit(out, (logits,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a (1, d) row; mean_rows of an (n, 1) column is a scalar."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("mean_rows: empty tensor")

    def backward(g):
        return (np.repeat(g, n, axis=0) / n,)

    return _emit(x.data.mean(axis=0, keepdims=True), (x,), backward)


def batchnorm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Batch normalization over rows using batch statistics.

    Returns (output, batch_mean, batch_var) so layers can maintain running
    statistics for evaluation mode.  Variance is the biased (population)
    estimate, used both for normalization and for the running buffers.
    """
    n, d = x.shape
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise _shape_error("batchnorm_train", x.shape, gamma.shape, beta.shape)
    if n < 2:
        raise ValueError("batchnorm_train: need at least 2 rows")
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        dxhat = g * gamma.data
        dx = (
            inv_std
            / n
            * (n * dxhat - dxhat.sum(axis=0, keepdims=True) - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        )
        return (dx, dgamma, dbeta)

    return _emit(out, (x, gamma, beta), backward), mu[0], var[0]


def batchnorm_eval(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization with frozen running statistics (inference mode)."""
    n, d = x.shape
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise _shape_error("batchnorm_eval", x.shape, gamma.shape, beta.shape)
    rm = np.asarray(running_mean, dtype=np.float64).reshape(1, d)
    rv = np.asarray(running_var, dtype=np.float64).reshape(1, d)
    inv_std = 1.0 / np.sqrt(rv + eps)
    xhat = (x.data - rm) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        return (g * gamma.data * inv_std, dgamma, dbeta)

    return _emit(out, (x, gamma, beta), backward)
