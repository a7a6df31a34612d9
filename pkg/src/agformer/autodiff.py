"""Tape-based reverse-mode autodiff over dense float64 tensors.

The tape is rebuilt on every forward pass (define-by-run). Ops record a
backward closure only while a `Tape` is active *and* at least one input
requires gradients, so evaluation without a tape is plain numpy with no
bookkeeping. Gradients accumulate into `Tensor.grad` in reverse recording
order, which is a fixed, deterministic order: two runs over the same data
produce bit-identical gradients.

Only what the model needs is here: rank <= 2 tensors, row-wise broadcast
for bias addition, and nothing fancier.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, TapeError


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Immutable by convention after creation, except `grad` (and `data`
    in-place updates by the optimizer between tapes).
    """

    __slots__ = ("data", "grad", "node_id", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensor not supported (max rank 2), shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


class _TapeOp:
    __slots__ = ("input_ids", "output_id", "output", "backward")

    def __init__(self, input_ids, output_id, output, backward):
        self.input_ids = input_ids
        self.output_id = output_id
        self.output = output
        self.backward = backward


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    def __init__(self):
        self._ops: list[_TapeOp] = []
        self._ids: dict[int, int] = {}  # id(tensor) -> node id on this tape
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def __len__(self) -> int:
        return len(self._ops)

    def _assign_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[id(t)] = nid
            t.node_id = nid
        return nid

    def record(self, output: Tensor, inputs: Sequence[Tensor],
               backward: Callable[[np.ndarray], None]) -> None:
        """Attach one op to the tape. `backward(g)` must accumulate into
        the inputs' grads; it runs once during the reverse sweep."""
        input_ids = tuple(self._assign_id(t) for t in inputs)
        out_id = self._assign_id(output)
        self._ops.append(_TapeOp(input_ids, out_id, output, backward))


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _finish(out_data: np.ndarray, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True)
    tape.record(out, inputs, backward)
    return out


def custom_op(out_data: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Extension point: wrap a numpy result as a tensor, recording `backward`
    on the active tape when any input requires gradients."""
    return _finish(out_data, inputs, backward)


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep: populate grads of everything `loss` depends on.

    `loss` must be a scalar and the tape's final node. Accumulates into
    pre-existing grads, so per-batch accumulation across tapes works.
    """
    if loss.ndim != 0:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape._ops:
        raise TapeError("tape is empty")
    if tape._ops[-1].output is not loss:
        raise TapeError("loss is not the final node of this tape (detached graph?)")
    loss.accumulate_grad(np.ones_like(loss.data))
    for op in reversed(tape._ops):
        g = op.output.grad
        if g is None:
            continue  # dead branch
        op.backward(g)


# --- primitive ops -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _finish(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs rank 2, got {a.shape}")
    out = a.data.T

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return _finish(out, (a,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _finish(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _finish(out, (a,), bwd)


def scalar_mul(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a rank-0 tensor (gradient flows to both)."""
    if s.ndim != 0:
        raise ShapeError(f"scalar_mul scale must be rank 0, got {s.shape}")
    out = a.data * s.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * s.data)
        if s.requires_grad:
            s.accumulate_grad(np.asarray(np.sum(g * a.data)))

    return _finish(out, (a, s), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _finish(out, (a,), bwd)


def bias_add(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise broadcast add: a[m, n] + b[n]."""
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_add shape mismatch: {a.shape} + {b.shape}")
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    return _finish(out, (a, b), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs a non-empty rank-2 input, got {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_rows input contains NaN/Inf")
    y = x.data - x.data.max(axis=1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _finish(y, (x,), bwd)


def layer_norm_rows(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization (population variance) followed by an affine map."""
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"layer_norm_rows needs a non-empty rank-2 input, got {x.shape}")
    n = x.shape[1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm_rows affine shapes {gamma.shape}/{beta.shape} do not match width {n}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g: np.ndarray) -> None:
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=0))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat - dxhat.mean(axis=1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            x.accumulate_grad(inv * term)

    return _finish(out, (x, gamma, beta), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-rate) so eval is identity.

    The RNG is consumed only in training mode so eval never perturbs
    downstream random streams.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    out = x.data * keep * factor

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * keep * factor)

    return _finish(out, (x,), bwd)


def spmm(op, x: Tensor) -> Tensor:
    """Apply a constant sparse linear operator to a dense tensor.

    `op` must expose `shape`, `matmat(ndarray)` and `rmatmat(ndarray)`
    (transpose apply). No gradient flows to the operator.
    """
    if x.ndim != 2 or op.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {op.shape} x {x.shape}")
    out = op.matmat(x.data)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(op.rmatmat(g))

    return _finish(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape))

    return _finish(out, (x,), bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows: [m, n] -> [n]."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows needs a non-empty rank-2 input, got {x.shape}")
    m = x.shape[0]
    out = x.data.mean(axis=0)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / m, x.shape))

    return _finish(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _finish(out, (x,), bwd)
