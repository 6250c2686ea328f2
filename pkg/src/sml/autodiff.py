"""Minimal reverse-mode automatic differentiation on numpy buffers.

A ``Tape`` records every differentiable operation in execution order; calling
:func:`backward` replays the records in exact reverse order, accumulating
gradients with ``+=`` so fan-out is handled naturally.  Only the operations
needed by the session/item encoders and ranking losses are provided -- there
is deliberately no broadcasting beyond bias addition in :func:`dense`.

Scalars are represented as 0-d arrays.  Training code runs in float32; the
finite-difference checker :func:`grad_check` re-evaluates graphs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A numpy array plus an optional gradient buffer of the same shape."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(values, name: str | None = None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(np.asarray(values), requires_grad=True, name=name)


def constant(values, dtype=None, name: str | None = None) -> Tensor:
    arr = np.asarray(values, dtype=dtype)
    return Tensor(arr, requires_grad=False, name=name)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of operations; backward walks it once, in reverse."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._outputs: set[int] = set()

    @property
    def nodes(self) -> list[Node]:
        return self._nodes

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], None]) -> None:
        self._nodes.append(Node(op, tuple(inputs), output, backward_fn))
        self._outputs.add(id(output))

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs


def _accum(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.values)
    tensor.grad += grad


def _result(tape: Tape | None, op: str, inputs: Sequence[Tensor], values: np.ndarray,
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Seed d(loss)/d(loss) = 1 and propagate through the tape in reverse."""
    if loss.values.shape != ():
        raise ValueError("backward requires a scalar loss, got shape %r" % (loss.shape,))
    if not tape.produced(loss):
        raise ValueError("loss tensor was not produced on this tape")
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape.nodes):
        if node.output.grad is None:
            continue
        node.backward_fn(node.output.grad)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / scalar ops
# ---------------------------------------------------------------------------

def add(tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _result(tape, "add", (a, b), a.values + b.values, back)


def sub(tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(tape, "sub", (a, b), a.values - b.values, back)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)

    def back(g):
        _accum(a, g * b.values)
        _accum(b, g * a.values)

    return _result(tape, "mul", (a, b), a.values * b.values, back)


def scale(tape, x: Tensor, c: float) -> Tensor:
    def back(g):
        _accum(x, g * c)

    return _result(tape, "scale", (x,), x.values * x.dtype.type(c), back)


def exp(tape, x: Tensor) -> Tensor:
    y = np.exp(x.values)

    def back(g):
        _accum(x, g * y)

    return _result(tape, "exp", (x,), y, back)


def log(tape, x: Tensor) -> Tensor:
    def back(g):
        _accum(x, g / x.values)

    return _result(tape, "log", (x,), np.log(x.values), back)


def sigmoid(tape, x: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def back(g):
        _accum(x, g * y * (1.0 - y))

    return _result(tape, "sigmoid", (x,), y.astype(x.dtype), back)


def tanh(tape, x: Tensor) -> Tensor:
    y = np.tanh(x.values)

    def back(g):
        _accum(x, g * (1.0 - y * y))

    return _result(tape, "tanh", (x,), y, back)


def relu(tape, x: Tensor) -> Tensor:
    def back(g):
        _accum(x, g * (x.values > 0))

    return _result(tape, "relu", (x,), np.maximum(x.values, 0), back)


def minimum(tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; on an exact tie the gradient goes to ``a``."""
    _require_same_shape("minimum", a, b)
    take_a = a.values <= b.values

    def back(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _result(tape, "minimum", (a, b), np.minimum(a.values, b.values), back)


def reduce_sum(tape, x: Tensor) -> Tensor:
    def back(g):
        _accum(x, np.full_like(x.values, g))

    return _result(tape, "reduce_sum", (x,), x.values.sum(), back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(tape, x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def back(g):
        _accum(x, g.reshape(x.shape))

    return _result(tape, "reshape", (x,), x.values.reshape(shape), back)


def take_row(tape, x: Tensor, index: int) -> Tensor:
    if x.ndim != 2:
        raise ValueError("take_row expects a 2-d input")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"take_row: row {index} out of range for {x.shape}")

    def back(g):
        if x.requires_grad:
            buf = np.zeros_like(x.values)
            buf[index] = g
            _accum(x, buf)

    return _result(tape, "take_row", (x,), x.values[index].copy(), back)


def stack_scalars(tape, items: Sequence[Tensor]) -> Tensor:
    if not items:
        raise ValueError("stack_scalars: empty input")
    for t in items:
        if t.values.shape != ():
            raise ValueError("stack_scalars expects scalar tensors")
    items = tuple(items)

    def back(g):
        for i, t in enumerate(items):
            _accum(t, g[i])

    values = np.stack([t.values for t in items])
    return _result(tape, "stack_scalars", items, values, back)


def concat(tape, parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat: empty input")
    for t in parts:
        if t.ndim != 1:
            raise ValueError("concat expects 1-d inputs")
    parts = tuple(parts)
    sizes = [t.shape[0] for t in parts]

    def back(g):
        off = 0
        for t, size in zip(parts, sizes):
            _accum(t, g[off:off + size])
            off += size

    return _result(tape, "concat", parts, np.concatenate([t.values for t in parts]), back)


def pad_rows(tape, x: Tensor, total_rows: int) -> Tensor:
    """Append zero rows so the result has exactly ``total_rows`` rows."""
    if x.ndim != 2:
        raise ValueError("pad_rows expects a 2-d input")
    t = x.shape[0]
    if total_rows < t:
        raise ValueError(f"pad_rows: total_rows {total_rows} < current rows {t}")

    def back(g):
        _accum(x, g[:t])

    values = np.zeros((total_rows, x.shape[1]), dtype=x.dtype)
    values[:t] = x.values
    return _result(tape, "pad_rows", (x,), values, back)


# ---------------------------------------------------------------------------
# table / sequence ops
# ---------------------------------------------------------------------------

def embedding_lookup(tape, table: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into the table grad."""
    if table.ndim != 2:
        raise ValueError("embedding_lookup expects a 2-d table")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("embedding_lookup expects a 1-d index list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError("embedding_lookup: index out of range")

    def back(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.values)
            np.add.at(table.grad, idx, g)

    return _result(tape, "embedding_lookup", (table,), table.values[idx].copy(), back)


def dense(tape, x: Tensor, w: Tensor, b: Tensor | None = None,
          activation: str = "none") -> Tensor:
    """Affine map ``x @ w (+ b)`` with optional ``tanh``/``sigmoid`` squashing.

    ``x`` may be a single vector or a matrix of row vectors; a vector input
    yields a vector output.
    """
    if activation not in ("none", "tanh", "sigmoid"):
        raise ValueError(f"dense: unknown activation {activation!r}")
    if w.ndim != 2:
        raise ValueError("dense expects a 2-d weight")
    squeeze = x.ndim == 1
    xv = x.values[None, :] if squeeze else x.values
    if xv.ndim != 2 or xv.shape[1] != w.shape[0]:
        raise ValueError(f"dense: shape mismatch {x.shape} @ {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"dense: bias shape {b.shape} does not match {w.shape}")

    pre = xv @ w.values
    if b is not None:
        pre = pre + b.values
    if activation == "tanh":
        out = np.tanh(pre)
    elif activation == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * pre))
        out = out.astype(pre.dtype)
    else:
        out = pre

    def back(g):
        g2 = g[None, :] if squeeze else g
        if activation == "tanh":
            g2 = g2 * (1.0 - out * out)
        elif activation == "sigmoid":
            g2 = g2 * out * (1.0 - out)
        _accum(x, (g2 @ w.values.T)[0] if squeeze else g2 @ w.values.T)
        _accum(w, xv.T @ g2)
        if b is not None:
            _accum(b, g2.sum(axis=0))

    values = out[0] if squeeze else out
    inputs = (x, w) if b is None else (x, w, b)
    return _result(tape, "dense", inputs, values, back)


def seq_pool(tape, x: Tensor, mode: str, mask_length: int) -> Tensor:
    """Column-wise max or mean over the first ``mask_length`` rows.

    Max routes the gradient to the first row attaining the maximum in each
    column; mean spreads it uniformly over the unmasked rows.
    """
    if x.ndim != 2:
        raise ValueError("seq_pool expects a 2-d input")
    if mode not in ("max", "mean"):
        raise ValueError(f"seq_pool: unknown mode {mode!r}")
    if not 1 <= mask_length <= x.shape[0]:
        raise ValueError(f"seq_pool: mask_length {mask_length} out of range for {x.shape}")

    window = x.values[:mask_length]
    if mode == "max":
        arg = window.argmax(axis=0)  # first occurrence on ties
        values = window.max(axis=0)

        def back(g):
            if x.requires_grad:
                buf = np.zeros_like(x.values)
                np.add.at(buf, (arg, np.arange(x.shape[1])), g)
                _accum(x, buf)
    else:
        values = window.mean(axis=0)

        def back(g):
            if x.requires_grad:
                buf = np.zeros_like(x.values)
                buf[:mask_length] = g / x.dtype.type(mask_length)
                _accum(x, buf)

    return _result(tape, "seq_pool", (x,), values, back)


def conv1d(tape, x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Valid (no padding) 1-d convolution over the row axis.

    ``x`` is ``[t, d_in]``, ``filters`` is ``[k, d_in, d_out]``; the output has
    ``t - k + 1`` rows.
    """
    if x.ndim != 2 or filters.ndim != 3:
        raise ValueError("conv1d: expected 2-d input and 3-d filters")
    k, d_in, d_out = filters.shape
    t = x.shape[0]
    if x.shape[1] != d_in:
        raise ValueError(f"conv1d: input width {x.shape[1]} != filter width {d_in}")
    if bias.shape != (d_out,):
        raise ValueError(f"conv1d: bias shape {bias.shape} != ({d_out},)")
    if k > t:
        raise ValueError(f"conv1d: filter length {k} exceeds sequence length {t}")

    t_out = t - k + 1
    values = np.tile(bias.values, (t_out, 1))
    for a in range(k):
        values = values + x.values[a:a + t_out] @ filters.values[a]

    def back(g):
        if x.requires_grad:
            gx = np.zeros_like(x.values)
            for a in range(k):
                gx[a:a + t_out] += g @ filters.values[a].T
            _accum(x, gx)
        if filters.requires_grad:
            gf = np.zeros_like(filters.values)
            for a in range(k):
                gf[a] = x.values[a:a + t_out].T @ g
            _accum(filters, gf)
        _accum(bias, g.sum(axis=0))

    return _result(tape, "conv1d", (x, filters, bias), values.astype(x.dtype), back)


def l2_normalize(tape, x: Tensor, eps: float = 1e-12) -> Tensor:
    """Project a vector onto the unit sphere; the clamp keeps 0 finite."""
    if x.ndim != 1:
        raise ValueError("l2_normalize expects a 1-d input")
    norm = float(np.linalg.norm(x.values))
    clamped = norm < eps
    denom = x.dtype.type(eps if clamped else norm)
    y = x.values / denom

    def back(g):
        if clamped:
            _accum(x, g / denom)
        else:
            _accum(x, (g - y * (y @ g)) / denom)

    return _result(tape, "l2_normalize", (x,), y, back)


def cosine_distance(tape, a: Tensor, b: Tensor) -> Tensor:
    """``1 - a.b`` for unit vectors; plain algebra, no re-normalisation."""
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("cosine_distance expects 1-d inputs")
    _require_same_shape("cosine_distance", a, b)

    def back(g):
        _accum(a, -g * b.values)
        _accum(b, -g * a.values)

    values = np.asarray(a.dtype.type(1.0) - a.values @ b.values)
    return _result(tape, "cosine_distance", (a, b), values, back)


def log_softmax(tape, x: Tensor) -> Tensor:
    """Numerically stable log-softmax of a vector (max is subtracted first)."""
    if x.ndim != 1 or x.shape[0] == 0:
        raise ValueError("log_softmax expects a non-empty 1-d input")
    shifted = x.values - x.values.max()
    lse = np.log(np.exp(shifted).sum())
    values = shifted - lse
    soft = np.exp(values)

    def back(g):
        _accum(x, g - soft * g.sum())

    return _result(tape, "log_softmax", (x,), values, back)


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GRUParams:
    """Weights of a single GRU layer (update/reset gates and candidate)."""
    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    def named(self, prefix: str = "gru") -> dict[str, Tensor]:
        return {
            f"{prefix}.w_update": self.w_update, f"{prefix}.u_update": self.u_update,
            f"{prefix}.b_update": self.b_update, f"{prefix}.w_reset": self.w_reset,
            f"{prefix}.u_reset": self.u_reset, f"{prefix}.b_reset": self.b_reset,
            f"{prefix}.w_cand": self.w_cand, f"{prefix}.u_cand": self.u_cand,
            f"{prefix}.b_cand": self.b_cand,
        }


def gru_sequence(tape, x: Tensor, params: GRUParams, h0: Tensor) -> Tensor:
    """Run a GRU over the rows of ``x`` and return the final hidden state.

    The recurrence is the usual gated update

        z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
        r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
        c_t = tanh(x_t W_c + (r_t * h_{t-1}) U_c + b_c)
        h_t = (1 - z_t) * h_{t-1} + z_t * c_t

    Because every step is recorded on the tape, backward() unrolls the full
    sequence (no truncation).
    """
    if x.ndim != 2:
        raise ValueError("gru_sequence expects a 2-d input")
    if x.shape[0] == 0:
        raise ValueError("gru_sequence: empty sequence")
    if h0.ndim != 1 or h0.shape[0] != params.u_update.shape[0]:
        raise ValueError("gru_sequence: h0 shape does not match hidden size")

    h = h0
    ones = constant(np.ones_like(h0.values))
    for step in range(x.shape[0]):
        x_t = take_row(tape, x, step)
        z = sigmoid(tape, add(tape, add(tape, dense(tape, x_t, params.w_update),
                                        dense(tape, h, params.u_update)), params.b_update))
        r = sigmoid(tape, add(tape, add(tape, dense(tape, x_t, params.w_reset),
                                        dense(tape, h, params.u_reset)), params.b_reset))
        cand = tanh(tape, add(tape, add(tape, dense(tape, x_t, params.w_cand),
                                        dense(tape, mul(tape, r, h), params.u_cand)),
                              params.b_cand))
        h = add(tape, mul(tape, sub(tape, ones, z), h), mul(tape, z, cand))
    return h


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------

class ParamSet:
    """Named trainable tensors plus their Adam moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.values)
        self._v[name] = np.zeros_like(tensor.values)
        return tensor

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count_values(self) -> int:
        return sum(p.values.size for p in self._params.values())


def adam_step(params: ParamSet, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are consumed and cleared."""
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.values -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.grad = None


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def grad_check(build, params: dict[str, np.ndarray], h: float = 1e-3) -> float:
    """Compare tape gradients of a scalar graph against central differences.

    ``build(tape, tensors)`` must construct the graph from scratch on every
    call and return a scalar Tensor.  All arrays are promoted to float64 so
    the comparison is not polluted by single-precision noise.  Returns the
    worst ``|analytic - numeric| / max(1, |numeric|)`` over every entry of
    every parameter.
    """
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    tape = Tape()
    tensors = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in base.items()}
    loss = build(tape, tensors)
    if loss.values.shape != ():
        raise ValueError("grad_check: build must return a scalar")
    backward(tape, loss)
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.values))
        for k, t in tensors.items()
    }

    def evaluate(arrays: dict[str, np.ndarray]) -> float:
        frozen = {k: Tensor(v) for k, v in arrays.items()}
        return float(build(None, frozen).values)

    worst = 0.0
    for key, arr in base.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = evaluate(base)
            flat[i] = saved - h
            down = evaluate(base)
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            diff = abs(float(analytic[key].reshape(-1)[i]) - numeric)
            worst = max(worst, diff / max(1.0, abs(numeric)))
    return worst
