"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation computes its forward value with numpy, checks it for
NaN/Inf, and (when gradients are enabled and an input requires them)
records a closure that maps the output gradient to input gradients.
``Tensor.backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NumericsError",
    "ShapeError",
    "Tensor",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "sum_",
    "mean",
    "max_",
    "conv1d",
    "dropout",
    "dropout_mask",
    "layer_norm",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "getitem",
    "cross_entropy",
    "grad_check",
    "gru_sequence",
    "lstm_sequence",
]

DTYPE = np.float64


class NumericsError(ArithmeticError):
    """Raised when an operation produces a non-finite value or gradient."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("non-finite value in tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    # -- backpropagation -----------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if not np.all(np.isfinite(g)):
                        raise NumericsError(f"non-finite gradient reaching leaf of shape {node.shape}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite result in {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_data(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data("add", np.add, a, b)
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data("sub", np.subtract, a, b)
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data("mul", np.multiply, a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    out = _binary_data("matmul", np.matmul, a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), backward, "matmul")


# -- nonlinearities -----------------------------------------------------------
def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


# -- reductions -----------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _result(np.asarray(out), (a,), backward, "mean")


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; gradient is shared equally among tied maxima."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    m = a.data.max(axis=axis, keepdims=True)
    mask = (a.data == m).astype(DTYPE)
    mask /= mask.sum(axis=axes, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axes)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * mask,)

    return _result(np.asarray(out), (a,), backward, "max")


# -- layers ------------------------------------------------------------------------
def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation.

    x: (N, C_in, L), weight: (C_out, C_in, K), bias: (C_out,) -> (N, C_out, L_out)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    n, c_in, length = x.shape
    c_out, _, k = weight.shape
    padded_len = length + 2 * padding
    l_out = (padded_len - k) // stride + 1
    if l_out < 1:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {padded_len}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    idx = np.arange(l_out)[:, None] * stride + np.arange(k)[None, :]  # (L_out, K)
    cols = xp[:, :, idx]  # (N, C_in, L_out, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(n, l_out, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).transpose(0, 2, 1)  # (N, C_out, L_out)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {c_out} output channels")
        out = out + bias.data[None, :, None]
        parents = (x, weight, bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gt = g.transpose(0, 2, 1)  # (N, L_out, C_out)
        gw = (gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k)
        gcols = (gt @ w2).reshape(n, l_out, c_in, k).transpose(0, 2, 1, 3)
        gxp = np.zeros((n, c_in, padded_len), dtype=DTYPE)
        for j in range(k):
            gxp[:, :, idx[:, j]] += gcols[:, :, :, j]
        gx = gxp[:, :, padding:padding + length] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _result(out, parents, backward, "conv1d")


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = dropout_mask(x.shape, p, rng)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis then apply the affine map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), backward, "layer_norm")


# -- shape manipulation ---------------------------------------------------------
def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = " and ".join(str(t.shape) for t in ts)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = " and ".join(str(t.shape) for t in ts)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from exc

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, ts, backward, "stack")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    src = a.shape
    return _result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _result(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)
    if basic:
        out = out.copy()

    def backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.asarray(out), (a,), backward, "slice")


# -- losses ----------------------------------------------------------------------
def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: incompatible shapes {logits.shape} and {targets.shape}")
    onehot = np.zeros(logits.shape, dtype=DTYPE)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -(log_softmax(logits, axis=-1) * onehot).sum(axis=-1).mean()


# -- verification ------------------------------------------------------------------
def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6,
               batch_f: Callable[[np.ndarray], np.ndarray] | None = None, chunk: int = 256) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps a Tensor shaped like ``x`` to a scalar Tensor. ``batch_f``, if given,
    must compute the same value for a stack ``(N, *x.shape)`` of inputs at once;
    it is used for the finite differences only.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if y.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {y.shape}")
    y.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    if not np.all(np.isfinite(analytic)):
        raise NumericsError("non-finite analytic gradient")

    if batch_f is not None:
        return _relative_error(analytic, _batched_differences(batch_f, x0, eps, chunk))
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(x0)).data)
            flat[i] = orig - eps
            fm = float(f(Tensor(x0)).data)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * eps)
    return _relative_error(analytic, numeric)


def _batched_differences(batch_f, x0: np.ndarray, eps: float, chunk: int) -> np.ndarray:
    n = x0.size
    out = np.empty(n, dtype=DTYPE)
    with no_grad():
        for start in range(0, n, chunk):
            idx = np.arange(start, min(n, start + chunk))
            plus = np.repeat(x0.reshape(1, -1), len(idx), axis=0)
            minus = plus.copy()
            plus[np.arange(len(idx)), idx] += eps
            minus[np.arange(len(idx)), idx] -= eps
            fp = np.asarray(batch_f(plus.reshape(len(idx), *x0.shape)), dtype=DTYPE).reshape(-1)
            fm = np.asarray(batch_f(minus.reshape(len(idx), *x0.shape)), dtype=DTYPE).reshape(-1)
            out[idx] = (fp - fm) / (2.0 * eps)
    return out.reshape(x0.shape)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if not np.all(np.isfinite(numeric)):
        raise NumericsError("non-finite finite-difference estimate")
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


# -- fused recurrent layers ---------------------------------------------------------------------
def _sig(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


@np.errstate(all="ignore")  # overflow surfaces as a NumericsError on the result
def gru_sequence(x, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Whole-sequence GRU (gate order r, z, n) with hand-written BPTT.

    x: (B, T, D), w_ih: (D, 3H), w_hh: (H, 3H) -> hidden states (B, T, H).
    h_t = (1 - z) * n + z * h_{t-1},  n = tanh(gi_n + r * (h_{t-1} W_hn + b_hn)).
    """
    x, w_ih, w_hh, b_ih, b_hh = (as_tensor(t) for t in (x, w_ih, w_hh, b_ih, b_hh))
    batch, steps, d_in = x.shape
    hsz = w_hh.shape[0]
    if w_ih.shape != (d_in, 3 * hsz) or w_hh.shape != (hsz, 3 * hsz):
        raise ShapeError(f"gru_sequence: incompatible shapes {x.shape} and {w_ih.shape}")
    gi = x.data @ w_ih.data + b_ih.data
    whh = w_hh.data
    hs = np.zeros((batch, steps + 1, hsz))
    rs = np.empty((batch, steps, hsz))
    zs = np.empty((batch, steps, hsz))
    ns = np.empty((batch, steps, hsz))
    ghn = np.empty((batch, steps, hsz))
    for t in range(steps):
        h = hs[:, t]
        gh = h @ whh + b_hh.data
        rz = _sig(gi[:, t, :2 * hsz] + gh[:, :2 * hsz])
        r, z = rz[:, :hsz], rz[:, hsz:]
        n = np.tanh(gi[:, t, 2 * hsz:] + r * gh[:, 2 * hsz:])
        hs[:, t + 1] = n + z * (h - n)
        rs[:, t], zs[:, t], ns[:, t], ghn[:, t] = r, z, n, gh[:, 2 * hsz:]
    out = hs[:, 1:].copy()

    def backward(g):
        dgi = np.empty((batch, steps, 3 * hsz))
        dgh_all = np.empty((batch, steps, 3 * hsz))
        dh = np.zeros((batch, hsz))
        for t in range(steps - 1, -1, -1):
            dh = dh + g[:, t]
            r, z, n, h_prev = rs[:, t], zs[:, t], ns[:, t], hs[:, t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dan = dn * (1.0 - n * n)
            dar = dan * ghn[:, t] * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgi[:, t, :hsz] = dar
            dgi[:, t, hsz:2 * hsz] = daz
            dgi[:, t, 2 * hsz:] = dan
            dgh = dgh_all[:, t]
            dgh[:, :hsz] = dar
            dgh[:, hsz:2 * hsz] = daz
            dgh[:, 2 * hsz:] = dan * r
            dh = dh * z + dgh @ whh.T
        gx = dgi @ w_ih.data.T
        gw_ih = x.data.reshape(-1, d_in).T @ dgi.reshape(-1, 3 * hsz)
        gw_hh = hs[:, :-1].reshape(-1, hsz).T @ dgh_all.reshape(-1, 3 * hsz)
        return gx, gw_ih, gw_hh, dgi.sum(axis=(0, 1)), dgh_all.sum(axis=(0, 1))

    return _result(out, (x, w_ih, w_hh, b_ih, b_hh), backward, "gru_sequence")


@np.errstate(all="ignore")
def lstm_sequence(x, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Whole-sequence LSTM (gate order i, f, g, o) with hand-written BPTT.

    x: (B, T, D), w_ih: (D, 4H), w_hh: (H, 4H) -> hidden states (B, T, H).
    """
    x, w_ih, w_hh, b_ih, b_hh = (as_tensor(t) for t in (x, w_ih, w_hh, b_ih, b_hh))
    batch, steps, d_in = x.shape
    hsz = w_hh.shape[0]
    if w_ih.shape != (d_in, 4 * hsz) or w_hh.shape != (hsz, 4 * hsz):
        raise ShapeError(f"lstm_sequence: incompatible shapes {x.shape} and {w_ih.shape}")
    gi = x.data @ w_ih.data + (b_ih.data + b_hh.data)
    whh = w_hh.data
    hs = np.zeros((batch, steps + 1, hsz))
    cs = np.zeros((batch, steps + 1, hsz))
    acts = np.empty((batch, steps, 4 * hsz))
    tcs = np.empty((batch, steps, hsz))
    for t in range(steps):
        a = gi[:, t] + hs[:, t] @ whh
        act = acts[:, t]
        act[:, :2 * hsz] = _sig(a[:, :2 * hsz])
        act[:, 2 * hsz:3 * hsz] = np.tanh(a[:, 2 * hsz:3 * hsz])
        act[:, 3 * hsz:] = _sig(a[:, 3 * hsz:])
        i, f, gg, o = act[:, :hsz], act[:, hsz:2 * hsz], act[:, 2 * hsz:3 * hsz], act[:, 3 * hsz:]
        cs[:, t + 1] = f * cs[:, t] + i * gg
        tcs[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = o * tcs[:, t]
    out = hs[:, 1:].copy()

    def backward(g):
        da_all = np.empty((batch, steps, 4 * hsz))
        dh = np.zeros((batch, hsz))
        dc = np.zeros((batch, hsz))
        for t in range(steps - 1, -1, -1):
            dh = dh + g[:, t]
            act = acts[:, t]
            i, f, gg, o = act[:, :hsz], act[:, hsz:2 * hsz], act[:, 2 * hsz:3 * hsz], act[:, 3 * hsz:]
            tc = tcs[:, t]
            dc = dc + dh * o * (1.0 - tc * tc)
            da = da_all[:, t]
            da[:, :hsz] = dc * gg * i * (1.0 - i)
            da[:, hsz:2 * hsz] = dc * cs[:, t] * f * (1.0 - f)
            da[:, 2 * hsz:3 * hsz] = dc * i * (1.0 - gg * gg)
            da[:, 3 * hsz:] = dh * tc * o * (1.0 - o)
            dc = dc * f
            dh = da @ whh.T
        gx = da_all @ w_ih.data.T
        flat = da_all.reshape(-1, 4 * hsz)
        gw_ih = x.data.reshape(-1, d_in).T @ flat
        gw_hh = hs[:, :-1].reshape(-1, hsz).T @ flat
        gb = flat.sum(axis=0)
        return gx, gw_ih, gw_hh, gb, gb

    return _result(out, (x, w_ih, w_hh, b_ih, b_hh), backward, "lstm_sequence")
