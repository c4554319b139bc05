"""Dense tensors with a linear tape for reverse-mode differentiation.

Every op appends a node to the active :class:`Tape` (if any input requires a
gradient). Because nodes are appended in creation order, walking the tape
backwards visits them in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_DTYPE = [np.float32]
_TAPES: list["Tape"] = []


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the working dtype (float64 is used for gradient checks)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=default_dtype(), order="C", copy=None)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all routed through the functional ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Records nodes while active. Use as a context manager."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, node):
        if self.consumed:
            raise TapeError("tape already consumed by backward(); re-run the forward pass")
        self.nodes.append(node)


def active_tape():
    return _TAPES[-1] if _TAPES else None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite value produced by {op}")


def _make(op, data, inputs, backward):
    _check_finite(op, data)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(Node(op, inputs, out, backward))
    return out


def _acc(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(loss, params=None, tape=None):
    """Propagate d(loss)/d(.) to every tensor on the tape.

    ``params`` (a ParamStore or iterable of tensors) get a zero gradient when
    the loss does not depend on them.
    """
    tape = tape or active_tape()
    if tape is None:
        raise TapeError("backward() needs an active tape")
    if tape.consumed:
        raise TapeError("backward() called twice without a new forward pass")
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.out.grad is None:
            continue
        node.backward(node.out.grad)
    if params is not None:
        for p in (params.values() if hasattr(params, "values") else params):
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- elementwise

def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make("add_scalar", a.data + c, (a,), lambda g: _acc(a, g))
    _same_shape("add", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape("sub", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    return _make("sub", a.data - b.data, (a, b), bw)


def neg(a):
    return _make("neg", -a.data, (a,), lambda g: _acc(a, -g))


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make("scale", a.data * c, (a,), lambda g: _acc(a, g * c))
    _same_shape("mul", a, b)

    def bw(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _make("mul", a.data * b.data, (a, b), bw)


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))
    return _make("sigmoid", y, (a,), lambda g: _acc(a, g * y * (1.0 - y)))


def tanh(a):
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: _acc(a, g * (1.0 - y * y)))


def relu(a):
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: _acc(a, g * mask))


def wrap_angle(a):
    """Wrap to (-pi, pi]; derivative is 1 away from the branch cut."""
    y = np.pi - np.mod(np.pi - a.data, 2 * np.pi)
    return _make("wrap_angle", y, (a,), lambda g: _acc(a, g))


def detach(a):
    return Tensor(a.data)


# ------------------------------------------------------------------- shaping

def reshape(a, shape):
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: _acc(a, g.reshape(old)))


def flatten(a):
    return reshape(a, (a.shape[0], -1))


def concat(ts: Sequence[Tensor], axis=1):
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _acc(t, g[tuple(idx)])

    return _make("concat", np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw)


def columns(a, lo, hi):
    """a[:, lo:hi] for a 2-D tensor."""
    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, lo:hi] = g
            _acc(a, full)

    return _make("columns", a.data[:, lo:hi], (a,), bw)


# ---------------------------------------------------------------- reductions

def sum_all(a):
    s = np.sum(a.data, dtype=np.float64)
    return _make("sum", np.array(s), (a,), lambda g: _acc(a, np.full_like(a.data, g)))


def mean(a):
    n = a.size
    s = np.sum(a.data, dtype=np.float64) / n
    return _make("mean", np.array(s), (a,), lambda g: _acc(a, np.full_like(a.data, g / n)))


def mse(a, b):
    """Mean over all elements of (a - b)^2."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mse", a, b)
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = d.size
    val = np.array(np.sum(d * d) / n)

    def bw(g):
        gd = (2.0 / n) * d * g
        _acc(a, gd)
        _acc(b, -gd)

    return _make("mse", val, (a, b), bw)


# ------------------------------------------------------------------- linear

def matmul(x, W):
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {x.shape} by {W.shape}")

    def bw(g):
        if x.requires_grad:
            _acc(x, g @ W.data.T)
        if W.requires_grad:
            _acc(W, x.data.T @ g)

    return _make("matmul", x.data @ W.data, (x, W), bw)


def affine(x, W, b):
    """y = xW + b with x [B,I], W [I,O], b [O]."""
    x = as_tensor(x)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: x {x.shape} does not conform with W {W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape}, expected ({W.shape[1]},)")

    def bw(g):
        if x.requires_grad:
            _acc(x, g @ W.data.T)
        if W.requires_grad:
            _acc(W, x.data.T @ g)
        if b.requires_grad:
            _acc(b, np.sum(g, axis=0, dtype=np.float64))

    return _make("affine", x.data @ W.data + b.data, (x, W, b), bw)


def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, k, stride, Ho, Wo):
    # xp: [B,C,Hp,Wp] -> [B,Ho,Wo,C,k,k]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (Ho - 1) + 1 : stride, : stride * (Wo - 1) + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv2d(x, K, b=None, stride=1, pad=0):
    """Cross-correlation. x [B,C,H,W], K [F,C,k,k], optional bias b [F]."""
    x = as_tensor(x)
    if x.data.ndim != 4 or K.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D x and K, got {x.shape} and {K.shape}")
    B, C, H, W = x.shape
    F, Ck, k, k2 = K.shape
    if Ck != C or k != k2:
        raise ShapeError(f"conv2d: kernel {K.shape} does not match input channels {C}")
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    if k > H + 2 * pad or k > W + 2 * pad:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {(H + 2 * pad, W + 2 * pad)}")
    Ho, Wo = conv_output_size(H, k, stride, pad), conv_output_size(W, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, Ho, Wo).reshape(B * Ho * Wo, C * k * k)
    Km = K.data.reshape(F, C * k * k)
    y = cols @ Km.T
    if b is not None:
        y = y + b.data
    y = y.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    inputs = (x, K) if b is None else (x, K, b)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        if K.requires_grad:
            _acc(K, (gm.T @ cols).reshape(K.shape))
        if b is not None and b.requires_grad:
            _acc(b, np.sum(gm, axis=0, dtype=np.float64))
        if x.requires_grad:
            dcols = (gm @ Km).reshape(B, Ho, Wo, C, k, k)
            dxp = np.zeros(xp.shape, dtype=x.data.dtype)
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + hs : stride, j : j + ws : stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _acc(x, dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp)

    return _make("conv2d", y, inputs, bw)


# ------------------------------------------------------------------ spiking

def spike(v, threshold=1.0, width=0.5, smooth_forward=False):
    """Heaviside(v - threshold) with a rectangular surrogate derivative.

    The backward pass uses 1/(2w) inside |v - threshold| < w and 0 outside.
    ``smooth_forward`` swaps the forward for the ramp whose exact derivative
    is that surrogate, so finite differences can check the surrogate chain.
    """
    x = v.data - threshold
    if smooth_forward:
        y = np.clip((x + width) / (2 * width), 0.0, 1.0)
    else:
        y = (x >= 0).astype(v.data.dtype)
    sg = (np.abs(x) < width) / (2 * width)

    return _make("spike", y, (v,), lambda g: _acc(v, g * sg))


def custom(op: str, data, inputs: Sequence[Tensor], backward: Callable):
    """Escape hatch for composite ops defined elsewhere."""
    return _make(op, np.asarray(data), tuple(inputs), backward)
