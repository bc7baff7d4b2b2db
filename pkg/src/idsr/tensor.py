"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active *and* at least
one operand requires a gradient, so frozen networks evaluated outside a tape
cost no bookkeeping::

    with Tape() as tape:
        loss = (w * x).sum()
    grads = backward(tape, loss, wrt=[w])
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeError

_TAPES = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: scale(a, -1.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


@dataclass
class Node:
    """One recorded operation: ``output = forward(*inputs)``."""

    op: str
    inputs: tuple
    output: Tensor
    backward: Callable  # upstream grad -> tuple of input grads (None where not needed)
    forward: Callable  # input arrays -> output array, for replay


@dataclass
class Tape:
    nodes: list = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def replay(self, values=None):
        """Re-run every node forward from the leaves.

        ``values`` optionally maps leaf tensors to replacement arrays.
        Returns a dict from ``id(output)`` to the recomputed array.
        """
        env = {}
        if values:
            env.update({id(t): np.asarray(v) for t, v in values.items()})
        for node in self.nodes:
            args = [env.get(id(t), t.data) for t in node.inputs]
            env[id(node.output)] = node.forward(*args)
        return env


def active_tape():
    return _TAPES[-1] if _TAPES else None


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(op, out_data, inputs, backward_fn, forward_fn):
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.nodes.append(Node(op, tuple(inputs), out, backward_fn, forward_fn))
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ------------------------------------------------------------ elementwise

def add(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", a.data + b.data, (a, b), bwd, np.add)


def sub(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _emit("sub", a.data - b.data, (a, b), bwd, np.subtract)


def mul(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("mul", a, b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", a.data * b.data, (a, b), bwd, np.multiply)


def div(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bwd(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _emit("div", out, (a, b), bwd, np.divide)


def scale(a, c):
    c = float(c)

    def fwd(x):
        return x * c

    return _emit("scale", fwd(a.data), (a,), lambda g: (g * c,), fwd)


def square(a):
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), np.square)


def sqrt(a):
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,), np.sqrt)


def relu(a):
    mask = a.data > 0

    def fwd(x):
        return np.where(x > 0, x, 0).astype(x.dtype, copy=False)

    return _emit("relu", fwd(a.data), (a,), lambda g: (g * mask,), fwd)


def leaky_relu(a, slope):
    slope = float(slope)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.dtype)

    def fwd(x):
        return x * np.where(x > 0, 1.0, slope).astype(x.dtype)

    return _emit("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,), fwd)


# ------------------------------------------------------------ reductions and shape

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def fwd(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype),)

    return _emit("sum", fwd(a.data), (a,), bwd, fwd)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),), lambda x: x.reshape(shape))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inv),), lambda x: x.transpose(axes))


def flatten(a):
    return reshape(a, (a.shape[0], -1))


# ------------------------------------------------------------ dense

def linear(x, weight, bias=None):
    """``x[B, Din] @ weight[Dout, Din].T + bias[Dout]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fwd(xd, wd, bd=None):
        y = xd @ wd.T
        return y if bd is None else y + bd

    def bwd(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    return _emit("linear", fwd(*(t.data for t in inputs)), inputs, bwd, fwd)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``logits[B, K]`` against integer ``labels[B]``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    B, K = logits.shape
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range [0, {K}): {labels.min()}..{labels.max()}")
    rows = np.arange(B)

    def fwd(z):
        return np.asarray(-_log_softmax(z)[rows, labels].mean(), dtype=z.dtype)

    def bwd(g):
        p = np.exp(_log_softmax(logits.data))
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return _emit("softmax_cross_entropy", fwd(logits.data), (logits,), bwd, fwd)


# ------------------------------------------------------------ convolution

def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x, kernels, bias=None, stride=1, pad=0):
    """Zero-padded cross-correlation of ``x[B, Cin, H, W]`` with ``kernels[Cout, Cin, kh, kw]``."""
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: bad stride {stride} or pad {pad}")
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = kernels.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {O} output channels")
    Ho, Wo = _kernels.out_size(Hp, kh, stride), _kernels.out_size(Wp, kw, stride)
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    cols = _kernels.im2col(_pad(x.data, pad), kh, kw, stride)

    def compute(cols, wd, bd):
        y = np.matmul(wd.reshape(O, -1), cols).reshape(B, O, Ho, Wo)
        return y if bd is None else y + bd.reshape(1, O, 1, 1)

    def fwd(xd, wd, bd=None):
        return compute(_kernels.im2col(_pad(xd, pad), kh, kw, stride), wd, bd)

    def bwd(g):
        g2 = g.reshape(B, O, Ho * Wo)
        gx = gw = None
        if x.requires_grad:
            dcols = np.matmul(kernels.data.reshape(O, -1).T, g2)
            gx = _kernels.col2im(dcols, C, Hp, Wp, kh, kw, stride)
            if pad:
                gx = gx[:, :, pad:-pad, pad:-pad]
        if kernels.requires_grad:
            # batched matmul then sum; tensordot would copy the transposed cols
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernels.shape)
        grads = (gx, gw)
        return grads if bias is None else grads + (g2.sum(axis=(0, 2)),)

    return _emit("conv2d", compute(cols, kernels.data, None if bias is None else bias.data),
                 inputs, bwd, fwd)


def conv2d_transpose(x, kernels, bias=None, stride=1, pad=0):
    """Adjoint of :func:`conv2d` with ``kernels[Cin, Cout, kh, kw]``.

    Output spatial size is ``(H - 1) * stride - 2 * pad + kh``.
    """
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d_transpose: bad stride {stride} or pad {pad}")
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[0]:
        raise ShapeError(f"conv2d_transpose: input {x.shape} incompatible with kernels {kernels.shape}")
    B, C, H, W = x.shape
    _, O, kh, kw = kernels.shape
    Hf, Wf = (H - 1) * stride + kh, (W - 1) * stride + kw
    if Hf - 2 * pad < 1 or Wf - 2 * pad < 1:
        raise ShapeError(f"conv2d_transpose: pad {pad} leaves an empty output")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d_transpose: bias {bias.shape} does not match {O} output channels")
    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def fwd(xd, wd, bd=None):
        cols = np.matmul(wd.reshape(C, -1).T, xd.reshape(B, C, H * W))
        y = _kernels.col2im(cols, O, Hf, Wf, kh, kw, stride)
        if pad:
            y = y[:, :, pad:-pad, pad:-pad]
        return y if bd is None else y + bd.reshape(1, O, 1, 1)

    def bwd(g):
        gcols = _kernels.im2col(_pad(g, pad), kh, kw, stride)  # [B, O*kh*kw, H*W]
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(kernels.data.reshape(C, -1), gcols).reshape(x.shape)
        if kernels.requires_grad:
            gw = np.matmul(x.data.reshape(B, C, H * W), gcols.transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(kernels.shape)
        grads = (gx, gw)
        return grads if bias is None else grads + (g.sum(axis=(0, 2, 3)),)

    return _emit("conv2d_transpose", fwd(*(t.data for t in inputs)), inputs, bwd, fwd)


# ------------------------------------------------------------ gradients

def backward(tape, output, wrt=None):
    """Propagate d(output)/d(.) through ``tape`` in reverse order.

    Returns a dict mapping each leaf tensor that requires a gradient to its
    gradient array and also stores it on ``leaf.grad``. When ``wrt`` is
    given, a list aligned with ``wrt`` is returned instead; leaves that do
    not reach ``output`` get zeros.
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    produced = {id(n.output) for n in tape.nodes}
    if id(output) not in produced:
        raise ValueError("output was not recorded on this tape")
    grads = {id(output): np.ones_like(output.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
            if id(t) not in produced:
                leaves[id(t)] = t
    result = {}
    for key, t in leaves.items():
        g = np.asarray(grads[key], dtype=t.dtype).reshape(t.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {t.name or 'leaf tensor'}")
        t.grad = g
        result[t] = g
    if wrt is None:
        return result
    return [result[t] if t in result else np.zeros_like(t.data) for t in wrt]


def finite_diff_grad(fn, at, step=1e-4):
    """Central-difference gradient of scalar ``fn`` at array ``at``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(at, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(x))
        flat[i] = orig - step
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a, b):
    """Norm-wise relative difference ``|a - b| / max(|a|, |b|)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
