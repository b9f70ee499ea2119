"""Differentiable operations over :class:`Tensor`.

Each op computes its forward value with numpy and, when any input lives on a
tape, records a vector-Jacobian product closure.
"""
from __future__ import annotations

import numpy as np

from .tape import Tape, TapeError, Tensor, as_tensor


def _tape_of(tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError("inputs recorded on different tapes")
            tape = t.tape
    return tape


def _out(op, inputs, value, vjp) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(op, inputs, value, vjp)


def _fit(g: np.ndarray, like: Tensor) -> np.ndarray:
    """Reduce a broadcast gradient back to ``like``'s shape and dtype."""
    shape = like.shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    if not like.is_complex and np.iscomplexobj(g):
        g = g.real
    return g


# --------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _out("add", (a, b), a.data + b.data, lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _out("sub", (a, b), a.data - b.data, lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _fit(g * np.conj(b.data), a), _fit(g * np.conj(a.data), b)

    return _out("mul", (a, b), a.data * b.data, vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = g / np.conj(b.data)
        return _fit(ga, a), _fit(-ga * np.conj(out), b)

    return _out("div", (a, b), out, vjp)


def square(x) -> Tensor:
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError("square is defined for real tensors; use abs2 for complex")
    return _out("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def abs2(x) -> Tensor:
    """Squared magnitude, real output for real or complex input."""
    x = as_tensor(x)
    val = (x.data * np.conj(x.data)).real
    return _out("abs2", (x,), val, lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(out > 0, 0.5 * g / np.where(out > 0, out, 1.0), 0.0)
        return (gx,)

    return _out("sqrt", (x,), out, vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _out("exp", (x,), out, lambda g: (g * np.conj(out),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _out("log", (x,), np.log(x.data), lambda g: (g / np.conj(x.data),))


def log1p(x) -> Tensor:
    x = as_tensor(x)
    return _out("log1p", (x,), np.log1p(x.data), lambda g: (g / (1.0 + x.data),))


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.abs(x.data)

    def vjp(g):
        if x.is_complex:
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g * x.data / safe, 0.0),)
        return (g * np.sign(x.data),)

    return _out("abs", (x,), out, vjp)


# -------------------------------------------------------------- activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _out("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _out("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _out("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _out("softplus", (x,), out, lambda g: (g * sig,))


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _out("softmax", (x,), out, vjp)


# --------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _out("sum", (x,), out, vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return div(sum(x, axes, keepdims), float(n))


def _extreme(x, axis, keepdims, pick, op):
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError(f"{op} requires a real tensor")
    axes = _norm_axes(axis, x.ndim)
    rest = tuple(a for a in range(x.ndim) if a not in axes)
    moved = np.transpose(x.data, rest + axes)
    flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
    arg = pick(flat, axis=-1)
    val = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = np.expand_dims(val, axes) if keepdims else val

    def vjp(g):
        g = np.asarray(g).reshape(val.shape)
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gm = gflat.reshape(moved.shape)
        return (np.transpose(gm, np.argsort(rest + axes)),)

    return _out(op, (x,), out, vjp)


def amax(x, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient goes to the first maximising element."""
    return _extreme(x, axis, keepdims, np.argmax, "amax")


def amin(x, axis=None, keepdims: bool = False) -> Tensor:
    return _extreme(x, axis, keepdims, np.argmin, "amin")


# ----------------------------------------------------------------- shaping

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _out("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _out("transpose", (x,), np.transpose(x.data, axes),
                lambda g: (np.transpose(g, inv),))


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(_fit(p, x) for p, x in zip(parts, xs))

    return _out("concat", tuple(xs), out, vjp)


def stack(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)

    def vjp(g):
        return tuple(_fit(np.take(g, i, axis=axis), x) for i, x in enumerate(xs))

    return _out("stack", tuple(xs), out, vjp)


def take(x, indices, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim

    def vjp(g):
        gx = np.zeros(x.shape, g.dtype)
        # move the gathered axis first so add.at can scatter along it
        np.add.at(np.moveaxis(gx, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (_fit(gx, x),)

    return _out("take", (x,), np.take(x.data, indices, axis=axis), vjp)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        gx = np.zeros(x.shape, g.dtype)
        np.add.at(gx, idx, g)
        return (_fit(gx, x),)

    return _out("getitem", (x,), x.data[idx], vjp)


# ------------------------------------------------------------------ complex

def real(x) -> Tensor:
    x = as_tensor(x)
    return _out("real", (x,), x.data.real.copy(), lambda g: (g.astype(np.complex128),))


def imag(x) -> Tensor:
    x = as_tensor(x)
    return _out("imag", (x,), x.data.imag.copy(), lambda g: (1j * g,))


def to_complex(re, im) -> Tensor:
    re, im = as_tensor(re), as_tensor(im)
    return _out("to_complex", (re, im), re.data + 1j * im.data,
                lambda g: (_fit(g.real, re), _fit(g.imag, im)))


def conj(x) -> Tensor:
    x = as_tensor(x)
    return _out("conj", (x,), np.conj(x.data), lambda g: (np.conj(g),))


def _check_pow2(shape):
    for n in shape[-2:]:
        if n < 1 or n & (n - 1):
            raise ValueError(f"FFT spatial dims must be powers of two, got {shape[-2:]}")


def fft2(x) -> Tensor:
    """Orthonormal 2-D DFT over the last two axes."""
    x = as_tensor(x)
    _check_pow2(x.shape)
    out = np.fft.fft2(x.data, norm="ortho")
    return _out("fft2", (x,), out, lambda g: (_fit(np.fft.ifft2(g, norm="ortho"), x),))


def ifft2(x) -> Tensor:
    x = as_tensor(x)
    _check_pow2(x.shape)
    out = np.fft.ifft2(x.data, norm="ortho")
    return _out("ifft2", (x,), out, lambda g: (_fit(np.fft.fft2(g, norm="ortho"), x),))


# ------------------------------------------------------------- convolution

def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``weight[O,C,k,k]`` and zero padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.is_complex or weight.is_complex:
        raise TypeError("conv2d operates on real tensors")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects x[N,C,H,W] and weight[O,C,k,k]")
    n, c, h, w = x.shape
    o, cw, k, k2 = weight.shape
    if cw != c:
        raise ValueError(f"input has {c} channels but weight expects {cw}")
    if k != k2:
        raise ValueError("square kernels only")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wmat = weight.data.reshape(o, c * k * k)

    def im2col():
        # channel-major columns [C*k*k, N*ho*wo]: one contiguous gather, one matmul
        xt = xp.transpose(1, 0, 2, 3)
        cols = np.empty((c, k, k, n, ho, wo))
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        return cols.reshape(c * k * k, n * ho * wo)

    out = np.ascontiguousarray((wmat @ im2col()).reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} != ({o},)")
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gw = (gt @ im2col().T).reshape(weight.shape)  # rebuilt rather than kept alive
        gc = (wmat.T @ gt).reshape(c, k, k, n, ho, wo)
        gxp = np.zeros((c, n) + xp.shape[2:])
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gc[:, i, j]
        gxp = gxp.transpose(1, 0, 2, 3)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _out("conv2d", tuple(inputs), out, vjp)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-(n, c) standardisation of ``x[N,C,H,W]`` over the spatial axes."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError("instance_norm expects x[N,C,H,W]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def vjp(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * out).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - out * gy),)

    return _out("instance_norm", (x,), out, vjp)


def avg_pool2d(x, size: int) -> Tensor:
    """Non-overlapping ``size`` x ``size`` mean pooling over the last two axes."""
    x = as_tensor(x)
    if size == 1:
        return x
    h, w = x.shape[-2:]
    if h % size or w % size:
        raise ValueError(f"pool size {size} does not divide {(h, w)}")
    lead = x.shape[:-2]
    out = x.data.reshape(lead + (h // size, size, w // size, size)).mean(axis=(-3, -1))

    def vjp(g):
        g = np.repeat(np.repeat(g, size, axis=-2), size, axis=-1)
        return (g / (size * size),)

    return _out("avg_pool2d", (x,), out, vjp)
