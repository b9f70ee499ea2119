"""Random test cases for every registered op, used by the gradient-check suite."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .gradcheck import GradReport, grad_check

Builder = Callable[[np.random.Generator], tuple[Callable, dict]]


def _shape(rng, lo=1, hi=4, ndim=2):
    return tuple(int(n) for n in rng.integers(lo, hi + 1, size=ndim))


def _real(rng, shape, away_from_zero=False, positive=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.sign(x) * (0.1 + np.abs(x))
    if positive:
        x = 0.2 + np.abs(x)
    return x


def _cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _pow2(rng):
    return (int(rng.integers(1, 3)), 2 ** int(rng.integers(1, 4)), 2 ** int(rng.integers(1, 4)))


def _binary(op, complex_=False):
    def build(rng):
        s = _shape(rng)
        make = _cplx if complex_ else _real
        # exercise broadcasting on the second operand
        s2 = (1, s[1]) if rng.random() < 0.5 else s
        a, b = make(rng, s), make(rng, s2)
        if op is ops.div:
            b = b + (3.0 if not complex_ else 3.0 + 0j) * np.sign(b.real + 1e-3)
        return (lambda t: op(t["a"], t["b"])), {"a": a, "b": b}
    return build


def _unary(op, complex_=False, **kw):
    def build(rng):
        s = _shape(rng, ndim=3)
        x = _cplx(rng, s) if complex_ else _real(rng, s, **kw)
        return (lambda t: op(t["x"])), {"x": x}
    return build


def _conv(rng):
    n, c, o = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    h, w = (int(v) for v in rng.integers(4, 8, size=2))
    pad = (k - 1) // 2
    inputs = {"x": _real(rng, (n, c, h, w)), "w": _real(rng, (o, c, k, k)),
              "b": _real(rng, (o,))}
    return (lambda t: ops.conv2d(t["x"], t["w"], t["b"], stride=stride, pad=pad)), inputs


def _inorm(rng):
    x = _real(rng, (int(rng.integers(1, 3)), int(rng.integers(1, 3)), 4, 4))
    return (lambda t: ops.instance_norm(t["x"])), {"x": x}


def _reduce(op, complex_=False):
    def build(rng):
        s = _shape(rng, 2, 4, ndim=3)
        axis = [None, 0, (1, 2), -1][int(rng.integers(4))]
        x = _cplx(rng, s) if complex_ else _real(rng, s)
        return (lambda t: op(t["x"], axis=axis)), {"x": x}
    return build


def _shaping(rng):
    s = _shape(rng, 2, 4, ndim=3)
    x = _real(rng, s)
    return (lambda t: ops.reshape(ops.transpose(t["x"], (2, 0, 1)), (s[2], -1))), {"x": x}


def _concat(rng):
    a, b = _real(rng, (2, 3)), _real(rng, (int(rng.integers(1, 4)), 3))
    return (lambda t: ops.concat([t["a"], t["b"]], axis=0)), {"a": a, "b": b}


def _stack(rng):
    a, b = _real(rng, (2, 3)), _real(rng, (2, 3))
    return (lambda t: ops.stack([t["a"], t["b"]], axis=1)), {"a": a, "b": b}


def _take(rng):
    x = _cplx(rng, (4, 2, 3))
    idx = rng.integers(0, 4, size=7)
    return (lambda t: ops.take(t["x"], idx, axis=0)), {"x": x}


def _getitem(rng):
    x = _real(rng, (4, 5))
    return (lambda t: t["x"][1:3, ::2]), {"x": x}


def _to_complex(rng):
    s = _shape(rng)
    return (lambda t: ops.to_complex(t["re"], t["im"])), {"re": _real(rng, s), "im": _real(rng, s)}


def _fft(op):
    def build(rng):
        x = _cplx(rng, _pow2(rng))
        return (lambda t: op(t["x"])), {"x": x}
    return build


def _fft_real(rng):
    x = _real(rng, _pow2(rng))
    return (lambda t: ops.fft2(t["x"])), {"x": x}


def _pool(rng):
    size = int(rng.choice([1, 2, 4]))
    x = _real(rng, (int(rng.integers(1, 3)), 8, 8))
    return (lambda t: ops.avg_pool2d(t["x"], size)), {"x": x}


def _softmax(rng):
    x = _real(rng, (int(rng.integers(1, 6)),))
    return (lambda t: ops.softmax(t["x"])), {"x": x}


def _extreme(op):
    def build(rng):
        # distinct values so the selected element is unambiguous
        x = rng.permutation(24).reshape(2, 3, 4) * 0.37 + 0.01 * rng.standard_normal((2, 3, 4))
        axis = [None, (1, 2)][int(rng.integers(2))]
        return (lambda t: op(t["x"], axis=axis)), {"x": x}
    return build


OP_CASES: dict[str, Builder] = {
    "add": _binary(ops.add),
    "add_complex": _binary(ops.add, complex_=True),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "mul_complex": _binary(ops.mul, complex_=True),
    "div": _binary(ops.div),
    "div_complex": _binary(ops.div, complex_=True),
    "square": _unary(ops.square),
    "abs2": _unary(ops.abs2, complex_=True),
    "sqrt": _unary(ops.sqrt, positive=True),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, positive=True),
    "log1p": _unary(ops.log1p, positive=True),
    "abs": _unary(ops.abs, away_from_zero=True),
    "abs_complex": _unary(ops.abs, complex_=True),
    "relu": _unary(ops.relu, away_from_zero=True),
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "softplus": _unary(ops.softplus),
    "softmax": _softmax,
    "sum": _reduce(ops.sum),
    "sum_complex": _reduce(ops.sum, complex_=True),
    "mean": _reduce(ops.mean),
    "amax": _extreme(ops.amax),
    "amin": _extreme(ops.amin),
    "reshape_transpose": _shaping,
    "concat": _concat,
    "stack": _stack,
    "take": _take,
    "getitem": _getitem,
    "real": _unary(ops.real, complex_=True),
    "imag": _unary(ops.imag, complex_=True),
    "to_complex": _to_complex,
    "conj": _unary(ops.conj, complex_=True),
    "fft2": _fft(ops.fft2),
    "fft2_real_input": _fft_real,
    "ifft2": _fft(ops.ifft2),
    "conv2d": _conv,
    "instance_norm": _inorm,
    "avg_pool2d": _pool,
}


def check_registered_ops(tol: float = 1e-5, trials: int = 10, seed: int = 0) -> list[GradReport]:
    """One report per op, holding the worst error over ``trials`` random cases."""
    reports = []
    for name, build in OP_CASES.items():
        worst = GradReport(name, 0.0, [], tol)
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, len(name)])
            fn, inputs = build(rng)
            rep = grad_check(fn, inputs, tol=tol, name=name, seed=trial)
            if rep.max_rel_error >= worst.max_rel_error:
                worst = rep
        reports.append(worst)
    return reports
