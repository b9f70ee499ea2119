"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tape import Tape, Tensor

EPS = 1e-12
FD_RESOLUTION = 1e-5  # per-coordinate gradient magnitude below which h=1e-6 differences are noise


@dataclass
class GradReport:
    op: str
    max_rel_error: float
    per_param: list[tuple[str, float]] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.0e})"


def rel_error(g_ad: np.ndarray, g_fd: np.ndarray, floor: float = EPS) -> float:
    """Relative error over a parameter tensor, |ad - fd| / max(|ad|, |fd|, floor) in L2."""
    num = np.linalg.norm(np.ravel(g_ad - g_fd))
    den = max(np.linalg.norm(np.ravel(g_ad)), np.linalg.norm(np.ravel(g_fd)), floor)
    return float(num / den)


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    # random projection keeps the scalar loss O(1) with no structural zeros
    if out.data.size == 1 and weights is None:
        return ops.real(ops.sum(out)) if out.is_complex else ops.sum(out)
    if out.is_complex:
        return ops.add(ops.sum(ops.mul(ops.real(out), weights.real)),
                       ops.sum(ops.mul(ops.imag(out), weights.imag)))
    return ops.sum(ops.mul(out, weights))


def grad_check(fn: Callable[[dict[str, Tensor]], Tensor], inputs: Mapping[str, np.ndarray],
               tol: float = 1e-5, name: str = "graph", max_entries: int | None = None,
               seed: int = 0, project: bool = True) -> GradReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` maps named tensors to an output tensor. Non-scalar outputs are
    reduced by a fixed random projection. With ``max_entries`` set, only that
    many randomly chosen coordinates per input are perturbed.

    Central differences cannot resolve gradients much below
    ``FD_RESOLUTION * max(1, |f|)`` per coordinate, so the error denominator is
    floored there; exactly-zero gradients (e.g. a bias feeding a normalisation)
    are then compared against that resolution instead of against rounding noise.
    """
    rng = np.random.default_rng(seed)
    inputs = {k: np.asarray(v) for k, v in inputs.items()}
    for k, v in inputs.items():
        if v.dtype.kind not in "fc":
            raise TypeError(f"input {k!r} must be real64 or complex128")

    tape = Tape()
    leaves = {k: tape.watch(v, name=k) for k, v in inputs.items()}
    out = fn(leaves)
    weights = None
    if project and out.data.size > 1:
        weights = rng.standard_normal(out.shape)
        if out.is_complex:
            weights = weights + 1j * rng.standard_normal(out.shape)
    loss = _scalarize(out, weights)
    f_scale = max(1.0, abs(float(loss.data)))
    grads = tape.backward(loss)

    def evaluate(perturbed: dict[str, np.ndarray]) -> float:
        res = fn({k: Tensor(v) for k, v in perturbed.items()})
        return float(_scalarize(res, weights).data)

    per_param = []
    for key, value in inputs.items():
        g_ad = grads[key]
        flat = value.ravel()
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        parts = [1.0, 1j] if np.iscomplexobj(value) else [1.0]
        ad, fd = [], []
        for part in parts:
            g_part = g_ad.ravel().real if part == 1.0 else g_ad.ravel().imag
            for i in idx:
                coord = flat[i].real if part == 1.0 else flat[i].imag
                h = 1e-6 * max(1.0, abs(coord))
                plus = flat.copy()
                minus = flat.copy()
                plus[i] += h * part
                minus[i] -= h * part
                trial = dict(inputs)
                trial[key] = plus.reshape(value.shape)
                f_plus = evaluate(trial)
                trial[key] = minus.reshape(value.shape)
                f_minus = evaluate(trial)
                fd.append((f_plus - f_minus) / (2 * h))
                ad.append(g_part[i])
        floor = max(EPS, FD_RESOLUTION * f_scale * np.sqrt(len(ad)))
        per_param.append((key, rel_error(np.array(ad), np.array(fd), floor)))
    worst = max((e for _, e in per_param), default=0.0)
    return GradReport(name, worst, per_param, tol)
