"""Multi-coil Cartesian encoding, sampling masks and the data-consistency update.

K-space arrays use numpy's native FFT layout (DC at index 0). Masks are
built in the centred view, where ACS columns sit in the middle, and stored
ifftshifted so ``y = mask * fft2(sens * x)`` needs no extra shifts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffmath import Tensor, as_tensor
from .diffmath import ops

MASK_KINDS = ("uniform", "kt_gaussian", "radial")
GOLDEN_ANGLE = math.pi * (math.sqrt(5) - 1) / 2  # ~111.25 deg


@dataclass
class SamplingMask:
    kind: str
    pattern: np.ndarray  # [T,H,W] or [H,W], values in {0, 1}, FFT layout
    target_accel: float
    acs_lines: int

    @property
    def achieved_accel(self) -> float:
        return self.pattern.size / float(self.pattern.sum())

    @property
    def centered(self) -> np.ndarray:
        return np.fft.fftshift(self.pattern, axes=(-2, -1))

    def frames(self, t: int) -> np.ndarray:
        """Pattern broadcast to ``[t, H, W]``."""
        p = self.pattern if self.pattern.ndim == 3 else self.pattern[None]
        if p.shape[0] == 1 and t > 1:
            p = np.repeat(p, t, axis=0)
        if p.shape[0] != t:
            raise ValueError(f"mask has {p.shape[0]} frames, data has {t}")
        return p


@dataclass
class CoilSensitivities:
    maps: np.ndarray  # complex [Ncoil,H,W]

    @property
    def ncoil(self) -> int:
        return self.maps.shape[0]


@dataclass
class KSpaceVolume:
    data: np.ndarray  # complex [T,Ncoil,H,W]
    mask: SamplingMask


def _maps(sens) -> np.ndarray:
    return sens.maps if isinstance(sens, CoilSensitivities) else np.asarray(sens)


def _pattern(mask, t: int) -> np.ndarray:
    if isinstance(mask, SamplingMask):
        return mask.frames(t)
    p = np.asarray(mask, dtype=np.float64)
    return np.broadcast_to(p if p.ndim == 3 else p[None], (t,) + p.shape[-2:])


def _kdata(y):
    return y.data if isinstance(y, KSpaceVolume) else y


# ------------------------------------------------------------------ operators

def forward_encode(x, sens, mask) -> Tensor:
    """``y[t, c] = M[t] * fft2(S[c] * x[t])`` for ``x[T,H,W]``; returns ``[T,C,H,W]``."""
    x = as_tensor(x)
    s = _maps(sens)
    if x.ndim != 3 or s.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"image {x.shape} and sensitivities {s.shape} disagree")
    m = _pattern(mask, x.shape[0])
    if m.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"mask {m.shape} and image {x.shape} disagree")
    coil_images = ops.mul(ops.reshape(x, (x.shape[0], 1) + x.shape[1:]), s[None])
    return ops.mul(ops.fft2(coil_images), m[:, None])


def adjoint_encode(y, sens, mask=None) -> Tensor:
    """``x[t] = sum_c conj(S[c]) * ifft2(M[t] * y[t, c])``.

    The mask is reapplied when given, which is a no-op for acquired data.
    """
    y = as_tensor(_kdata(y))
    s = _maps(sens)
    if y.ndim != 4 or y.shape[1:] != s.shape:
        raise ValueError(f"k-space {y.shape} and sensitivities {s.shape} disagree")
    if mask is not None:
        y = ops.mul(y, _pattern(mask, y.shape[0])[:, None])
    return ops.sum(ops.mul(ops.ifft2(y), np.conj(s)[None]), axis=1)


def rss(x, axis: int = 0) -> Tensor:
    """Root-sum-of-squares coil combination along ``axis``."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ValueError("rss needs at least one coil")
    return ops.sqrt(ops.sum(ops.abs2(x), axis=axis))


def data_consistency_step(x, y, sens, mask, lambda_t, reg_out) -> Tensor:
    """``x - lambda_t * (A^H(M(A x - y)) + reg_out)``."""
    x, reg_out = as_tensor(x), as_tensor(reg_out)
    if reg_out.shape != x.shape:
        raise ValueError(f"regulariser output {reg_out.shape} != state {x.shape}")
    lam = as_tensor(lambda_t)
    if np.any(lam.data < 0):
        raise ValueError(f"step size must be nonnegative, got {lam.data}")
    residual = ops.sub(forward_encode(x, sens, mask), _kdata(y))
    grad = ops.add(adjoint_encode(residual, sens, mask), reg_out)
    return ops.sub(x, ops.mul(grad, lam))


def zero_filled_recon(y, sens=None) -> np.ndarray:
    """RSS of per-coil inverse FFTs of zero-filled k-space ``[T,C,H,W]``."""
    data = np.asarray(_kdata(y))
    return np.sqrt((np.abs(np.fft.ifft2(data, norm="ortho")) ** 2).sum(axis=1))


# ---------------------------------------------------------------------- masks

def _acs_columns(w: int, acs: int) -> np.ndarray:
    start = w // 2 - acs // 2
    return np.arange(start, start + acs)


def _uniform(shape, accel, acs):
    t, h, w = shape
    budget = int(round(w / accel))
    if acs > budget:
        raise ValueError(f"ACS block of {acs} columns exceeds the budget of {budget} at R={accel}")
    acs_cols = _acs_columns(w, acs)
    outer = np.setdiff1d(np.arange(w), acs_cols)
    extra = budget - acs
    cols = np.zeros(w, dtype=bool)
    cols[acs_cols] = True
    if extra:
        picks = np.floor((np.arange(extra) + 0.5) * len(outer) / extra).astype(int)
        cols[outer[picks]] = True
    return np.broadcast_to(cols[None, None, :], shape).astype(np.float64)


def _kt_gaussian(shape, accel, acs, rng):
    t, h, w = shape
    budget = int(round(w / accel))
    if acs > budget:
        raise ValueError(f"ACS block of {acs} columns exceeds the budget of {budget} at R={accel}")
    acs_cols = _acs_columns(w, acs)
    outer = np.setdiff1d(np.arange(w), acs_cols)
    sigma = w / 6.0
    dens = np.exp(-0.5 * ((outer - w / 2.0) / sigma) ** 2)
    dens /= dens.sum()
    out = np.zeros(shape)
    for f in range(t):
        out[f, :, acs_cols] = 1.0
        if budget > acs:
            chosen = rng.choice(outer, size=budget - acs, replace=False, p=dens)
            out[f, :, chosen] = 1.0
    return out


def _spokes(h, w, n_spokes, theta0):
    n = max(h, w)
    steps = np.arange(-(n // 2), n // 2 + 1)
    grid = np.zeros((h, w), dtype=bool)
    cy, cx = h // 2, w // 2
    for k in range(n_spokes):
        th = theta0 + k * math.pi / n_spokes
        c, s = math.cos(th), math.sin(th)
        # one sample per grid step along the dominant axis (8-connected line)
        if abs(c) >= abs(s):
            cols = cx + steps
            rows = np.rint(cy + steps * s / c).astype(int)
        else:
            rows = cy + steps
            cols = np.rint(cx + steps * c / s).astype(int)
        ok = (rows - cy) ** 2 + (cols - cx) ** 2 <= (n / 2) ** 2
        ok &= (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        grid[rows[ok], cols[ok]] = True
    return grid


def _radial(shape, accel, rng):
    t, h, w = shape
    nominal = math.ceil(h * w / (accel * max(h, w)))
    theta0 = rng.uniform(0, math.pi)

    def build(n_spokes):
        return np.stack([_spokes(h, w, n_spokes, theta0 + f * GOLDEN_ANGLE) for f in range(t)])

    # rasterised spokes overlap near the centre, so the nominal count can miss
    # the budget; search outward from it for the first count within 10%
    best, best_err = None, np.inf
    for delta in range(max(h, w)):
        for n_spokes in {nominal + delta, nominal - delta}:
            if n_spokes < 1:
                continue
            out = build(n_spokes)
            err = abs(out.size / out.sum() / accel - 1.0)
            if err <= 0.1:
                return out.astype(np.float64)
            if err < best_err:
                best, best_err = out, err
    return best.astype(np.float64)


def make_mask(kind: str, shape, target_accel: float, acs_lines: int = 8,
              seed: int = 0) -> SamplingMask:
    """Build a sampling mask; ``shape`` is ``(H, W)`` or ``(T, H, W)``.

    Radial masks have no ACS block (``acs_lines`` is recorded as 0).
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    if target_accel < 1:
        raise ValueError("target acceleration must be >= 1")
    shape = tuple(int(s) for s in shape)
    full = shape if len(shape) == 3 else (1,) + shape
    rng = np.random.default_rng(seed)
    if kind == "radial":
        pattern = _radial(full, target_accel, rng)
        acs_lines = 0
    else:
        if acs_lines < 2 or acs_lines % 2:
            raise ValueError("acs_lines must be even and >= 2")
        if kind == "uniform":
            pattern = _uniform(full, target_accel, acs_lines)
        else:
            pattern = _kt_gaussian(full, target_accel, acs_lines, rng)
    pattern = np.fft.ifftshift(pattern, axes=(-2, -1))
    if len(shape) == 2:
        pattern = pattern[0]
    return SamplingMask(kind, np.ascontiguousarray(pattern), float(target_accel), acs_lines)
