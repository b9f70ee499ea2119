"""SSIM-family losses, contrast-adaptive weighting and image metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adapters import AdapterRegistry, adapter_param_norm
from .diffmath import Tensor, as_tensor, ops


@dataclass
class ProtocolWeights:
    w_base: float
    w_ms: float
    w_freq: float
    w_l1: float = 0.1

    def __post_init__(self):
        if min(self.w_base, self.w_ms, self.w_freq, self.w_l1) < 0:
            raise ValueError("loss weights must be nonnegative")


def _default_protocol_weights():
    return {
        "cine": ProtocolWeights(1.0, 0.5, 0.25),
        "lge": ProtocolWeights(0.5, 1.0, 0.25),
        "mapping": ProtocolWeights(1.0, 0.5, 0.1),
        "perfusion": ProtocolWeights(0.75, 0.75, 0.25),
    }


@dataclass
class SSIMConfig:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("SSIM window must be a positive odd integer")


@dataclass
class LossWeights:
    per_protocol: dict[str, ProtocolWeights] = field(default_factory=_default_protocol_weights)
    scales: tuple[int, ...] = (1, 2, 4)
    beta: float = 1e-5
    ssim: SSIMConfig = field(default_factory=SSIMConfig)

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        if not self.scales or any(s < 1 or s & (s - 1) for s in self.scales):
            raise ValueError("scales must be a nonempty set of powers of two")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass
class LossBreakdown:
    base_ssim: float
    ms_ssim: float
    freq_ssim: float
    l1: float
    reg: float
    total: float
    loss: Tensor  # differentiable total


# ----------------------------------------------------------------------- SSIM

def _frames(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 2:
        return ops.reshape(x, (1, 1) + x.shape)
    if x.ndim == 3:
        return ops.reshape(x, (x.shape[0], 1) + x.shape[1:])
    raise ValueError(f"expected [H,W] or [T,H,W], got {x.shape}")


def ssim(x, y, cfg: SSIMConfig | None = None, data_range=None) -> Tensor:
    """Mean SSIM over valid uniform windows, averaged over frames.

    ``data_range`` defaults to the per-frame maximum of ``y``.
    """
    cfg = cfg or SSIMConfig()
    x4, y4 = _frames(x), _frames(y)
    if x4.shape != y4.shape:
        raise ValueError(f"shape mismatch {x4.shape} vs {y4.shape}")
    h, w = x4.shape[-2:]
    if cfg.window > min(h, w):
        raise ValueError(f"SSIM window {cfg.window} larger than image {(h, w)}")
    if data_range is None:
        data_range = y4.data.max(axis=(1, 2, 3))
    rng_ = np.broadcast_to(np.asarray(data_range, dtype=np.float64), (x4.shape[0],))
    if np.any(rng_ <= 0):
        raise ValueError("SSIM data range must be positive")
    c1 = ((cfg.k1 * rng_) ** 2)[:, None, None, None]
    c2 = ((cfg.k2 * rng_) ** 2)[:, None, None, None]
    kern = np.full((1, 1, cfg.window, cfg.window), 1.0 / cfg.window ** 2)

    def blur(t):
        return ops.conv2d(t, kern)

    mx, my = blur(x4), blur(y4)
    sxx = ops.sub(blur(ops.mul(x4, x4)), ops.mul(mx, mx))
    syy = ops.sub(blur(ops.mul(y4, y4)), ops.mul(my, my))
    sxy = ops.sub(blur(ops.mul(x4, y4)), ops.mul(mx, my))
    num = ops.mul(ops.add(ops.mul(ops.mul(mx, my), 2.0), c1), ops.add(ops.mul(sxy, 2.0), c2))
    den = ops.mul(ops.add(ops.add(ops.mul(mx, mx), ops.mul(my, my)), c1),
                  ops.add(ops.add(sxx, syy), c2))
    return ops.mean(ops.div(num, den))


def ms_ssim_loss(x, y, scales=(1, 2, 4), cfg: SSIMConfig | None = None, data_range=None) -> Tensor:
    """``mean_s (1/s) * (1 - SSIM(pool_s(x), pool_s(y)))`` with s x s average pooling."""
    cfg = cfg or SSIMConfig()
    x, y = as_tensor(x), as_tensor(y)
    h, w = x.shape[-2:]
    if min(h, w) // max(scales) < cfg.window:
        raise ValueError(f"scale {max(scales)} too coarse for a {(h, w)} image with window {cfg.window}")
    if data_range is None:
        data_range = y.data.reshape((-1,) + y.shape[-2:]).max(axis=(1, 2))
    total = as_tensor(0.0)
    for s in scales:
        term = ops.sub(1.0, ssim(ops.avg_pool2d(x, s), ops.avg_pool2d(y, s), cfg, data_range))
        total = ops.add(total, ops.mul(term, 1.0 / s))
    return ops.mul(total, 1.0 / len(scales))


def normalized_log_spectrum(x) -> Tensor:
    """Per-frame ``log1p(|fft2(x)|)`` min-max scaled to [0, 1]; flat spectra map to zeros."""
    x4 = _frames(x)
    spec = ops.log1p(ops.abs(ops.fft2(x4)))
    lo = ops.amin(spec, axis=(1, 2, 3), keepdims=True)
    hi = ops.amax(spec, axis=(1, 2, 3), keepdims=True)
    span = hi.data - lo.data
    flat = span <= 0
    denom = ops.add(ops.sub(hi, lo), flat.astype(np.float64))
    out = ops.div(ops.sub(spec, lo), denom)
    return ops.mul(out, (~flat).astype(np.float64))


def freq_ssim_loss(x, y, cfg: SSIMConfig | None = None) -> Tensor:
    """``1 - SSIM`` between normalised log-magnitude spectra (data range 1)."""
    nx, ny = normalized_log_spectrum(x), normalized_log_spectrum(y)
    if not np.any(nx.data) and not np.any(ny.data):
        return ops.mul(ops.sum(nx), 0.0)
    return ops.sub(1.0, ssim(ops.reshape(nx, nx.shape[:1] + nx.shape[2:]),
                             ops.reshape(ny, ny.shape[:1] + ny.shape[2:]), cfg, data_range=1.0))


def l1_loss(x, y) -> Tensor:
    return ops.mean(ops.abs(ops.sub(x, y)))


def total_loss(pred, gt, protocol_id: str, weights: LossWeights,
               registry: AdapterRegistry | None = None) -> LossBreakdown:
    """Protocol-weighted sum of SSIM, MS-SSIM, Freq-SSIM, L1 and the adapter penalty.

    Terms are accumulated in the fixed order base, ms, freq, l1, reg.
    """
    if protocol_id not in weights.per_protocol:
        raise KeyError(f"no loss weights for protocol {protocol_id!r}")
    pw = weights.per_protocol[protocol_id]
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and target {gt.shape} differ")
    base = ops.sub(1.0, ssim(pred, gt, weights.ssim))
    ms = ms_ssim_loss(pred, gt, weights.scales, weights.ssim)
    freq = freq_ssim_loss(pred, gt, weights.ssim)
    l1 = l1_loss(pred, gt)
    reg = adapter_param_norm(registry) if registry is not None else as_tensor(0.0)
    total = ops.mul(base, pw.w_base)
    total = ops.add(total, ops.mul(ms, pw.w_ms))
    total = ops.add(total, ops.mul(freq, pw.w_freq))
    total = ops.add(total, ops.mul(l1, pw.w_l1))
    total = ops.add(total, ops.mul(reg, weights.beta))
    return LossBreakdown(float(base.data), float(ms.data), float(freq.data), float(l1.data),
                         float(reg.data), float(total.data), total)


# -------------------------------------------------------------------- metrics

# an FFT round trip leaves ~1e-16 relative error; anything this small counts as lossless
LOSSLESS_RTOL = 1e-12


def psnr(x, gt) -> float:
    """``20 log10(max(gt) / rmse)``; ``inf`` once rmse is round-off (<= LOSSLESS_RTOL * peak)."""
    x, gt = np.asarray(x, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if x.shape != gt.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {gt.shape}")
    peak = gt.max()
    if peak == 0:
        raise ValueError("PSNR undefined for an all-zero reference")
    rmse = math.sqrt(float(np.mean((x - gt) ** 2)))
    if rmse <= LOSSLESS_RTOL * peak:
        return math.inf
    return 20.0 * math.log10(peak / rmse)


def ssim_value(x, gt, cfg: SSIMConfig | None = None) -> float:
    return float(ssim(np.asarray(x, dtype=np.float64), np.asarray(gt, dtype=np.float64), cfg).data)
