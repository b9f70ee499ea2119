"""Finite-difference checks of composed pipelines (adapter block, reconstruct + loss)."""
from __future__ import annotations

import dataclasses

import numpy as np

from . import params as P
from .adapters import AdapterParams, adapter_apply
from .backbone import Model, ModelConfig, reconstruct
from .diffmath import GradReport, grad_check
from .kspace import make_mask
from .losses import LossWeights, SSIMConfig, total_loss


def _with_tensors(obj, prefix: str, tensors: dict):
    updates = {n: tensors[f"{prefix}{n}"] for n, _ in P.array_fields(obj) if f"{prefix}{n}" in tensors}
    return dataclasses.replace(obj, **updates)


def adapter_block_check(tol: float = 1e-4, seed: int = 0, size: int = 8, kernel: int = 3) -> GradReport:
    rng = np.random.default_rng(seed)
    ad = AdapterParams.init(rng, channels=16, kernel=kernel, alpha=0.5)
    x = np.abs(rng.standard_normal((2, size, size))) + 0.1
    inputs = {"x": x, **P.named_arrays(ad, "ad/")}

    def fn(t):
        return adapter_apply(t["x"], _with_tensors(ad, "ad/", t))

    return grad_check(fn, inputs, tol=tol, name="adapter_block", seed=seed)


def small_problem(seed: int = 0, size: int = 8, frames: int = 2, coils: int = 2):
    """Random complex-coil problem: ground truth, unit-RSS maps, mask and k-space."""
    rng = np.random.default_rng(seed)
    gt = 0.2 + np.abs(rng.standard_normal((frames, size, size)))
    maps = rng.standard_normal((coils, size, size)) + 1j * rng.standard_normal((coils, size, size))
    maps /= np.sqrt((np.abs(maps) ** 2).sum(axis=0, keepdims=True))
    mask = make_mask("uniform", (frames, size, size), 2.0, acs_lines=2, seed=seed)
    y = np.fft.fft2(gt[:, None] * maps[None], norm="ortho") * mask.frames(frames)[:, None]
    return gt, maps, mask, y


def reconstruct_loss_check(tol: float = 1e-4, seed: int = 0, cascades: int = 2,
                           max_entries: int | None = 300) -> GradReport:
    """Two cascades + adapters + full loss on an 8x8 problem, w.r.t. every parameter."""
    gt, maps, mask, y = small_problem(seed)
    cfg = ModelConfig(cascades=cascades, width=4, adjacent=1, adapter_channels=16,
                      adapter_alpha=0.5, protocols=("cine",), centers=("C001",))
    model = Model.init(cfg, seed)
    # fine scales only: an 8x8 image cannot host a 7x7 window after pooling
    weights = LossWeights(scales=(1, 2), ssim=SSIMConfig(window=3))
    # perturb the head so the regulariser is not negligible
    model.cascades[0].head_w *= 10.0
    inputs = model.named_arrays()

    def fn(t):
        m = dataclasses.replace(
            model,
            cascades=[_with_tensors(c, f"backbone/c{i}/", t) for i, c in enumerate(model.cascades)],
            registry=dataclasses.replace(
                model.registry,
                protocol={k: _with_tensors(v, f"adapter/protocol/{k}/", t)
                          for k, v in model.registry.protocol.items()},
                center={k: _with_tensors(v, f"adapter/center/{k}/", t)
                        for k, v in model.registry.center.items()},
                universal=_with_tensors(model.registry.universal, "adapter/universal/", t)),
        )
        image = reconstruct(y, maps, mask, m)
        image = adapter_apply(adapter_apply(image, m.registry.center["C001"]), m.registry.protocol["cine"])
        return total_loss(image, gt, "cine", weights, m.registry).loss

    return grad_check(fn, inputs, tol=tol, name=f"reconstruct{cascades}+loss",
                      max_entries=max_entries, seed=seed)


def check_pipelines(tol: float = 1e-4, seed: int = 0) -> list[GradReport]:
    return [adapter_block_check(tol, seed), reconstruct_loss_check(tol, seed)]
