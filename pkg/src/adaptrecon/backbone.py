"""Unrolled variational reconstruction with a historical feature memory.

Each cascade runs a small CNN trunk on the current estimate (adjacent frames
stacked as channels), fuses the trunk features with an aggregate of earlier
cascades' features, maps the result to a complex regulariser output and
takes a data-consistency step.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import params as P
from .adapters import AdapterRegistry
from .diffmath import Tape, Tensor, as_tensor, ops
from .kspace import adjoint_encode, data_consistency_step, rss

LAMBDA_INIT = 1.0


@dataclass
class ModelConfig:
    cascades: int = 6
    width: int = 16
    kernel: int = 3
    adjacent: int = 5
    use_adapters: bool = True
    adapter_channels: int = 32
    adapter_kernel: int = 1
    adapter_alpha: float = 0.1
    norm_eps: float = 1e-5
    prob_universal: float = 0.15
    protocols: tuple[str, ...] = ("cine", "lge", "mapping", "perfusion")
    centers: tuple[str, ...] = ()

    def __post_init__(self):
        self.protocols = tuple(self.protocols)
        self.centers = tuple(self.centers)
        if self.cascades < 1:
            raise ValueError("need at least one cascade")
        if self.kernel % 2 == 0 or self.adapter_kernel % 2 == 0:
            raise ValueError("kernels must be odd")
        if self.adjacent % 2 == 0:
            raise ValueError("adjacent frame count must be odd")


@dataclass
class CascadeParams:
    trunk0_w: np.ndarray
    trunk0_b: np.ndarray
    trunk1_w: np.ndarray
    trunk1_b: np.ndarray
    trunk2_w: np.ndarray
    trunk2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    mem_proj_w: np.ndarray
    mem_proj_b: np.ndarray
    mem_score: np.ndarray
    lambda_raw: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: ModelConfig) -> "CascadeParams":
        w, k = cfg.width, cfg.kernel
        return cls(
            trunk0_w=P.conv_init(rng, w, 2 * cfg.adjacent, k), trunk0_b=np.zeros(w),
            trunk1_w=P.conv_init(rng, w, w, k), trunk1_b=np.zeros(w),
            trunk2_w=P.conv_init(rng, w, w, k), trunk2_b=np.zeros(w),
            # small head so the untrained cascade is close to plain data consistency
            head_w=0.1 * P.conv_init(rng, 2, w, k), head_b=np.zeros(2),
            gate_w=P.conv_init(rng, w, 2 * w, k), gate_b=np.zeros(w),
            mem_proj_w=np.eye(w)[:, :, None, None].copy(), mem_proj_b=np.zeros(w),
            mem_score=np.zeros(1),
            lambda_raw=np.array([math.log(math.expm1(LAMBDA_INIT))]),
        )

    @property
    def step_size(self) -> Tensor:
        return ops.softplus(self.lambda_raw)


@dataclass
class Model:
    config: ModelConfig
    cascades: list[CascadeParams]
    registry: AdapterRegistry | None

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        cascades = [CascadeParams.init(rng, cfg) for _ in range(cfg.cascades)]
        registry = None
        if cfg.use_adapters:
            registry = AdapterRegistry.init(
                cfg.protocols, cfg.centers, rng, cfg.prob_universal,
                channels=cfg.adapter_channels, kernel=cfg.adapter_kernel,
                alpha=cfg.adapter_alpha, norm_eps=cfg.norm_eps)
        return cls(cfg, cascades, registry)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for t, c in enumerate(self.cascades):
            out.update(P.named_arrays(c, f"backbone/c{t}/"))
        if self.registry is not None:
            out.update(self.registry.named_arrays())
        return out

    def bind(self, tape: Tape, trainable=None, adapter_keys=()) -> "Model":
        """Watch backbone parameters accepted by ``trainable`` plus the adapters in ``adapter_keys``."""
        cascades = [P.bind(c, tape, f"backbone/c{t}/", trainable) for t, c in enumerate(self.cascades)]
        registry = self.registry
        if registry is not None:
            registry = registry.bind(tape, adapter_keys)
        return dataclasses.replace(self, cascades=cascades, registry=registry)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> "Model":
        cascades = [P.load_arrays(c, f"backbone/c{t}/", arrays) for t, c in enumerate(self.cascades)]
        registry = self.registry
        if registry is not None:
            registry = dataclasses.replace(
                registry,
                protocol={k: P.load_arrays(v, f"adapter/protocol/{k}/", arrays)
                          for k, v in registry.protocol.items()},
                center={k: P.load_arrays(v, f"adapter/center/{k}/", arrays)
                        for k, v in registry.center.items()},
                universal=P.load_arrays(registry.universal, "adapter/universal/", arrays),
            )
        return dataclasses.replace(self, cascades=cascades, registry=registry)


# --------------------------------------------------------------------- memory

@dataclass
class FeatureMemory:
    bank: list[Tensor] = field(default_factory=list)
    projected: list[Tensor] = field(default_factory=list)  # P_j(F_j), computed once on append
    scores: list = field(default_factory=list)

    def __len__(self):
        return len(self.bank)

    def append(self, features: Tensor, cascade: CascadeParams):
        if self.bank and features.shape != self.bank[0].shape:
            raise ValueError(f"feature shape {features.shape} != {self.bank[0].shape}")
        self.bank.append(features)
        self.projected.append(ops.conv2d(features, cascade.mem_proj_w, cascade.mem_proj_b))
        self.scores.append(cascade.mem_score)


def memory_weights(memory: FeatureMemory) -> Tensor:
    scores = ops.concat([as_tensor(s) for s in memory.scores], axis=0)
    return ops.softmax(scores)


def memory_aggregate(memory: FeatureMemory, shape=None) -> Tensor:
    """Softmax-weighted sum of per-stage projected features; zeros for an empty bank."""
    if not memory.bank:
        if shape is None:
            raise ValueError("empty memory needs an explicit feature shape")
        return Tensor(np.zeros(shape))
    shape0 = memory.bank[0].shape
    for f in memory.bank:
        if f.shape != shape0:
            raise ValueError(f"memory entry shape {f.shape} != {shape0}")
    weights = memory_weights(memory)
    total = None
    for j, proj in enumerate(memory.projected):
        term = ops.mul(proj, ops.getitem(weights, slice(j, j + 1)))
        total = term if total is None else ops.add(total, term)
    return total


def gate(current, aggregated, cascade: CascadeParams) -> Tensor:
    """Per-pixel, per-channel fusion weight alpha = sigmoid(conv([current | aggregated]))."""
    pad = cascade.gate_w.shape[-1] // 2
    return ops.sigmoid(ops.conv2d(ops.concat([current, aggregated], axis=1),
                                  cascade.gate_w, cascade.gate_b, pad=pad))


def fuse_features(current, aggregated, cascade: CascadeParams | None = None, alpha=None) -> Tensor:
    """``alpha * current + (1 - alpha) * aggregated``; alpha comes from the gate unless given."""
    current, aggregated = as_tensor(current), as_tensor(aggregated)
    if current.shape != aggregated.shape:
        raise ValueError(f"cannot fuse {current.shape} with {aggregated.shape}")
    if alpha is None:
        alpha = gate(current, aggregated, cascade)
    return ops.add(ops.mul(alpha, current), ops.mul(ops.sub(1.0, alpha), aggregated))


# ------------------------------------------------------------------- cascades

def stack_adjacent(x: Tensor, adjacent: int) -> Tensor:
    """``[T,H,W]`` complex -> ``[T, 2*adjacent, H, W]`` real, frames wrapped circularly."""
    t, h, w = x.shape
    half = adjacent // 2
    idx = (np.arange(t)[:, None] + np.arange(-half, half + 1)[None, :]) % t
    parts = ops.stack([ops.real(x), ops.imag(x)], axis=1)  # [T,2,H,W]
    return ops.reshape(ops.take(parts, idx.ravel(), axis=0), (t, 2 * adjacent, h, w))


def trunk(x: Tensor, c: CascadeParams, adjacent: int) -> Tensor:
    pad = c.trunk0_w.shape[-1] // 2
    h = ops.relu(ops.conv2d(stack_adjacent(x, adjacent), c.trunk0_w, c.trunk0_b, pad=pad))
    h = ops.relu(ops.conv2d(h, c.trunk1_w, c.trunk1_b, pad=pad))
    return ops.relu(ops.conv2d(h, c.trunk2_w, c.trunk2_b, pad=pad))


def head(features: Tensor, c: CascadeParams) -> Tensor:
    pad = c.head_w.shape[-1] // 2
    out = ops.conv2d(features, c.head_w, c.head_b, pad=pad)
    return ops.to_complex(out[:, 0], out[:, 1])


def cascade_forward(x, y, sens, mask, c: CascadeParams, memory: FeatureMemory,
                    adjacent: int = 5) -> tuple[Tensor, Tensor]:
    """One unrolled step; the caller appends the returned features to ``memory``."""
    x = as_tensor(x)
    features = trunk(x, c, adjacent)
    aggregated = memory_aggregate(memory, features.shape)
    enhanced = fuse_features(features, aggregated, c)
    x_next = data_consistency_step(x, y, sens, mask, c.step_size, head(enhanced, c))
    return x_next, features


def reconstruct(y, sens, mask, model: Model, return_state: bool = False):
    """Run every cascade from the adjoint image and return the RSS magnitude ``[T,H,W]``."""
    if not model.cascades:
        raise ValueError("model has no cascades")
    maps = sens.maps if hasattr(sens, "maps") else np.asarray(sens)
    x = adjoint_encode(y, maps, mask)
    memory = FeatureMemory()
    for c in model.cascades:
        x, feats = cascade_forward(x, y, maps, mask, c, memory, model.config.adjacent)
        memory.append(feats, c)
    image = rss(ops.mul(ops.reshape(x, (x.shape[0], 1) + x.shape[1:]), maps[None]), axis=1)
    return (image, x, memory) if return_state else image


# ----------------------------------------------------------------- counting

def conv_count(out_ch: int, in_ch: int, k: int) -> int:
    return out_ch * in_ch * k * k + out_ch


def count_params(model: Model) -> dict:
    backbone = sum(P.count(c) for c in model.cascades)
    per_adapter = {}
    if model.registry is not None:
        per_adapter = {key: P.count(ad) for key, ad in model.registry.items()}
    adapters = sum(per_adapter.values())
    return {"backbone": backbone, "per_adapter": per_adapter, "total": backbone + adapters,
            "adapter_fraction": adapters / backbone if backbone else 0.0}
