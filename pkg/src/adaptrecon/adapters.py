"""Protocol, center and universal residual adapters applied to magnitude images."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import params as P
from .diffmath import Tape, Tensor, as_tensor, ops

UNIVERSAL = "UNIVERSAL"


@dataclass
class AdapterParams:
    """``x + alpha * tanh(W3 * phi(W2 * phi(W1 * lift(N(x)))))`` with channels C -> C/4 -> C/16 -> 1."""

    lift_w: np.ndarray
    lift_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    alpha: np.ndarray
    norm_eps: float = field(default=1e-5, metadata={"param": False})

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int = 32, kernel: int = 1,
             alpha: float = 0.1, norm_eps: float = 1e-5) -> "AdapterParams":
        if channels % 16:
            raise ValueError(f"adapter channels must be divisible by 16, got {channels}")
        c1, c2 = channels // 4, channels // 16
        return cls(
            lift_w=P.conv_init(rng, channels, 1, 1), lift_b=np.zeros(channels),
            w1=P.conv_init(rng, c1, channels, kernel), b1=np.zeros(c1),
            w2=P.conv_init(rng, c2, c1, kernel), b2=np.zeros(c2),
            w3=P.conv_init(rng, 1, c2, kernel), b3=np.zeros(1),
            alpha=np.array([alpha]), norm_eps=norm_eps,
        )

    @property
    def kernel(self) -> int:
        return self.w1.shape[-1]


def _phi(h: Tensor, eps: float) -> Tensor:
    # instance norm stands in for batch norm: micro-batches hold a single case
    return ops.relu(ops.instance_norm(h, eps))


def adapter_apply(x, p: AdapterParams) -> Tensor:
    """Apply one adapter frame-by-frame to a nonnegative magnitude stack ``[T,H,W]``."""
    x = as_tensor(x)
    t, h, w = x.shape
    pad = p.kernel // 2
    u = ops.instance_norm(ops.reshape(x, (t, 1, h, w)), p.norm_eps)
    z = ops.conv2d(u, p.lift_w, p.lift_b)
    z = _phi(ops.conv2d(z, p.w1, p.b1, pad=pad), p.norm_eps)
    z = _phi(ops.conv2d(z, p.w2, p.b2, pad=pad), p.norm_eps)
    r = ops.tanh(ops.conv2d(z, p.w3, p.b3, pad=pad))
    return ops.add(x, ops.mul(ops.reshape(r, (t, h, w)), p.alpha))


@dataclass
class AdapterRegistry:
    protocol: dict[str, AdapterParams]
    center: dict[str, AdapterParams]
    universal: AdapterParams
    prob_universal: float = 0.15

    @classmethod
    def init(cls, protocols, centers, rng: np.random.Generator, prob_universal: float = 0.15,
             **adapter_kw) -> "AdapterRegistry":
        if not 0 <= prob_universal <= 1:
            raise ValueError("prob_universal must lie in [0, 1]")
        proto = {p: AdapterParams.init(rng, **adapter_kw) for p in sorted(protocols)}
        cent = {c: AdapterParams.init(rng, **adapter_kw) for c in sorted(centers)}
        return cls(proto, cent, AdapterParams.init(rng, **adapter_kw), prob_universal)

    def items(self):
        """``(key, adapter)`` pairs with checkpoint keys, in a fixed order."""
        for k in sorted(self.protocol):
            yield f"protocol/{k}", self.protocol[k]
        for k in sorted(self.center):
            yield f"center/{k}", self.center[k]
        yield "universal", self.universal

    def get(self, key: str) -> AdapterParams:
        if key == "universal":
            return self.universal
        kind, _, name = key.partition("/")
        table = {"protocol": self.protocol, "center": self.center}.get(kind)
        if table is None or name not in table:
            raise KeyError(f"no adapter {key!r} in registry")
        return table[name]

    def named_arrays(self, prefix: str = "adapter/") -> dict[str, np.ndarray]:
        out = {}
        for key, ad in self.items():
            out.update(P.named_arrays(ad, f"{prefix}{key}/"))
        return out

    def bind(self, tape: Tape, keys, prefix: str = "adapter/") -> "AdapterRegistry":
        """Watch only the adapters named in ``keys``; the rest stay constant."""
        keys = set(keys)

        def maybe(key, ad):
            return P.bind(ad, tape, f"{prefix}{key}/") if key in keys else ad

        return dataclasses.replace(
            self,
            protocol={k: maybe(f"protocol/{k}", v) for k, v in self.protocol.items()},
            center={k: maybe(f"center/{k}", v) for k, v in self.center.items()},
            universal=maybe("universal", self.universal),
        )

    def restricted(self, keys) -> "AdapterRegistry":
        """Registry view holding only ``keys`` (used for the per-step penalty)."""
        keys = set(keys)
        empty = dataclasses.replace(self.universal, **{n: np.zeros(0) for n, _ in P.array_fields(self.universal)})
        return dataclasses.replace(
            self,
            protocol={k: v for k, v in self.protocol.items() if f"protocol/{k}" in keys},
            center={k: v for k, v in self.center.items() if f"center/{k}" in keys},
            universal=self.universal if "universal" in keys else empty,
        )


@dataclass(frozen=True)
class AdapterSelection:
    protocol_key: str
    center_key: str
    drawn_from: str  # "training-stochastic" | "eval-deterministic"

    @property
    def keys(self) -> tuple[str, str]:
        center = "universal" if self.center_key == UNIVERSAL else f"center/{self.center_key}"
        return center, f"protocol/{self.protocol_key}"


def select_adapters(registry: AdapterRegistry, protocol_id: str, center_id: str,
                    mode: str = "eval", rng: np.random.Generator | None = None) -> AdapterSelection:
    """Protocol adapter by sequence; center adapter swapped for the universal one
    with probability ``prob_universal`` in training, and always for unseen centers."""
    if protocol_id not in registry.protocol:
        raise KeyError(f"unknown protocol {protocol_id!r}")
    known = center_id in registry.center
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode selection needs an rng")
        use_universal = (not known) or rng.random() < registry.prob_universal
        return AdapterSelection(protocol_id, UNIVERSAL if use_universal else center_id,
                                "training-stochastic")
    if mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return AdapterSelection(protocol_id, center_id if known else UNIVERSAL, "eval-deterministic")


def adapt(image, selection: AdapterSelection, registry: AdapterRegistry) -> Tensor:
    """Center-level (or universal) adapter first, then the protocol adapter."""
    center_key, protocol_key = selection.keys
    out = adapter_apply(image, registry.get(center_key))
    return adapter_apply(out, registry.get(protocol_key))


def adapter_param_norm(registry: AdapterRegistry) -> Tensor:
    """Sum of squared Frobenius norms of every adapter tensor in the registry."""
    total = as_tensor(0.0)
    for _, ad in registry.items():
        for _, v in P.array_fields(ad):
            v = as_tensor(v)
            if v.data.size:
                total = ops.add(total, ops.sum(ops.square(v)))
    return total
