"""Declarative run configuration loaded from TOML.

Every section maps onto a dataclass; unknown keys are rejected and all
defaults are filled in before anything runs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backbone import ModelConfig
from .losses import LossWeights, ProtocolWeights, SSIMConfig
from .synthgen import DEFAULT_PROTOCOLS, CenterProfile, ProtocolProfile, default_fleet
from .trainer import FinetuneConfig, TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    seed: int = 0
    sigma0: float = 0.015
    patients_per_center: dict[str, int] = field(
        default_factory=lambda: {"C001": 5, "C002": 5, "C003": 4, "C004": 3, "C005": 4})
    protocols_per_patient: int = 2
    holdout_frac: float = 0.15
    val_patients_per_center: int = 1


@dataclass
class EvalConfig:
    param_ceiling: float = 0.05


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    data: DataConfig = field(default_factory=DataConfig)
    centers: dict[str, CenterProfile] = field(default_factory=default_fleet)
    protocols: dict[str, ProtocolProfile] = field(default_factory=lambda: dict(DEFAULT_PROTOCOLS))
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _make(cls, table, where: str, **fixed):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**{**table, **fixed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _loss(table: dict) -> LossWeights:
    table = dict(table)
    per = dict(LossWeights().per_protocol)
    for pid, t in table.pop("protocols", {}).items():
        base = dataclasses.asdict(per[pid]) if pid in per else {}
        per[pid] = _make(ProtocolWeights, {**base, **t}, f"loss.protocols.{pid}")
    ssim_cfg = _make(SSIMConfig, table.pop("ssim", {}), "loss.ssim")
    return _make(LossWeights, table, "loss", per_protocol=per, ssim=ssim_cfg)


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    data = _make(DataConfig, raw.get("data", {}), "data")
    fleet = default_fleet(data.sigma0)
    for cid, t in raw.get("centers", {}).items():
        base = dataclasses.asdict(fleet[cid]) if cid in fleet else {"center_id": cid}
        fleet[cid] = _make(CenterProfile, {**base, **t}, f"centers.{cid}")
    protocols = dict(DEFAULT_PROTOCOLS)
    for pid, t in raw.get("protocols", {}).items():
        base = dataclasses.asdict(protocols[pid]) if pid in protocols else {"protocol_id": pid}
        protocols[pid] = _make(ProtocolProfile, {**base, **t}, f"protocols.{pid}")
    trainer_t = dict(raw.get("trainer", {}))
    finetune = _make(FinetuneConfig, trainer_t.pop("finetune", {}), "trainer.finetune")
    return RunConfig(
        schema_version=version, data=data, centers=fleet, protocols=protocols,
        model=_make(ModelConfig, raw.get("model", {}), "model"),
        loss=_loss(raw.get("loss", {})),
        trainer=_make(TrainConfig, trainer_t, "trainer", finetune=finetune),
        eval=_make(EvalConfig, raw.get("eval", {}), "eval"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    return from_dict(raw)
