"""Optimisation: schedules, AdamW, clipping, accumulation, early stopping,
checkpoints, end-to-end training and center-weighted fine-tuning."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .adapters import adapt, select_adapters
from .backbone import Model, ModelConfig, reconstruct
from .container import read_tensor, write_tensor
from .diffmath import Tape, ops
from .losses import LossWeights, psnr, ssim_value, total_loss
from .synthgen import Case, Dataset

CHECKPOINT_FORMAT = "adaptrecon-checkpoint"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ["epoch", "step", "train_loss", "val_ssim", "val_psnr", "lr_backbone", "lr_adapter"]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


# -------------------------------------------------------------------- configs

@dataclass
class FinetuneConfig:
    enabled: bool = False
    epochs: int = 5
    wc_min: float = 0.3
    wc_max: float = 5.0
    T0: int = 5
    eta_min_ft: float = 1e-7
    adapter_lr_multipliers: tuple[float, float] = (0.02, 0.3)
    weight_losses: bool = True
    weight_sampling: bool = True

    def __post_init__(self):
        self.adapter_lr_multipliers = tuple(float(m) for m in self.adapter_lr_multipliers)
        lo, hi = self.adapter_lr_multipliers
        if not 0 < self.wc_min < self.wc_max:
            raise ValueError("need 0 < wc_min < wc_max")
        if not 0 < lo <= hi:
            raise ValueError("adapter lr multipliers must satisfy 0 < low <= high")
        if self.T0 < 1 or self.epochs < 1:
            raise ValueError("T0 and epochs must be >= 1")
        if self.eta_min_ft <= 0:
            raise ValueError("eta_min_ft must be positive")


@dataclass
class TrainConfig:
    lr_backbone: float = 2e-4
    lr_adapter: float = 4e-4
    weight_decay: float = 1e-4
    eta_min: float = 1e-6
    accumulation_steps: int = 8
    patience: int = 2
    prob_universal: float = 0.15
    epochs: int = 10
    seed: int = 0
    clip_max_norm: float = 1.0
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        if isinstance(self.finetune, dict):
            self.finetune = FinetuneConfig(**self.finetune)
        for name in ("lr_backbone", "lr_adapter", "eta_min", "clip_max_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.prob_universal <= 1:
            raise ValueError("prob_universal must lie in [0, 1]")


# ------------------------------------------------------------------ schedules

def lr_schedule(step: int, total_steps: int, base_lr: float, eta_min: float,
                warm_restart_T0: int | None = None, steps_per_epoch: int = 1) -> float:
    """Cosine annealing; with ``warm_restart_T0`` the cosine restarts after cycles
    of T0, 2*T0, 4*T0 ... epochs (``steps_per_epoch`` steps each)."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if step < 0:
        raise ValueError("step must be nonnegative")
    if base_lr <= eta_min:
        raise ValueError("base_lr must exceed eta_min")
    if warm_restart_T0 is None:
        pos, length = min(step, total_steps), total_steps
    else:
        if warm_restart_T0 < 1 or steps_per_epoch < 1:
            raise ValueError("T0 and steps_per_epoch must be >= 1")
        pos, length = step, warm_restart_T0 * steps_per_epoch
        while pos >= length:
            pos -= length
            length *= 2
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + math.cos(math.pi * pos / length))


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
               lr_map, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8
               ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW update with decoupled weight decay and bias correction.

    ``lr_map`` is a mapping or callable from parameter name to learning rate.
    Parameters without a gradient are returned untouched.
    """
    b1, b2 = betas
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    out = dict(params)
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        theta = params[name]
        lr = lr_map(name) if callable(lr_map) else lr_map[name]
        m = b1 * state.m.get(name, np.zeros_like(theta)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(theta)) + (1 - b2) * g * g
        t = state.t.get(name, 0) + 1
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        decayed = theta - lr * weight_decay * theta
        out[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
        state.m[name], state.v[name], state.t[name] = m, v, t
    return out, state


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(grads[k]))) for k in sorted(grads)))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


class GradAccumulator:
    """Sums micro-batch gradients in arrival order; ``mean()`` scales by 1/count."""

    def __init__(self):
        self.total: dict[str, np.ndarray] = {}
        self.count = 0

    def add(self, grads: dict[str, np.ndarray]):
        for k in sorted(grads):
            self.total[k] = grads[k].copy() if k not in self.total else self.total[k] + grads[k]
        self.count += 1

    def mean(self) -> dict[str, np.ndarray]:
        if not self.count:
            raise ValueError("no gradients accumulated")
        scale = 1.0 / self.count
        return {k: v * scale for k, v in self.total.items()}

    def reset(self):
        self.total, self.count = {}, 0


@dataclass
class EarlyStopper:
    patience: int
    best: float = -math.inf
    best_epoch: int = 0
    since_best: int = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record an epoch's validation score; True means stop now."""
        if value > self.best:
            self.best, self.best_epoch, self.since_best = value, epoch, 0
        else:
            self.since_best += 1
        return self.since_best >= self.patience


# ----------------------------------------------------------------- state & io

@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    best_val_ssim: float = -math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    rng_state: dict = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)
    best_params: dict[str, np.ndarray] = field(default_factory=dict)


def _fname(name: str) -> str:
    return name.replace("/", ".") + ".bin"


def _write_arrays(directory: Path, arrays: dict[str, np.ndarray]) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    return {k: write_tensor(directory / _fname(k), arrays[k]) for k in sorted(arrays)}


def _read_arrays(directory: Path, entries: dict) -> dict[str, np.ndarray]:
    return {k: read_tensor(directory / e["file"], e) for k, e in sorted(entries.items())}


def _json_float(x: float):
    return x if math.isfinite(x) else repr(x)


def save_checkpoint(directory, model: Model, state: TrainState | None = None) -> Path:
    """Write parameters (and optionally the full training state) under ``directory``.

    The output contains no timestamps, so identical inputs give identical bytes.
    """
    directory = Path(directory)
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    meta = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "adapter_keys": [k for k, _ in model.registry.items()] if model.registry is not None else [],
        "params": _write_arrays(directory / "params", model.named_arrays()),
    }
    if state is not None:
        meta["schedule_step"] = state.step
        meta["rng_state"] = state.rng_state
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    if state is not None:
        st = {
            "step": state.step, "epoch": state.epoch,
            "best_val_ssim": _json_float(state.best_val_ssim), "best_epoch": state.best_epoch,
            "epochs_since_best": state.epochs_since_best, "rng_state": state.rng_state,
            "loss_history": [_json_float(x) for x in state.loss_history],
            "adam_t": dict(sorted(state.adam.t.items())),
            "adam_m": _write_arrays(directory / "state" / "m", state.adam.m),
            "adam_v": _write_arrays(directory / "state" / "v", state.adam.v),
            "best_params": _write_arrays(directory / "state" / "best", state.best_params),
        }
        (directory / "state.json").write_text(json.dumps(st, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[Model, TrainState | None]:
    directory = Path(directory)
    meta_path = directory / "model.json"
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{meta_path}: unreadable checkpoint ({exc})") from exc
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{meta_path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    model = Model.init(ModelConfig(**meta["model_config"]))
    model = model.load_arrays(_read_arrays(directory / "params", meta["params"]))
    state = None
    state_path = directory / "state.json"
    if state_path.exists():
        st = json.loads(state_path.read_text())
        state = TrainState(
            step=st["step"], epoch=st["epoch"],
            adam=AdamState(_read_arrays(directory / "state" / "m", st["adam_m"]),
                           _read_arrays(directory / "state" / "v", st["adam_v"]),
                           dict(st["adam_t"])),
            best_val_ssim=float(st["best_val_ssim"]), best_epoch=st["best_epoch"],
            epochs_since_best=st["epochs_since_best"], rng_state=st["rng_state"],
            loss_history=[float(x) for x in st["loss_history"]],
            best_params=_read_arrays(directory / "state" / "best", st["best_params"]),
        )
    return model, state


# ---------------------------------------------------------------- evaluation

def predict(model: Model, case: Case, use_adapters: bool = True, audit: list | None = None) -> np.ndarray:
    """Eval-mode reconstruction of one case; adapters routed deterministically."""
    image = reconstruct(case.y.data, case.sens, case.mask, model)
    if use_adapters and model.registry is not None:
        sel = select_adapters(model.registry, case.protocol_id, case.center_id, "eval")
        if audit is not None:
            audit.append((case.case_id, *reversed(sel.keys)))
        image = adapt(image, sel, model.registry)
    return image.data


def frame_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Per-frame SSIM and PSNR averaged over the frames of one case."""
    s = [ssim_value(p, g) for p, g in zip(pred, gt)]
    q = [psnr(p, g) for p, g in zip(pred, gt)]
    return float(np.mean(s)), float(np.mean(q))


def validate(model: Model, cases, use_adapters: bool = True) -> tuple[float, float]:
    scores = [frame_metrics(predict(model, c, use_adapters), c.gt_image)
              for c in sorted(cases, key=lambda c: c.case_id)]
    return float(np.mean([s for s, _ in scores])), float(np.mean([p for _, p in scores]))


# ------------------------------------------------------------------ training

def micro_batch(model: Model, case: Case, weights: LossWeights, selection=None,
                trainable: Callable[[str], bool] | None = None, scale: float = 1.0
                ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and parameter gradients for one case.

    Only backbone parameters accepted by ``trainable`` and the adapters named by
    ``selection`` are watched, so nothing else can receive a gradient.
    """
    tape = Tape()
    keys = selection.keys if selection is not None else ()
    bound = model.bind(tape, trainable, keys)
    pred = reconstruct(case.y.data, case.sens, case.mask, bound)
    reg = None
    if selection is not None:
        pred = adapt(pred, selection, bound.registry)
        reg = bound.registry.restricted(keys)
    lb = total_loss(pred, case.gt_image, case.protocol_id, weights, reg)
    loss = lb.loss if scale == 1.0 else ops.mul(lb.loss, scale)
    value = float(loss.data)
    if not math.isfinite(value):
        return value, {}
    return value, tape.backward(loss).by_name()


@dataclass
class _Phase:
    """Everything that differs between main training and fine-tuning."""

    epochs: int
    steps_per_epoch: int
    trainable: Callable[[str], bool] | None
    lr: Callable[[str, int], float]
    clip: float | None
    order: Callable[[np.random.Generator], list]
    case_scale: Callable[[Case], float]


def _apply(model: Model, params: dict) -> Model:
    return model.load_arrays({**model.named_arrays(), **params})


def _write_metrics_row(path: Path | None, row):
    if path is None:
        return
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow(row)


def _truncate_metrics(path: Path, epoch: int):
    # rows written after the last saved state would otherwise be duplicated
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= epoch]))


def _fmt(x: float) -> str:
    return "inf" if x == math.inf else repr(float(x))


def _run(model: Model, phase: _Phase, train_cases: list, val_cases: list, cfg: TrainConfig,
         weights: LossWeights, out_dir: Path | None, state: TrainState,
         rngs: tuple[np.random.Generator, np.random.Generator], log: Callable[[str], None] | None) -> tuple[Model, TrainState]:
    use_adapters = model.registry is not None
    stopper = EarlyStopper(cfg.patience, state.best_val_ssim, state.best_epoch, state.epochs_since_best)
    metrics = out_dir / "metrics.csv" if out_dir is not None else None
    last_good = out_dir / "last" if out_dir is not None else None
    lrs = (math.nan, math.nan)
    while state.epoch < phase.epochs:
        epoch = state.epoch + 1
        acc = GradAccumulator()
        losses = []

        def step():
            nonlocal model, lrs
            grads = acc.mean()
            if phase.clip is not None:
                grads = clip_gradients(grads, phase.clip)
            params, _ = adamw_step(model.named_arrays(), grads, state.adam,
                                   lambda n: phase.lr(n, state.step), cfg.weight_decay)
            lrs = (phase.lr("backbone/", state.step), phase.lr("adapter/", state.step))
            model = _apply(model, {k: params[k] for k in grads})
            state.step += 1
            acc.reset()

        order_rng, select_rng = rngs
        for case in phase.order(order_rng):
            sel = None
            if use_adapters:
                sel = select_adapters(model.registry, case.protocol_id, case.center_id, "train",
                                      select_rng)
            value, grads = micro_batch(model, case, weights, sel, phase.trainable, phase.case_scale(case))
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss on case {case.case_id} in epoch {epoch}; "
                    f"last good checkpoint: {last_good}", last_good)
            losses.append(value)
            acc.add(grads)
            if acc.count == cfg.accumulation_steps:
                step()
        if acc.count:
            step()
        val_ssim, val_psnr = validate(model, val_cases, use_adapters)
        train_loss = float(np.mean(losses))
        state.loss_history.append(train_loss)
        stop = stopper.update(epoch, val_ssim)
        if stopper.best_epoch == epoch:
            state.best_params = {k: v.copy() for k, v in model.named_arrays().items()}
        state.epoch = epoch
        state.best_val_ssim, state.best_epoch = stopper.best, stopper.best_epoch
        state.epochs_since_best = stopper.since_best
        state.rng_state = {"order": order_rng.bit_generator.state,
                           "select": select_rng.bit_generator.state}
        _write_metrics_row(metrics, [epoch, state.step, _fmt(train_loss), _fmt(val_ssim),
                                     _fmt(val_psnr), _fmt(lrs[0]), _fmt(lrs[1])])
        if log:
            log(f"epoch {epoch}: loss {train_loss:.4f} val_ssim {val_ssim:.4f} val_psnr {val_psnr:.2f}")
        if out_dir is not None:
            save_checkpoint(out_dir / "last", model, state)
        if stop:
            break
    best = _apply(model, state.best_params) if state.best_params else model
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", best)
    return best, state


def _check_splits(train_set, val_set):
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation splits must be nonempty")
    shared = {c.patient_id for c in train_set} & {c.patient_id for c in val_set}
    if shared:
        raise ValueError(f"splits share patients: {sorted(shared)}")


def _cases(data) -> list:
    return list(data.cases if isinstance(data, Dataset) else data)


def _streams(seed: int, phase: int):
    return np.random.default_rng([seed, phase, 0]), np.random.default_rng([seed, phase, 1])


@dataclass
class TrainResult:
    model: Model
    state: TrainState
    checkpoint: Path | None


def train(config: TrainConfig, model_config: ModelConfig, train_set, val_set,
          out_dir=None, weights: LossWeights | None = None, resume: bool = False,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """End-to-end training; returns the best-validation model.

    With ``resume`` the run continues from ``out_dir/last``.
    """
    train_cases, val_cases = _cases(train_set), _cases(val_set)
    _check_splits(train_cases, val_cases)
    weights = weights or LossWeights()
    out_dir = Path(out_dir) if out_dir is not None else None
    if model_config.use_adapters and not model_config.centers:
        model_config = dataclasses.replace(model_config,
                                           centers=tuple(sorted({c.center_id for c in train_cases})))
    model_config = dataclasses.replace(model_config, prob_universal=config.prob_universal)
    # separate streams so case order does not depend on how many adapter draws happened
    rngs = _streams(config.seed, 0)
    if resume:
        if out_dir is None:
            raise ValueError("resume needs an output directory")
        model, state = load_checkpoint(out_dir / "last")
        rngs[0].bit_generator.state = state.rng_state["order"]
        rngs[1].bit_generator.state = state.rng_state["select"]
        _truncate_metrics(out_dir / "metrics.csv", state.epoch)
    else:
        model, state = Model.init(model_config, config.seed), TrainState()
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "metrics.csv").unlink(missing_ok=True)
    ordered = sorted(train_cases, key=lambda c: c.case_id)
    steps_per_epoch = math.ceil(len(ordered) / config.accumulation_steps)
    total = config.epochs * steps_per_epoch

    def lr(name, step):
        base = config.lr_adapter if name.startswith("adapter/") else config.lr_backbone
        return lr_schedule(step, total, base, config.eta_min)

    phase = _Phase(config.epochs, steps_per_epoch, None, lr, None,
                   lambda r: [ordered[i] for i in r.permutation(len(ordered))],
                   lambda case: 1.0)
    model, state = _run(model, phase, ordered, val_cases, config, weights, out_dir, state, rngs, log)
    return TrainResult(model, state, out_dir / "checkpoint" if out_dir is not None else None)


# ---------------------------------------------------------------- fine-tuning

def center_weights(baseline_ssim: dict[str, float], wc_min: float = 0.3, wc_max: float = 5.0
                   ) -> dict[str, float]:
    """``w_c = clamp(mean / ssim_c, wc_min, wc_max)``: weaker centers weigh more."""
    if not baseline_ssim:
        raise ValueError("baseline SSIM map is empty")
    mean = float(np.mean([baseline_ssim[k] for k in sorted(baseline_ssim)]))
    out = {}
    for cid in sorted(baseline_ssim):
        s = baseline_ssim[cid]
        out[cid] = wc_max if s <= 0 else min(max(mean / s, wc_min), wc_max)
    return out


def lr_multiplier(w: float, cfg: FinetuneConfig) -> float:
    """Linear map of ``w_c`` from [wc_min, wc_max] onto the adapter multiplier range."""
    lo, hi = cfg.adapter_lr_multipliers
    frac = (w - cfg.wc_min) / (cfg.wc_max - cfg.wc_min)
    return lo + min(max(frac, 0.0), 1.0) * (hi - lo)


def finetune_trainable(model: Model) -> Callable[[str], bool]:
    """Final cascade, every regulariser head and every step size."""
    last = f"backbone/c{len(model.cascades) - 1}/"

    def pred(name: str) -> bool:
        leaf = name.rsplit("/", 1)[-1]
        return name.startswith(last) or leaf in ("head_w", "head_b", "lambda_raw")

    return pred


def progressive_finetune(config: TrainConfig, model: Model, train_set, val_set,
                         per_center_baseline_ssim: dict[str, float], out_dir=None,
                         weights: LossWeights | None = None,
                         log: Callable[[str], None] | None = None) -> TrainResult:
    """Center-weighted second phase on a restricted parameter set with warm restarts."""
    ft = config.finetune
    train_cases, val_cases = _cases(train_set), _cases(val_set)
    _check_splits(train_cases, val_cases)
    known = set(model.registry.center) if model.registry is not None else {c.center_id for c in train_cases}
    unknown = sorted(set(per_center_baseline_ssim) - known)
    if unknown:
        raise KeyError(f"baseline map names unknown centers {unknown}")
    missing = sorted({c.center_id for c in train_cases} - set(per_center_baseline_ssim))
    if missing:
        raise KeyError(f"no baseline SSIM for training centers {missing}")
    weights = weights or LossWeights()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").unlink(missing_ok=True)
    wc = center_weights(per_center_baseline_ssim, ft.wc_min, ft.wc_max)
    ordered = sorted(train_cases, key=lambda c: c.case_id)
    steps_per_epoch = math.ceil(len(ordered) / config.accumulation_steps)
    total = ft.epochs * steps_per_epoch
    neutral = lr_multiplier(1.0, ft)

    def lr(name, step):
        base = lr_schedule(step, total, config.lr_backbone, ft.eta_min_ft, ft.T0, steps_per_epoch)
        if not name.startswith("adapter/"):
            return base
        parts = name.split("/")
        if parts[1] == "center" and parts[2] in wc:
            return lr_multiplier(wc[parts[2]], ft) * base
        return neutral * base

    if ft.weight_sampling:
        p = np.array([wc[c.center_id] for c in ordered])
        p = p / p.sum()

        def order(r):
            return [ordered[i] for i in r.choice(len(ordered), size=len(ordered), p=p)]
    else:
        def order(r):
            return [ordered[i] for i in r.permutation(len(ordered))]

    def scale(case):
        return wc[case.center_id] if ft.weight_losses else 1.0

    phase = _Phase(ft.epochs, steps_per_epoch, finetune_trainable(model), lr,
                   config.clip_max_norm, order, scale)
    model, state = _run(model, phase, ordered, val_cases, config, weights, out_dir, TrainState(),
                        _streams(config.seed, 1), log)
    return TrainResult(model, state, out_dir / "checkpoint" if out_dir is not None else None)
