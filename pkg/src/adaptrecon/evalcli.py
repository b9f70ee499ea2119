"""Cross-center evaluation, parameter-efficiency report and the command line."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Model, ModelConfig, conv_count, count_params
from .config import ConfigError, RunConfig, load_config
from .kspace import zero_filled_recon
from .synthgen import (Dataset, DatasetError, generate_dataset, read_dataset, split_by_center,
                       split_by_patient, write_dataset)
from .trainer import (frame_metrics, load_checkpoint, predict, progressive_finetune, train,
                      validate)

MODES = ("adapted", "baseline", "zero_filled")
REPORT_HEADER = ["center", "vendor", "field_T", "n_cases", "ssim", "psnr", "mode"]
REFERENCE_BUDGET = "reference budget: 2.1M adapter parameters, 3.2% of the backbone"


# ----------------------------------------------------------------- evaluation

@dataclass
class CaseResult:
    case_id: str
    center: str
    protocol: str
    ssim: float
    psnr: float


@dataclass
class CenterRow:
    center: str
    vendor: str
    field_T: float
    n_cases: int
    ssim: float
    psnr: float


@dataclass
class CenterReport:
    mode: str
    rows: list[CenterRow]
    cases: list[CaseResult]

    @property
    def n_cases(self) -> int:
        return sum(r.n_cases for r in self.rows)

    @property
    def overall_ssim(self) -> float:
        return sum(r.ssim * r.n_cases for r in self.rows) / self.n_cases

    @property
    def overall_psnr(self) -> float:
        return sum(r.psnr * r.n_cases for r in self.rows) / self.n_cases

    def row(self, center: str) -> CenterRow:
        for r in self.rows:
            if r.center == center:
                return r
        raise KeyError(center)


def _as_model(checkpoint) -> Model:
    if isinstance(checkpoint, Model):
        return checkpoint
    model, _ = load_checkpoint(checkpoint)
    return model


def evaluate(checkpoint, dataset: Dataset, mode: str = "adapted", audit: list | None = None
             ) -> CenterReport:
    """Per-case SSIM/PSNR (frame-averaged) grouped by (center, vendor, field strength).

    ``adapted`` routes through eval-mode adapter selection, falling back to the
    universal adapter for centers absent from the checkpoint; ``audit`` collects
    one ``(case_id, protocol_key, center_key)`` tuple per case.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    model = None if mode == "zero_filled" else _as_model(checkpoint)
    if mode == "adapted" and model.registry is None:
        raise ValueError("adapted mode needs a checkpoint with adapters")
    results = []
    for case in sorted(dataset.cases, key=lambda c: c.case_id):
        if model is not None and case.protocol_id not in model.config.protocols:
            raise KeyError(f"case {case.case_id}: protocol {case.protocol_id!r} unknown to checkpoint")
        if mode == "zero_filled":
            pred = zero_filled_recon(case.y.data)
        else:
            pred = predict(model, case, use_adapters=(mode == "adapted"), audit=audit)
        s, p = frame_metrics(pred, case.gt_image)
        results.append(CaseResult(case.case_id, case.center_id, case.protocol_id, s, p))
    groups = defaultdict(list)
    for r in results:
        groups[r.center].append(r)
    rows = []
    for cid in sorted(groups):
        prof = dataset.centers[cid]
        g = groups[cid]
        rows.append(CenterRow(cid, prof.vendor_tag, prof.field_strength, len(g),
                              float(np.mean([r.ssim for r in g])), float(np.mean([r.psnr for r in g]))))
    return CenterReport(mode, rows, results)


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def report_csv(report: CenterReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in report.rows:
        w.writerow([r.center, r.vendor, r.field_T, r.n_cases, _num(r.ssim), _num(r.psnr), report.mode])
    w.writerow(["overall", "all", "all", report.n_cases, _num(report.overall_ssim),
                _num(report.overall_psnr), report.mode])
    return buf.getvalue()


def cases_csv(report: CenterReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "center", "protocol", "ssim", "psnr", "mode"])
    for c in report.cases:
        w.writerow([c.case_id, c.center, c.protocol, repr(c.ssim), _num(c.psnr), report.mode])
    return buf.getvalue()


@dataclass
class ComparisonRow:
    center: str
    vendor: str
    field_T: float
    ssim_baseline: float
    psnr_baseline: float
    ssim_adapted: float
    psnr_adapted: float

    @property
    def delta_pct_ssim(self) -> float:
        return 100.0 * (self.ssim_adapted - self.ssim_baseline) / self.ssim_baseline

    @property
    def delta_pct_psnr(self) -> float:
        return 100.0 * (self.psnr_adapted - self.psnr_baseline) / self.psnr_baseline


def compare_reports(baseline: CenterReport, adapted: CenterReport) -> list[ComparisonRow]:
    out = []
    for b in baseline.rows:
        a = adapted.row(b.center)
        out.append(ComparisonRow(b.center, b.vendor, b.field_T, b.ssim, b.psnr, a.ssim, a.psnr))
    return out


def comparison_table(rows: list[ComparisonRow]) -> str:
    lines = [f"{'center':8} {'vendor':8} {'B0':>4} {'SSIM base':>10} {'SSIM adapt':>10} {'dSSIM%':>7} "
             f"{'PSNR base':>10} {'PSNR adapt':>10} {'dPSNR%':>7}"]
    for r in rows:
        lines.append(f"{r.center:8} {r.vendor:8} {r.field_T:>4} {r.ssim_baseline:10.4f} {r.ssim_adapted:10.4f} "
                     f"{r.delta_pct_ssim:7.2f} {r.psnr_baseline:10.2f} {r.psnr_adapted:10.2f} "
                     f"{r.delta_pct_psnr:7.2f}")
    return "\n".join(lines)


# ------------------------------------------------------- parameter efficiency

def shape_only_counts(cfg: ModelConfig, n_adapters: int | None = None) -> dict:
    """Parameter counts from shapes alone, without allocating any weights."""
    w, k, a = cfg.width, cfg.kernel, cfg.adjacent
    per_cascade = (conv_count(w, 2 * a, k) + 2 * conv_count(w, w, k) + conv_count(2, w, k)
                   + conv_count(w, 2 * w, k) + conv_count(w, w, 1) + 2)
    c, ak = cfg.adapter_channels, cfg.adapter_kernel
    per_adapter = (conv_count(c, 1, 1) + conv_count(c // 4, c, ak) + conv_count(c // 16, c // 4, ak)
                   + conv_count(1, c // 16, ak) + 1)
    if n_adapters is None:
        n_adapters = len(cfg.protocols) + len(cfg.centers) + 1 if cfg.use_adapters else 0
    backbone = cfg.cascades * per_cascade
    adapters = n_adapters * per_adapter
    return {"backbone": backbone, "adapters": adapters, "per_adapter": per_adapter,
            "n_adapters": n_adapters, "adapter_fraction": adapters / backbone}


def full_scale_config() -> ModelConfig:
    """Full-size configuration used only for shape-level parameter counting."""
    return ModelConfig(cascades=12, width=384, kernel=3, adjacent=5, adapter_channels=256,
                       adapter_kernel=3, centers=tuple(f"C{i:03d}" for i in range(1, 6)))


@dataclass
class EfficiencyReport:
    text: str
    csv: str
    fraction: float
    ok: bool


def report_param_efficiency(checkpoint, ceiling: float = 0.05, include_reference: bool = True
                            ) -> EfficiencyReport:
    model = _as_model(checkpoint)
    counts = count_params(model)
    frac = counts["adapter_fraction"]
    ok = frac <= ceiling
    lines = [f"backbone parameters: {counts['backbone']}"]
    for key, n in counts["per_adapter"].items():
        lines.append(f"  adapter {key}: {n}")
    adapters = counts["total"] - counts["backbone"]
    lines += [f"adapter parameters: {adapters} across {len(counts['per_adapter'])} adapters",
              f"adapter fraction: {frac:.4%} (ceiling {ceiling:.2%}) -> {'OK' if ok else 'OVER BUDGET'}"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "backbone", "adapters", "adapter_fraction"])
    w.writerow(["checkpoint", counts["backbone"], adapters, f"{frac:.6f}"])
    if include_reference:
        big = shape_only_counts(full_scale_config())
        lines += ["", f"full-size shape-only configuration: backbone {big['backbone']}, "
                      f"adapters {big['adapters']} ({big['adapter_fraction']:.2%})",
                  REFERENCE_BUDGET]
        w.writerow(["full_size_shape_only", big["backbone"], big["adapters"],
                    f"{big['adapter_fraction']:.6f}"])
    return EfficiencyReport("\n".join(lines), buf.getvalue(), frac, ok)


# ------------------------------------------------------------------ splitting

def experiment_splits(dataset: Dataset, cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(train, validation, held-out center) with patient-disjoint train/validation."""
    rest, held = split_by_center(dataset, cfg.data.holdout_frac)
    train_set, val_set = split_by_patient(rest, cfg.data.val_patients_per_center, cfg.data.seed)
    return train_set, val_set, held


def dataset_from_config(cfg: RunConfig, seed: int | None = None) -> Dataset:
    return generate_dataset(cfg.centers, cfg.data.patients_per_center, cfg.protocols,
                            cfg.data.protocols_per_patient,
                            seed=cfg.data.seed if seed is None else seed)


def run_toy_experiment(cfg: RunConfig, out_dir, log=None) -> dict:
    """Train a baseline and an adapter model, then score the held-out center three ways."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    dataset = dataset_from_config(cfg)
    train_set, val_set, held = experiment_splits(dataset, cfg)
    summary = {"held_out_center": sorted({c.center_id for c in held})[0],
               "n_train": len(train_set), "n_val": len(val_set), "n_held_out": len(held)}
    models = {}
    for name, use in (("baseline", False), ("adapted", True)):
        mcfg = dataclasses.replace(cfg.model, use_adapters=use, centers=())
        res = train(cfg.trainer, mcfg, train_set, val_set, out_dir / name, cfg.loss,
                    log=(lambda s, n=name: log(f"[{n}] {s}")) if log else None)
        models[name] = res.model
        summary[f"{name}_best_epoch"] = res.state.best_epoch
        summary[f"{name}_epochs_run"] = res.state.epoch
    audit = []
    reports = {
        "zero_filled": evaluate(None, held, "zero_filled"),
        "baseline": evaluate(models["baseline"], held, "baseline"),
        "adapted": evaluate(models["adapted"], held, "adapted", audit),
    }
    for mode, rep in reports.items():
        (out_dir / f"heldout_{mode}.csv").write_text(report_csv(rep))
        summary[f"heldout_ssim_{mode}"] = rep.overall_ssim
        summary[f"heldout_psnr_{mode}"] = rep.overall_psnr
    (out_dir / "routing_audit.log").write_text("".join(f"{a},{b},{c}\n" for a, b, c in audit))
    summary["routing_center_keys"] = sorted({c for _, _, c in audit})
    summary["adapter_fraction"] = count_params(models["adapted"])["adapter_fraction"]
    summary["runtime_s"] = time.perf_counter() - t0
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# ----------------------------------------------------------------- recon png

def _to_u8(panel: np.ndarray) -> np.ndarray:
    peak = panel.max()
    scaled = panel / peak if peak > 0 else panel
    return np.clip(np.round(255.0 * scaled), 0, 255).astype(np.uint8)


def recon_panels(model: Model, case) -> np.ndarray:
    """Rows: acquired k-space, k-space of the reconstruction, reconstructed image; one column per frame."""
    image = predict(model, case, use_adapters=model.registry is not None)
    acquired = np.log1p(np.sqrt((np.abs(case.y.data) ** 2).sum(axis=1)))
    recovered = np.log1p(np.abs(np.fft.fft2(image, norm="ortho")))
    rows = [np.fft.fftshift(acquired, axes=(-2, -1)), np.fft.fftshift(recovered, axes=(-2, -1)), image]
    return np.concatenate([np.concatenate([_to_u8(f) for f in r], axis=1) for r in rows], axis=0)


def write_png(path, pixels: np.ndarray):
    from PIL import Image

    Image.fromarray(pixels, mode="L").save(path, format="PNG")


# ------------------------------------------------------------------------ cli

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n{self.format_help()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptrecon", description="Adapter-augmented unrolled MRI reconstruction")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic multi-center dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train on the non-held-out centers")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--baseline", action="store_true", help="train without adapters")
    t.add_argument("--resume", action="store_true")

    f = sub.add_parser("finetune", help="center-weighted progressive fine-tuning")
    f.add_argument("--config", required=True)
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="per-center SSIM/PSNR table")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=MODES, default="adapted")
    e.add_argument("--out-csv", required=True)
    e.add_argument("--centers", help="comma-separated center ids to keep")
    e.add_argument("--cases-csv")
    e.add_argument("--audit-log")

    r = sub.add_parser("recon", help="write a k-space/image panel PNG for one case")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--case", required=True)
    r.add_argument("--out-png", required=True)

    c = sub.add_parser("grad-check", help="finite-difference check of every op")
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--pipeline-tol", type=float, default=1e-4)
    c.add_argument("--trials", type=int, default=10)
    c.add_argument("--skip-pipelines", action="store_true")

    rep = sub.add_parser("report", help="parameter-efficiency report")
    rep.add_argument("--checkpoint", required=True)
    rep.add_argument("--ceiling", type=float, default=0.05)
    rep.add_argument("--out-csv")
    return p


def _filter_centers(ds: Dataset, centers: str | None) -> Dataset:
    if not centers:
        return ds
    keep = set(centers.split(","))
    return ds.subset(c for c in ds.cases if c.center_id in keep)


def _cmd_gen_data(a) -> int:
    cfg = load_config(a.config)
    ds = dataset_from_config(cfg, a.seed)
    write_dataset(ds, a.out)
    print(f"wrote {len(ds)} cases to {a.out}")
    return 0


def _cmd_train(a) -> int:
    cfg = load_config(a.config)
    train_set, val_set, held = experiment_splits(read_dataset(a.data), cfg)
    mcfg = dataclasses.replace(cfg.model, use_adapters=cfg.model.use_adapters and not a.baseline)
    print(f"train {len(train_set)} cases, validation {len(val_set)}, held out {len(held)} "
          f"({','.join(sorted({c.center_id for c in held}))})")
    res = train(cfg.trainer, mcfg, train_set, val_set, a.out, cfg.loss, resume=a.resume, log=print)
    print(f"best epoch {res.state.best_epoch} (val SSIM {res.state.best_val_ssim:.4f}); "
          f"checkpoint {res.checkpoint}")
    return 0


def _cmd_finetune(a) -> int:
    cfg = load_config(a.config)
    train_set, val_set, _ = experiment_splits(read_dataset(a.data), cfg)
    model = _as_model(a.checkpoint)
    rep = evaluate(model, train_set, "adapted" if model.registry is not None else "baseline")
    baseline = {r.center: r.ssim for r in rep.rows}
    res = progressive_finetune(cfg.trainer, model, train_set, val_set, baseline, a.out, cfg.loss, log=print)
    print(f"fine-tuned checkpoint {res.checkpoint} (val SSIM {res.state.best_val_ssim:.4f})")
    return 0


def _cmd_eval(a) -> int:
    if a.mode != "zero_filled" and not a.checkpoint:
        raise ConfigError(f"--checkpoint is required for mode {a.mode}")
    ds = _filter_centers(read_dataset(a.data), a.centers)
    if not ds.cases:
        raise ConfigError("no cases left after center filtering")
    audit = [] if a.mode == "adapted" else None
    rep = evaluate(a.checkpoint, ds, a.mode, audit)
    Path(a.out_csv).write_text(report_csv(rep))
    if a.cases_csv:
        Path(a.cases_csv).write_text(cases_csv(rep))
    if a.audit_log and audit is not None:
        Path(a.audit_log).write_text("".join(f"{x},{y},{z}\n" for x, y, z in audit))
    sys.stdout.write(report_csv(rep))
    return 0


def _cmd_recon(a) -> int:
    ds = read_dataset(a.data)
    matches = [c for c in ds.cases if c.case_id == a.case]
    if not matches:
        raise ConfigError(f"case {a.case!r} not found in {a.data}")
    write_png(a.out_png, recon_panels(_as_model(a.checkpoint), matches[0]))
    print(f"wrote {a.out_png}")
    return 0


def _cmd_grad_check(a) -> int:
    from .diffmath.registry import check_registered_ops

    reports = check_registered_ops(a.tol, a.trials)
    if not a.skip_pipelines:
        from .pipecheck import check_pipelines

        reports += check_pipelines(a.pipeline_tol)
    for r in reports:
        print(r)
    failed = [r.op for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed")
    return 1 if failed else 0


def _cmd_report(a) -> int:
    rep = report_param_efficiency(a.checkpoint, a.ceiling)
    print(rep.text)
    if a.out_csv:
        Path(a.out_csv).write_text(rep.csv)
    return 0 if rep.ok else 1


COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train, "finetune": _cmd_finetune,
            "eval": _cmd_eval, "recon": _cmd_recon, "grad-check": _cmd_grad_check,
            "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if a.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return COMMANDS[a.command](a)
    except (ConfigError, DatasetError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cli(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
