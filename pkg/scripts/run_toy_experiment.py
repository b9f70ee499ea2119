"""Train a baseline and an adapter model on four synthetic centers and score the fifth.

    python scripts/run_toy_experiment.py --out runs/toy
"""
import argparse
import json
import sys
import time
from pathlib import Path

from adaptrecon.config import load_config
from adaptrecon.evalcli import run_toy_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "toy.toml"))
    p.add_argument("--out", default="runs/toy")
    a = p.parse_args()
    t0 = time.perf_counter()
    summary = run_toy_experiment(load_config(a.config), a.out,
                                 log=lambda s: print(f"[{time.perf_counter() - t0:7.1f}s] {s}", flush=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    zf = summary["heldout_ssim_zero_filled"]
    base, adapted = summary["heldout_ssim_baseline"], summary["heldout_ssim_adapted"]
    checks = {
        "both beat zero-filled by >= 0.05": min(base, adapted) - zf >= 0.05,
        "adapted >= baseline on held-out center": adapted >= base,
        "adapter fraction <= 5%": summary["adapter_fraction"] <= 0.05,
    }
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
