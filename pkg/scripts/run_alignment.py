"""Objective-alignment comparison: aligned vs plain-LM pretraining across finetune sizes.

    python scripts/run_alignment.py --config configs/desk.json --out results/alignment
"""

import argparse
import json
import sys
import time
from pathlib import Path

from scipy.stats import spearmanr

from fel.config import RunConfig
from fel.pipeline import arm_name, run_alignment_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="results/alignment")
    args = ap.parse_args()

    run = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(run.to_json())
    start = time.perf_counter()
    report = run_alignment_experiment(
        run, progress=lambda m: print(f"[{time.perf_counter() - start:6.0f}s] {m}", file=sys.stderr, flush=True))
    (out / "alignment.tsv").write_text(report.to_tsv())
    (out / "alignment.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")

    aligned, base = (arm_name(a) for a in run.experiment.arms[:2])
    sizes = sorted(report.grid[aligned])
    print(f"{'size':>6} {aligned:>18} {base:>18}")
    for s in sizes:
        ma, sa = report.grid[aligned][s].accuracy
        mb, sb = report.grid[base][s].accuracy
        print(f"{s:>6} {ma:>10.4f} ±{sa:.4f} {mb:>10.4f} ±{sb:.4f}")
    rho = spearmanr(sizes, [report.mean_accuracy(aligned, s) for s in sizes]).statistic
    print(f"Spearman(size, accuracy) for {aligned}: {rho:.3f}")
    print(f"total {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
