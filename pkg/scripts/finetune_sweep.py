"""Learning-rate or backpropagation-scope sweep on one pretrained model.

    python scripts/finetune_sweep.py --sweep lr --config configs/toy.json
    python scripts/finetune_sweep.py --sweep scope --config configs/desk.json --size 50
"""

import argparse
import sys

from fel.config import SCOPES, RunConfig
from fel.pipeline import build_workspace, finetune_sweep, mean_best_epoch, pretrain_arm

SWEEPS = {
    "lr": {f"lr={lr:g}": {"lr": lr} for lr in (1e-3, 1e-4, 1e-5)},
    "scope": {s: {"scope": s} for s in SCOPES},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweep", choices=sorted(SWEEPS), default="lr")
    ap.add_argument("--config", default="configs/toy.json")
    ap.add_argument("--size", type=int, help="finetune examples per fold (default: largest configured size)")
    ap.add_argument("--epochs", type=int, help="override finetune epochs")
    args = ap.parse_args()

    run = RunConfig.load(args.config)
    if args.epochs:
        run.finetune.epochs = args.epochs
    size = args.size or max(run.experiment.sizes)
    ws = build_workspace(run)
    model, _ = pretrain_arm(ws, run, run.experiment.arms[0])
    reports = finetune_sweep(model, ws, run, SWEEPS[args.sweep], size,
                             progress=lambda m: print(m, file=sys.stderr, flush=True))
    print("setting\taccuracy\tstd\tperplexity\tmean_best_epoch")
    for label, rep in reports.items():
        (am, asd), (pm, _) = rep.accuracy, rep.perplexity
        print(f"{label}\t{am:.4f}\t{asd:.4f}\t{pm:.4f}\t{mean_best_epoch(rep):.1f}")


if __name__ == "__main__":
    main()
