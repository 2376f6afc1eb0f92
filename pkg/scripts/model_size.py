"""Model-size sweep: pretrain several (emb_dim, n_layers) shapes and cross-validate each.

    python scripts/model_size.py --config configs/desk.json --shapes 32x1,64x2
"""

import argparse
import sys

from fel.config import RunConfig
from fel.pipeline import model_size_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--shapes", default="32x1,64x2", help="comma separated EMBxLAYERS")
    args = ap.parse_args()

    run = RunConfig.load(args.config)
    shapes = [tuple(int(v) for v in s.split("x")) for s in args.shapes.split(",")]
    grid = model_size_sweep(run, shapes, progress=lambda m: print(m, file=sys.stderr, flush=True))
    sizes = run.experiment.sizes
    print("shape\t" + "\t".join(str(s) for s in sizes))
    for label, by_size in grid.items():
        print(label + "\t" + "\t".join(f"{by_size[s].accuracy[0]:.4f}" for s in sizes))


if __name__ == "__main__":
    main()
