"""Policy comparison grid over the reuse workloads at two oversubscription levels.

    python scripts/run_grid.py --out results/grid --seed 3
"""

import argparse
import logging

import torch

from uvm_oversub.experiments import ExperimentConfig, run_grid
from uvm_oversub.predictor import PredictorConfig

POLICIES = [
    "demand+lru", "demand+random", "demand+belady", "demand+chain",
    "tree+lru", "tree+chain", "tree+tree",
    "engine+engine:oracle", "engine+engine",
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/grid")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--pages", type=int, default=512)
    ap.add_argument("--accesses", type=int, default=4096)
    args = ap.parse_args()
    torch.set_num_threads(1)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    traces = [f"synth:{p}:{args.pages}:{args.accesses}:{args.seed}" for p in ("LinearReuse", "RandomReuse", "MixedReuse")]
    cfg = ExperimentConfig(
        traces=traces,
        levels=[1.25, 1.5],
        policies=POLICIES,
        predictor=PredictorConfig(d_model=32, d_ff=64, epochs=6),
        group_size=1024,
        pretrain_fraction=0.5,
        seed=args.seed,
        output_dir=args.out,
    )
    result = run_grid(cfg)
    for key, rows in sorted(result.table.items()):
        print(key)
        for policy, row in sorted(rows.items(), key=lambda kv: kv[1]["pages_thrashed"]):
            print(f"  {policy:24s} thrashed={row['pages_thrashed']:6d}  norm_ipc={row.get('normalized_ipc', float('nan')):.3f}")
    print(f"summary: {result.summary}")


if __name__ == "__main__":
    main()
