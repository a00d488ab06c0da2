"""Seed sweeps for the distillation weight, the thrashing term and pattern-aware models.

    python scripts/learning_effects.py lambda --seeds 0-4
    python scripts/learning_effects.py mu
    python scripts/learning_effects.py pattern
"""

import argparse
import statistics

import torch

from uvm_oversub.experiments import eval_predictor, incremental_retention, mixed_pattern_trace, thrash_term_effect
from uvm_oversub.predictor import PredictorConfig
from uvm_oversub.trace import PatternLabel


def seeds(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def lam(args):
    for value in args.values or [0.0, 100.0, 300.0]:
        rows = [incremental_retention(s, value) for s in args.seeds]
        a = statistics.median(r.phase_a for r in rows)
        b = statistics.median(r.phase_b for r in rows)
        print(f"lambda_base={value:g}  phase A {a:.3f}  phase B {b:.3f}  per seed {[round(r.phase_a, 3) for r in rows]}")


def mu(args):
    for value in args.values or [0.0, 0.5]:
        rows = [thrash_term_effect(s, value) for s in args.seeds]
        print(
            f"mu={value:g}  ledger mass {statistics.median(r.ledger_mass for r in rows):.1f}  "
            f"thrash events {statistics.median(r.thrash_events for r in rows)}"
        )


def pattern(args):
    cfg = PredictorConfig(d_model=32, d_ff=64, n_heads=2, epochs=2)
    for scheme in ("single", "pattern_aware"):
        acc = []
        for s in args.seeds:
            trace = mixed_pattern_trace((PatternLabel.MixedReuse, PatternLabel.RandomReuse), segments=8, seed=s, shared_range=True)
            acc.append(eval_predictor(trace, "online", scheme, cfg, group_size=1024, seed=s, label_window=32).overall)
        print(f"{scheme:14s} median top-1 {statistics.median(acc):.3f}  per seed {[round(a, 3) for a in acc]}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("study", choices=["lambda", "mu", "pattern"])
    ap.add_argument("--seeds", type=seeds, default=seeds("0-4"))
    ap.add_argument("--values", type=lambda s: [float(x) for x in s.split(",")])
    args = ap.parse_args()
    torch.set_num_threads(1)
    {"lambda": lam, "mu": mu, "pattern": pattern}[args.study](args)


if __name__ == "__main__":
    main()
