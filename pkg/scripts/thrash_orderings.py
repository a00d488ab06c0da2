"""Pages thrashed per policy at 125% oversubscription, one line per trace."""

import argparse
from dataclasses import replace

import torch

from uvm_oversub.engine import OraclePredictor
from uvm_oversub.memsim import PolicyPair, TimingConfig, run_simulation
from uvm_oversub.predictor import PredictorConfig
from uvm_oversub.predictor.online import NeuralPredictor
from uvm_oversub.trace import capacity_for_oversubscription, synthesize_trace

CFG = PredictorConfig(d_model=32, d_ff=64, epochs=6)


def row(pattern: str, seed: int, level: float) -> dict[str, int]:
    trace = synthesize_trace(pattern, 512, 4096, seed)
    cap = capacity_for_oversubscription(trace, level)
    timing = TimingConfig()
    out = {
        p: run_simulation(trace, timing, cap, PolicyPair.parse(p)).pages_thrashed
        for p in ("demand+belady", "demand+chain", "tree+chain", "tree+lru")
    }
    out["oracle"] = run_simulation(trace, timing, cap, PolicyPair.parse("engine+engine", predictor=OraclePredictor())).pages_thrashed
    pred = NeuralPredictor(replace(CFG, seed=seed), group_size=1024)
    pred.pretrain(trace, fraction=0.5, seed=seed)
    out["trained"] = run_simulation(trace, timing, cap, PolicyPair.parse("engine+engine", predictor=pred)).pages_thrashed
    return out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="3,4,5")
    ap.add_argument("--level", type=float, default=1.25)
    args = ap.parse_args()
    torch.set_num_threads(1)
    for seed in map(int, args.seeds.split(",")):
        for pattern in ("LinearReuse", "RandomReuse", "MixedReuse"):
            r = row(pattern, seed, args.level)
            ordered = r["demand+belady"] <= r["oracle"] <= r["trained"] <= r["tree+lru"]
            print(f"{pattern:12s} s{seed}  {r}  ordered={ordered and r['tree+chain'] > r['demand+chain']}", flush=True)


if __name__ == "__main__":
    main()
