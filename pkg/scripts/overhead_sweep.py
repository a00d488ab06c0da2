"""ipc_proxy of the policy engine as the per-prediction latency grows."""

import argparse

from uvm_oversub.engine import OraclePredictor
from uvm_oversub.memsim import PolicyPair, TimingConfig, run_simulation
from uvm_oversub.trace import capacity_for_oversubscription, synthesize_trace


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--pattern", default="RandomReuse")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--level", type=float, default=1.25)
    ap.add_argument("--overheads", default="1,10,20,50,100", help="microseconds, comma separated")
    args = ap.parse_args()
    trace = synthesize_trace(args.pattern, 512, 4096, args.seed)
    cap = capacity_for_oversubscription(trace, args.level)
    base = run_simulation(trace, TimingConfig(), cap, PolicyPair.parse("tree+lru")).ipc_proxy
    print(f"tree+lru ipc_proxy {base:.3e}")
    for us in (float(x) for x in args.overheads.split(",")):
        pair = PolicyPair.parse("engine+engine", predictor=OraclePredictor())
        m = run_simulation(trace, TimingConfig(prediction_overhead_us=us), cap, pair)
        print(f"{us:6g}us  ipc_proxy {m.ipc_proxy:.3e}  vs baseline {m.ipc_proxy / base:.2f}x")


if __name__ == "__main__":
    main()
