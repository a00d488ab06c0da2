"""Command-line front end.

    uvm-oversub simulate --trace synth:RandomReuse:512:4096:3 --prefetch tree --evict lru
    uvm-oversub eval-predictor --trace t.csv --mode online --scheme pattern_aware
    uvm-oversub synth-trace --pattern Random --pages 1024 --accesses 100000 --out r.trace
    uvm-oversub footprint --patterns 3
    uvm-oversub report results/

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .engine import EngineConfig, PredictionFrequencyTable
from .experiments import (
    ExperimentConfig,
    SUMMARY_METRICS,
    eval_predictor,
    resolve_trace,
    run_grid,
    summary_csv,
)
from .memsim import ConfigError, TimingConfig
from .pattern import PatternThresholds
from .predictor.footprint import MB, footprint_report, footprint_total
from .predictor.model import PredictorConfig, PredictorModel
from .trace import PatternLabel, TraceError, synthesize_trace, write_trace

log = logging.getLogger("uvm_oversub")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def read_kv(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def _coerce(dc_type, values: dict[str, str], what: str):
    """Build ``dc_type`` from string values, typed by the defaults."""
    defaults = dc_type()
    kwargs = {}
    names = {f.name for f in fields(dc_type)}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown {what} option {key!r}")
        default = getattr(defaults, key)
        if isinstance(default, bool):
            kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
        elif default is None:
            kwargs[key] = None if raw.lower() in ("", "all", "none") else int(raw)
        elif isinstance(default, (int, float)):
            kwargs[key] = type(default)(raw)
        else:
            kwargs[key] = raw
    return kwargs


def load_predictor_config(path: str | None) -> PredictorConfig:
    if not path:
        return PredictorConfig()
    try:
        return PredictorConfig.from_mapping(read_kv(path))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"predictor config {path}: {exc}") from exc


def experiment_from_args(args) -> ExperimentConfig:
    kv = read_kv(args.config) if args.config else {}
    timing_kv = {k[7:]: v for k, v in kv.items() if k.startswith("timing.")}
    engine_kv = {k[7:]: v for k, v in kv.items() if k.startswith("engine.")}
    thresholds = engine_kv.pop("thresholds", None)
    timing = replace(TimingConfig(), **_coerce(TimingConfig, timing_kv, "timing"))
    engine = EngineConfig(**_coerce(EngineConfig, {k: v for k, v in engine_kv.items()}, "engine"))
    if thresholds:
        engine = replace(engine, thresholds=PatternThresholds.parse(thresholds))

    cfg = ExperimentConfig(timing=timing, engine=engine)
    listy = {"traces": str, "levels": float, "policies": str}
    for key, value in kv.items():
        if "." in key:
            continue
        if key in listy:
            setattr(cfg, key, [listy[key](x.strip()) for x in value.split(",") if x.strip()])
        elif key in ("seed", "group_size"):
            setattr(cfg, key, int(value))
        elif key == "pretrain_fraction":
            cfg.pretrain_fraction = float(value)
        elif key in ("baseline", "output_dir"):
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown experiment option {key!r}")

    # command-line flags override the file
    if args.trace:
        cfg.traces = list(args.trace)
    if args.level:
        cfg.levels = list(args.level)
    if args.policy:
        cfg.policies = list(args.policy)
    elif args.prefetch or args.evict:
        pre = {"none": "demand"}.get(args.prefetch or "none", args.prefetch or "none")
        label = f"{pre}+{args.evict or 'lru'}"
        if args.predictor == "oracle":
            label += ":oracle"
        cfg.policies = [label]
    if args.prediction_overhead_us is not None:
        cfg.timing = replace(cfg.timing, prediction_overhead_us=args.prediction_overhead_us)
    eng = {}
    if args.prefetch_budget is not None:
        eng["prefetch_budget"] = None if args.prefetch_budget == "all" else int(args.prefetch_budget)
    if args.flush_period is not None:
        eng["flush_period"] = args.flush_period
    if args.interval is not None:
        eng["interval"] = args.interval
    if args.pattern_thresholds:
        eng["thresholds"] = PatternThresholds.parse(args.pattern_thresholds)
    if eng:
        cfg.engine = replace(cfg.engine, **eng)
    if args.predictor_config:
        cfg.predictor = load_predictor_config(args.predictor_config)
    for key in ("seed", "group_size", "pretrain_fraction", "baseline"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if args.out:
        cfg.output_dir = args.out
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = experiment_from_args(args)
    result = run_grid(cfg)
    sys.stdout.write(summary_csv(result.table))
    for cell, err in sorted(result.failures.items()):
        print(f"FAILED {cell}: {err}", file=sys.stderr)
    print(f"{len(result.reports)} reports + summary in {cfg.output_dir}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def cmd_eval_predictor(args) -> int:
    trace = resolve_trace(args.trace)
    cfg = load_predictor_config(args.predictor_config)
    overrides = {}
    if args.lambda_base is not None:
        overrides["lambda_base"] = args.lambda_base
    if args.mu is not None:
        overrides["mu"] = args.mu
    try:
        cfg = replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = eval_predictor(
        trace, args.mode, args.scheme, cfg, group_size=args.group_size, epochs=args.epochs,
        seed=args.seed or 0, label_window=args.label_window,
    )
    text = json.dumps({"trace": trace.name, **report.to_dict()}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_synth_trace(args) -> int:
    trace = synthesize_trace(PatternLabel.parse(args.pattern), args.pages, args.accesses, args.seed or 0)
    write_trace(trace, args.out)
    print(f"wrote {len(trace)} accesses over {len(set(trace.pages))} pages to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_footprint(args) -> int:
    table = PredictionFrequencyTable()
    doc: dict = {"frequency_table_bytes": table.size_bytes(), "frequency_table_bits": table.size_bits()}
    if args.params_mb is not None or args.acti_mb is not None:
        if args.params_mb is None or args.acti_mb is None:
            raise ConfigError("--params-mb and --acti-mb go together")
        doc["total_mb"] = footprint_total(args.params_mb, args.acti_mb, args.patterns)
    else:
        cfg = load_predictor_config(args.predictor_config)
        model = PredictorModel(cfg, args.classes)
        rep = footprint_report(model, args.patterns, args.batch_size)
        doc.update(
            params_bytes=rep.params_bytes,
            activation_bytes=rep.activation_bytes,
            total_bytes=rep.total_bytes,
            bits=rep.bits,
            patterns=rep.patterns,
            **rep.as_mb(),
        )
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise ConfigError(f"not a directory: {root}")
    table: dict[str, dict[str, dict]] = {}
    for path in sorted(root.glob("*.json")):
        if path.name == "summary.json":
            continue
        doc = json.loads(path.read_text())
        key = f"{doc['trace']}@{doc['oversubscription']:g}"
        table.setdefault(key, {})[doc["policy"]] = {m: doc["metrics"][m] for m in SUMMARY_METRICS}
    for key, rows in table.items():
        base = rows.get(args.baseline)
        for row in rows.values():
            if base and base["ipc_proxy"]:
                row["normalized_ipc"] = row["ipc_proxy"] / base["ipc_proxy"]
    text = summary_csv(table)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uvm-oversub", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a (trace x level x policy) grid")
    s.add_argument("--config", help="key = value experiment file")
    s.add_argument("--trace", action="append", help="trace file or synth:<pattern>:<pages>:<accesses>:<seed>")
    s.add_argument("--level", action="append", type=float, help="oversubscription level, e.g. 1.25")
    s.add_argument("--policy", action="append", help="policy label such as tree+lru or engine+engine:oracle")
    s.add_argument("--prefetch", choices=["none", "tree", "engine"])
    s.add_argument("--evict", choices=["lru", "random", "belady", "chain", "tree", "engine"])
    s.add_argument("--predictor", choices=["neural", "oracle"], default="neural")
    s.add_argument("--prediction-overhead-us", type=float)
    s.add_argument("--prefetch-budget", help="page count or 'all'")
    s.add_argument("--flush-period", type=int)
    s.add_argument("--interval", type=int)
    s.add_argument("--pattern-thresholds", help="<linear>,<random>")
    s.add_argument("--predictor-config")
    s.add_argument("--group-size", type=int)
    s.add_argument("--pretrain-fraction", type=float)
    s.add_argument("--baseline")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval-predictor", help="top-1 accuracy under online/offline training")
    e.add_argument("--trace", required=True)
    e.add_argument("--mode", choices=["online", "offline"], default="online")
    e.add_argument("--scheme", choices=["single", "pattern_aware"], default="single")
    e.add_argument("--group-size", type=int, default=50_000)
    e.add_argument("--epochs", type=int)
    e.add_argument("--label-window", type=int, default=64, help="migrations per classifier window")
    e.add_argument("--lambda-base", type=float)
    e.add_argument("--mu", type=float)
    e.add_argument("--predictor-config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_predictor)

    t = sub.add_parser("synth-trace", help="write a synthetic trace file")
    t.add_argument("--pattern", required=True)
    t.add_argument("--pages", type=int, required=True)
    t.add_argument("--accesses", type=int, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_synth_trace)

    f = sub.add_parser("footprint", help="predictor memory footprint")
    f.add_argument("--patterns", type=int, default=1)
    f.add_argument("--params-mb", type=float)
    f.add_argument("--acti-mb", type=float)
    f.add_argument("--classes", type=int, default=256)
    f.add_argument("--batch-size", type=int)
    f.add_argument("--predictor-config")
    f.set_defaults(func=cmd_footprint)

    r = sub.add_parser("report", help="summarize a directory of simulation reports")
    r.add_argument("dir")
    r.add_argument("--baseline", default="tree+lru")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
