import json

import numpy as np
import pytest

from uvm_oversub.experiments import (
    PHASE_A_MOTIF,
    ExperimentConfig,
    TraceTooShortError,
    cell_label,
    eval_predictor,
    hot_cold_trace,
    ledger_probability_mass,
    mixed_pattern_trace,
    motif_pages,
    parse_policy,
    resolve_trace,
    run_grid,
    two_phase_trace,
)
from uvm_oversub.memsim import ConfigError, PolicyPair, Simulator, TimingConfig
from uvm_oversub.predictor import Trainer
from uvm_oversub.predictor.model import TraceFeatures
from uvm_oversub.trace import PatternLabel, capacity_for_oversubscription, write_trace, synthesize_trace


def small_grid(tmp_path, name="out", **kw):
    cfg = ExperimentConfig(
        traces=["synth:RandomReuse:128:1024:1"],
        levels=[1.25, 1.5],
        policies=["tree+lru", "demand+lru", "demand+belady"],
        output_dir=str(tmp_path / name),
        **kw,
    )
    return cfg, run_grid(cfg)


def test_resolve_synthetic_trace():
    t = resolve_trace("synth:Random:64:200:4")
    assert t.name == "Random-p64-a200-s4" and len(t) == 200


def test_resolve_trace_file(tmp_path):
    path = tmp_path / "t.trace"
    write_trace(synthesize_trace("LinearReuse", 32, 100, 0), path)
    assert len(resolve_trace(str(path))) == 100


@pytest.mark.parametrize("spec", ["synth:Random:64:200", "synth:Bogus:64:200:1", "synth:Random:x:200:1", "missing.trace"])
def test_resolve_trace_errors(spec):
    with pytest.raises(ConfigError):
        resolve_trace(spec)


def test_parse_policy():
    assert parse_policy("tree+lru") == ("tree+lru", "neural")
    assert parse_policy("engine+engine:oracle") == ("engine+engine", "oracle")
    with pytest.raises(ConfigError):
        parse_policy("engine+engine:magic")
    assert cell_label("engine+engine:oracle") == "engine+engine-oracle"


def test_grid_writes_one_report_per_cell(tmp_path):
    cfg, res = small_grid(tmp_path)
    assert len(res.reports) == 6 and not res.failures
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert len([f for f in files if f.endswith(".json") and f != "summary.json"]) == 6
    assert "summary.json" in files and "summary.csv" in files
    summary = json.loads(res.summary.read_text())
    cell = summary["cells"]["RandomReuse-p128-a1024-s1@1.25"]
    assert cell["tree+lru"]["normalized_ipc"] == 1.0
    assert cell["demand+belady"]["pages_thrashed"] <= cell["demand+lru"]["pages_thrashed"]


def test_grid_rerun_is_byte_identical(tmp_path):
    small_grid(tmp_path, "a")
    small_grid(tmp_path, "b")
    a = {p.name: p.read_bytes() for p in (tmp_path / "a").iterdir()}
    b = {p.name: p.read_bytes() for p in (tmp_path / "b").iterdir()}
    assert a == b


def test_grid_validates_before_running(tmp_path):
    cfg = ExperimentConfig(traces=["synth:Random:64:200:1"], policies=["belady+tree"], output_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_grid(cfg)
    cfg = ExperimentConfig(traces=["synth:Random:64:200:1"], policies=["tree+lru:oracle"], output_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_grid(cfg)
    cfg = ExperimentConfig(traces=["synth:Random:64:200:1"], levels=[0.5], output_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_grid(cfg)


def test_grid_oracle_engine_cell_records_pattern_decisions(tmp_path):
    cfg = ExperimentConfig(
        traces=["synth:MixedReuse:128:1024:2"], levels=[1.25], policies=["engine+engine:oracle"],
        output_dir=str(tmp_path),
    )
    res = run_grid(cfg)
    doc = json.loads(res.reports[0].read_text())
    assert doc["pattern_decisions"]


def test_motif_pages_and_two_phase():
    assert motif_pages(PHASE_A_MOTIF, 5, 10) == [10, 11, 12, 14, 15]
    t, b0 = two_phase_trace(phase_a=30, phase_b=30, seed=1)
    d = np.diff(t.pages)
    assert set(d[: b0 - 1].tolist()) == {1, 2}
    assert {-3, 5} <= set(d[b0:].tolist())


def test_mixed_pattern_trace_segments():
    t = mixed_pattern_trace(segments=3, segment_accesses=256, seed=0)
    assert len(t) == 256 * 4 + 256 + 256 * 4
    shared = mixed_pattern_trace((PatternLabel.MixedReuse, PatternLabel.RandomReuse), segments=2,
                                 segment_accesses=256, shared_range=True)
    assert max(shared.pages) < 256


def test_hot_cold_trace_thrashes_only_cold_pages():
    t = hot_cold_trace(seed=0)
    cap = capacity_for_oversubscription(t, 1.25)
    sim = Simulator(t, TimingConfig(), cap, PolicyPair.parse("demand+lru"))
    sim.run()
    ledger = sim.ledger.pages()
    assert ledger and min(ledger) >= 16


def test_ledger_probability_mass_bounds(tiny_cfg):
    t = hot_cold_trace(cold=64, kernels=2, seed=0)
    feats = TraceFeatures.from_trace(t, tiny_cfg.window)
    pos = feats.sample_positions()
    tr = Trainer(tiny_cfg)
    tr.train_group(feats, pos, epochs=1)
    everything = set(range(-1000, 1000))
    assert ledger_probability_mass(tr, feats, pos, set()) == 0.0
    assert ledger_probability_mass(tr, feats, pos, everything) == pytest.approx(pos.size, rel=1e-4)


def test_eval_predictor_modes(tiny_cfg):
    t, _ = two_phase_trace(phase_a=300, phase_b=300, seed=0)
    on = eval_predictor(t, "online", "single", tiny_cfg, group_size=200, epochs=1)
    off = eval_predictor(t, "offline", "single", tiny_cfg, group_size=200, epochs=1)
    assert len(on.group_accuracy) == len(off.group_accuracy) == 2
    assert 0.0 <= on.overall <= 1.0 and on.samples == off.samples
    pa = eval_predictor(t, "online", "pattern_aware", tiny_cfg, group_size=200, epochs=1, label_window=32)
    assert pa.samples == on.samples


def test_eval_predictor_rejects_short_traces(tiny_cfg):
    t, _ = two_phase_trace(phase_a=50, phase_b=50)
    with pytest.raises(TraceTooShortError):
        eval_predictor(t, group_size=100, cfg=tiny_cfg)
    with pytest.raises(ValueError):
        eval_predictor(t, mode="sideways", cfg=tiny_cfg)
