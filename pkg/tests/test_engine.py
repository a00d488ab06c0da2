import pytest

from uvm_oversub.engine import EngineConfig, OraclePredictor, PolicyEngine, PredictionFrequencyTable
from uvm_oversub.memsim import ConfigError, DeviceMemoryState, PolicyPair, TimingConfig, run_simulation
from uvm_oversub.trace import capacity_for_oversubscription, synthesize_trace, trace_from_pages


def colliding_blocks(table, n, start=0):
    """First ``n`` block ids that share a set with block ``start``."""
    target = table.set_index(start)
    out, b = [], start
    while len(out) < n:
        if table.set_index(b) == target:
            out.append(b)
        b += 1
    return out


def engine_with_state(resident=(), capacity=64, **cfg):
    eng = PolicyEngine(OraclePredictor(), EngineConfig(**cfg))
    eng.state = DeviceMemoryState(capacity, resident=set(resident))
    return eng


# -- frequency table ------------------------------------------------------------------


def test_table_size_matches_design_budget():
    t = PredictionFrequencyTable()
    assert t.entries == 1024
    assert t.size_bits() == 147_456
    assert t.size_bytes() == 18_432


def test_set_index_uses_top_hash_bits():
    t = PredictionFrequencyTable()
    assert t.set_index(0) == 0
    assert t.set_index(1) == (0x9E3779B97F4A7C15 >> 58)
    assert all(0 <= t.set_index(b) < 64 for b in range(500))


def test_counters_saturate():
    t = PredictionFrequencyTable()
    values = [t.record(37) for _ in range(100)]
    assert values[:3] == [1, 2, 3]
    assert max(values) == 63 and values[-1] == 63
    assert t.frequency_of(37) == 63


def test_unknown_block_reads_minus_one():
    t = PredictionFrequencyTable()
    t.record(16)
    assert t.frequency_of(17) == 0  # same block, other page
    assert t.frequency_of(32) == -1


def test_collision_evicts_lowest_sum_then_lowest_way():
    t = PredictionFrequencyTable()
    blocks = colliding_blocks(t, 17)
    for i, b in enumerate(blocks[:16]):
        for _ in range(i + 1):
            t.record(b * 16)
    t.record(blocks[16] * 16)
    assert t.replacements == 1
    assert t.frequency_of(blocks[0] * 16) == -1
    assert t.frequency_of(blocks[16] * 16) == 1
    # new entry now has the lowest sum (1) in way 0
    t.record(blocks[0] * 16)
    assert t.frequency_of(blocks[16] * 16) == -1


def test_collision_tie_goes_to_lowest_way():
    t = PredictionFrequencyTable()
    blocks = colliding_blocks(t, 17, start=5)
    for b in blocks[:16]:
        t.record(b * 16)
    t.record(blocks[16] * 16)
    assert t.frequency_of(blocks[0] * 16) == -1
    assert all(t.frequency_of(b * 16) == 1 for b in blocks[1:])


def test_flush_clears_everything():
    t = PredictionFrequencyTable()
    t.record_many([1, 2, 300, 9999])
    t.flush()
    assert t.occupied() == 0 and t.flushes == 1
    assert set(t.counters()) == {0}
    assert t.frequency_of(1) == -1


def test_table_rejects_odd_set_count():
    with pytest.raises(ValueError):
        PredictionFrequencyTable(sets=48)


# -- engine ------------------------------------------------------------------------------


def test_flush_cadence_every_third_interval():
    eng = engine_with_state()
    for page in range(64 * 10):
        eng.on_insert(page, prefetched=False)
    assert eng.intervals == 10
    assert eng.flush_intervals == [3, 6, 9]
    assert eng.table.flushes == 3


def test_prefetch_inserts_can_be_left_off_the_clock():
    eng = engine_with_state(count_prefetches=False)
    for page in range(100):
        eng.on_insert(page, prefetched=True)
    assert eng.intervals == 0 and eng.chain.fault_counter == 0


def test_select_eviction_prefers_old_then_least_predicted():
    eng = engine_with_state(resident=range(6))
    for p in range(6):
        eng.state.last_access[p] = p
    eng.chain.old = {0, 1, 2}
    eng.chain.middle = {3, 4}
    eng.chain.new = {5}
    eng.record_predictions([0, 0, 1, 16 * 40])
    # page 2 shares block 0's entry with counter 0; pages 0 and 1 were predicted
    assert eng.select_eviction(eng.state) == 2
    assert eng.select_eviction(eng.state, protected={2}) == 1
    assert eng.select_eviction(eng.state, protected={0, 1, 2}) == 3


def test_select_eviction_unpredicted_block_goes_first():
    eng = engine_with_state(resident=[0, 100])
    eng.chain.old = {0, 100}
    eng.record_predictions([0])
    eng.state.last_access.update({0: 5, 100: 9})
    assert eng.table.frequency_of(100) == -1
    assert eng.select_eviction(eng.state) == 100


def test_select_eviction_falls_back_to_lru():
    eng = engine_with_state(resident=[7, 8])
    eng.state.last_access.update({7: 3, 8: 1})
    assert eng.select_eviction(eng.state) == 8
    assert eng.fallback_evictions == 1


def test_select_prefetches_orders_and_budgets():
    eng = engine_with_state(resident=[3])
    eng.record_predictions([5, 5, 9, 9, 9, 3, 1])
    assert eng.select_prefetches() == [9, 5, 1]
    assert eng.select_prefetches(budget=2) == [9, 5]
    assert eng.select_prefetches([1, 5], budget=0) == []


def test_select_prefetches_skips_host_pinned():
    eng = engine_with_state()
    eng.state.pinned_host = frozenset({4})
    eng.record_predictions([4, 6])
    assert eng.select_prefetches() == [6]


def test_warm_up_makes_no_predictions():
    pages = list(range(20))
    eng = PolicyEngine(OraclePredictor(), EngineConfig())

    class FakeSim:
        trace = trace_from_pages(pages)
        ledger = None
        state = DeviceMemoryState(64)

    eng.bind(FakeSim())
    acc = FakeSim.trace.accesses
    counts = [eng.after_access(acc[i], i)[1] for i in range(12)]
    assert counts == [0] * 9 + [1, 1, 1]


def test_oracle_lookahead_predicts_several_pages():
    pages = [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24]
    eng = PolicyEngine(OraclePredictor(), EngineConfig(lookahead=3))

    class FakeSim:
        trace = trace_from_pages(pages)
        ledger = None
        state = DeviceMemoryState(64)

    eng.bind(FakeSim())
    prefetch, n = eng.after_access(FakeSim.trace.accesses[9], 9)
    assert prefetch == [20, 22, 24] and n == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        EngineConfig(interval=0)
    with pytest.raises(ConfigError):
        EngineConfig(prefetch_budget=-1)
    with pytest.raises(ConfigError):
        PolicyEngine(object(), EngineConfig(lookahead=2))


@pytest.mark.parametrize("pattern", ["RandomReuse", "MixedReuse", "LinearReuse"])
def test_oracle_engine_thrashes_no_more_than_tree_lru(pattern):
    t = synthesize_trace(pattern, 256, 2048, seed=1)
    cap = capacity_for_oversubscription(t, 1.25)
    cfg = TimingConfig()
    eng = run_simulation(t, cfg, cap, PolicyPair.parse("engine+engine", predictor=OraclePredictor()))
    base = run_simulation(t, cfg, cap, PolicyPair.parse("tree+lru"))
    assert eng.pages_thrashed <= base.pages_thrashed
    assert eng.predictions > 0


def test_engine_as_evictor_only():
    t = synthesize_trace("RandomReuse", 128, 1024, seed=2)
    cap = capacity_for_oversubscription(t, 1.5)
    m = run_simulation(t, TimingConfig(), cap, PolicyPair.parse("demand+engine", predictor=OraclePredictor()))
    assert m.prefetches_issued == 0
    assert m.predictions > 0
