"""GPU unified-memory oversubscription: trace-driven simulation, rule-based
policies, and a learned prefetch/eviction engine."""

from .engine import EngineConfig, OraclePredictor, PolicyEngine, PredictionFrequencyTable
from .memsim import (
    ConfigError,
    DeviceMemoryState,
    PolicyPair,
    SimMetrics,
    Simulator,
    ThrashingLedger,
    TimingConfig,
    run_simulation,
    thrash_count,
)
from .pattern import ModelTable, PatternThresholds, PatternTracker, classify_window, model_for
from .trace import (
    MemoryAccess,
    PageGeometry,
    PatternLabel,
    Trace,
    capacity_for_oversubscription,
    load_trace,
    page_delta_stream,
    synthesize_trace,
    working_set_size,
    write_trace,
)

__version__ = "0.1.0"
