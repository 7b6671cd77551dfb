//! Fixtures for the benchmarks under `benches/`.

use thermopt_core::config::RunConfig;
use thermopt_core::engine::Engine;
use thermopt_core::{ConfiguredPolicy, DataCentreState, ModelSet, PolicyConfig};

/// The default 200-host, 180-VM room.
pub fn desk_engine() -> Engine {
    let cfg = RunConfig::default();
    Engine::new(&cfg.scenario(), &cfg.workloads().expect("default workload")).expect("default room")
}

/// Room state after `intervals` steps of the integrated policy.
pub fn desk_state(intervals: usize) -> (DataCentreState, ModelSet) {
    let mut engine = desk_engine();
    let policy = ConfiguredPolicy::new("integrated", PolicyConfig::integrated());
    for _ in 0..intervals {
        engine.step(&policy).expect("step");
    }
    (engine.state, RunConfig::default().model_set())
}
