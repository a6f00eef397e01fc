//! Fixture builders shared by the benchmarks.

use simsched_core::{
    default_phases, generate_synthetic, Event, ExperimentConfig, Job, ScoreConfig, SimState,
    TraceJob, Twin,
};

/// The stock 150-job four-phase trace.
pub fn default_trace(seed: u64) -> Vec<TraceJob> {
    generate_synthetic(&default_phases(), 5, seed, 32).unwrap()
}

/// A twin whose mirror holds every trace job in the wait queue at once:
/// the heaviest what-if fan-out the closed loop can encounter.
pub fn loaded_twin(seed: u64) -> Twin {
    let cfg = ExperimentConfig::default();
    let mut twin = Twin::new(32, 10, cfg.pool.clone(), ScoreConfig::default()).unwrap();
    for (i, entry) in default_trace(seed).into_iter().enumerate() {
        let mut job = entry.job;
        job.submit_time = i as u64;
        twin.ingest_event(&Event::submit(&job)).unwrap();
    }
    twin
}

/// An open-loop simulation state with the whole trace queued as arrivals.
pub fn open_loop_state(seed: u64) -> SimState {
    let mut state = SimState::new(32, 10);
    for entry in default_trace(seed) {
        let job: Job = entry.job;
        state.inject_arrival(job).unwrap();
    }
    state
}
