//! Engine and policy behavior checked against the independent reference
//! implementations in `common`.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simsched_core::*;
use std::collections::BTreeSet;

fn random_trace(rng: &mut ChaCha8Rng, jobs: usize, max_nodes: u32) -> Vec<Job> {
    (0..jobs)
        .map(|i| {
            Job::new(
                format!("j{i:02}"),
                rng.random_range(0..60),
                rng.random_range(1..=max_nodes),
                rng.random_range(1..80),
            )
        })
        .collect()
}

fn engine_run(trace: &[Job], total: u32, cfg: &PolicyConfig) -> SimState {
    let mut state = SimState::new(total, 10);
    for job in trace {
        state.inject_arrival(job.clone()).unwrap();
    }
    state.run_to_exhaustion(cfg).unwrap();
    state
}

#[test]
fn ten_random_jobs_match_reference_under_fcfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trace = random_trace(&mut rng, 10, 4);
    let cfg = PolicyConfig::new(PolicyId::Fcfs);
    let state = engine_run(&trace, 4, &cfg);
    assert_eq!(engine_starts(&state), ref_interpret(&trace, 4, &cfg));
}

#[test]
fn open_loop_default_trace_matches_reference_under_fcfs() {
    let trace: Vec<Job> = generate_synthetic(&default_phases(), 5, 4, 32)
        .unwrap()
        .into_iter()
        .map(|t| t.job)
        .collect();
    let cfg = PolicyConfig::new(PolicyId::Fcfs);
    let state = engine_run(&trace, 32, &cfg);
    let expected = ref_interpret(&trace, 32, &cfg);
    assert_eq!(state.completed().len(), 150);
    assert_eq!(engine_starts(&state), expected);
}

#[test]
fn snapshot_equals_original_on_fuzzed_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let instance = fuzz_instance(&mut rng, 10, 6);
        let copy = instance.state.snapshot();
        assert_eq!(copy, instance.state);
    }
}

#[test]
fn schedule_instance_matches_reference_pass_on_fuzzed_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..400 {
        let FuzzInstance { mut state, cfg } = fuzz_instance(&mut rng, 6, 4);
        let clock = state.clock();

        // Reference view of the same state.
        let mut ref_queue: Vec<Job> = state.wait_queue().to_vec();
        let mut ref_running: Vec<RefRunning> = state
            .cluster()
            .allocations()
            .iter()
            .enumerate()
            .map(|(i, (id, alloc))| RefRunning {
                job_id: id.clone(),
                nodes: alloc.nodes,
                end: alloc.predicted_end,
                start_sequence: i as u64,
            })
            .collect();
        let mut seq = ref_running.len() as u64;
        let expected: BTreeSet<JobId> = ref_schedule_pass(
            &mut ref_queue,
            &mut ref_running,
            state.cluster().total_nodes(),
            clock,
            &cfg,
            &mut seq,
        )
        .into_iter()
        .collect();

        let outcome = schedule_instance(&mut state, &cfg).unwrap();
        let started: BTreeSet<JobId> = outcome
            .started
            .iter()
            .map(|(id, _, _)| id.clone())
            .collect();
        assert_eq!(started, expected, "round {round} ({:?})", cfg.id);

        if let Some(reservation) = &outcome.reservation {
            assert!(
                reservation_holds(&state, reservation.nodes, reservation.start_no_later_than),
                "round {round}: reservation violated"
            );
        }
        state.cluster().check_accounting().unwrap();
    }
}

#[test]
fn all_policies_match_reference_on_small_fuzzed_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for round in 0..60 {
        let jobs = rng.random_range(1..=8);
        let trace = random_trace(&mut rng, jobs, 4);
        for policy in PolicyId::ALL {
            let cfg = PolicyConfig::new(policy);
            let state = engine_run(&trace, 4, &cfg);
            assert_eq!(
                engine_starts(&state),
                ref_interpret(&trace, 4, &cfg),
                "round {round} policy {policy}"
            );
        }
    }
}
