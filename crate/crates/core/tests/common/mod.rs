//! Test-only reference implementations, independent of the engine under
//! test: a per-second time-scan interpreter for whole schedules, a single
//! scheduling pass derived directly from the EASY definition, and a
//! brute-force reservation-safety check. Fit times here come from scanning
//! the free-node profile second by second rather than walking sorted
//! release times.

// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use simsched_core::{Job, JobId, PolicyConfig, PolicyId, Seconds, SimState};

/// A job the reference interpreter is currently running.
#[derive(Debug, Clone)]
pub struct RefRunning {
    pub job_id: JobId,
    pub nodes: u32,
    pub end: Seconds,
    /// Order the job was started in; completion ties resolve by it.
    pub start_sequence: u64,
}

fn ref_wfp_utility(job: &Job, clock: Seconds, exponent: f64) -> f64 {
    let wait = clock.saturating_sub(job.submit_time) as f64;
    job.requested_nodes as f64 * (wait / job.requested_walltime as f64).powf(exponent)
}

/// Service order per policy, written out from the definitions.
pub fn ref_order(queue: &[Job], clock: Seconds, cfg: &PolicyConfig) -> Vec<Job> {
    let mut ordered = queue.to_vec();
    match cfg.id {
        PolicyId::Fcfs => {
            ordered.sort_by(|a, b| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)))
        }
        PolicyId::Sjf => ordered.sort_by(|a, b| {
            (a.requested_walltime, a.submit_time, &a.job_id).cmp(&(
                b.requested_walltime,
                b.submit_time,
                &b.job_id,
            ))
        }),
        PolicyId::Wfp => ordered.sort_by(|a, b| {
            ref_wfp_utility(b, clock, cfg.wfp_exponent)
                .total_cmp(&ref_wfp_utility(a, clock, cfg.wfp_exponent))
                .then_with(|| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)))
        }),
    }
    ordered
}

/// Free nodes at time `at`, assuming running jobs release at their ends.
fn free_at(total: u32, running: &[RefRunning], at: Seconds) -> u32 {
    let used: u32 = running.iter().filter(|r| r.end > at).map(|r| r.nodes).sum();
    total - used
}

/// Earliest time >= `clock` at which `need` nodes are free, by scanning the
/// profile one second at a time.
pub fn ref_earliest_fit(total: u32, running: &[RefRunning], need: u32, clock: Seconds) -> Seconds {
    let horizon = running.iter().map(|r| r.end).max().unwrap_or(clock);
    let mut t = clock;
    loop {
        if free_at(total, running, t) >= need {
            return t;
        }
        t += 1;
        assert!(t <= horizon + 1, "no fit found for {need} of {total} nodes");
    }
}

/// One scheduling pass from the EASY definition: start the fitting prefix,
/// reserve the earliest brute-force fit time for the first blocked job,
/// then start any later job that fits the idle nodes and either ends by the
/// reservation or fits beside it.
///
/// "Fits now" uses the nodes actually idle (a job predicted to end at this
/// very instant still occupies its nodes until its end is observed), while
/// reservation arithmetic treats predicted ends as releases at their
/// timestamp.
pub fn ref_schedule_pass(
    queue: &mut Vec<Job>,
    running: &mut Vec<RefRunning>,
    total: u32,
    clock: Seconds,
    cfg: &PolicyConfig,
    start_sequence: &mut u64,
) -> Vec<JobId> {
    let mut started = Vec::new();
    let mut free_now: u32 = total - running.iter().map(|r| r.nodes).sum::<u32>();
    let mut start =
        |job: &Job, running: &mut Vec<RefRunning>, free_now: &mut u32, started: &mut Vec<JobId>| {
            running.push(RefRunning {
                job_id: job.job_id.clone(),
                nodes: job.requested_nodes,
                end: clock + job.requested_walltime,
                start_sequence: *start_sequence,
            });
            *start_sequence += 1;
            *free_now -= job.requested_nodes;
            started.push(job.job_id.clone());
        };

    let ordered = ref_order(queue, clock, cfg);
    let mut blocked: Option<Job> = None;
    let mut scan = Vec::new();
    for job in ordered {
        if blocked.is_none() {
            if job.requested_nodes <= free_now {
                start(&job, running, &mut free_now, &mut started);
            } else {
                blocked = Some(job);
            }
        } else {
            scan.push(job);
        }
    }

    if let Some(head) = blocked {
        if cfg.backfill_enabled {
            let reserve_at = ref_earliest_fit(total, running, head.requested_nodes, clock);
            let mut shadow_free = free_at(total, running, reserve_at) - head.requested_nodes;
            for job in scan {
                if job.requested_nodes > free_now {
                    continue;
                }
                let ends_by_reservation = clock + job.requested_walltime <= reserve_at;
                if ends_by_reservation || job.requested_nodes <= shadow_free {
                    start(&job, running, &mut free_now, &mut started);
                    if !ends_by_reservation {
                        shadow_free -= job.requested_nodes;
                    }
                }
            }
        }
    }

    queue.retain(|j| !started.contains(&j.job_id));
    started
}

/// Replay a whole trace (arrival times, walltime-long runs) under one
/// policy and return each job's start time. Time advances to the next
/// arrival or completion; one scheduling pass follows each event, with
/// completions at an instant processed before arrivals, both in start/
/// injection order.
pub fn ref_interpret(trace: &[Job], total: u32, cfg: &PolicyConfig) -> BTreeMap<JobId, Seconds> {
    let mut pending: Vec<Job> = trace.to_vec();
    pending.sort_by(|a, b| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)));
    let mut queue: Vec<Job> = Vec::new();
    let mut running: Vec<RefRunning> = Vec::new();
    let mut starts: BTreeMap<JobId, Seconds> = BTreeMap::new();
    let mut start_sequence: u64 = 0;
    let mut arrival_cursor = 0usize;

    loop {
        let next_arrival = pending.get(arrival_cursor).map(|j| j.submit_time);
        let next_end = running.iter().map(|r| r.end).min();
        let now = match (next_arrival, next_end) {
            (None, None) => break,
            (Some(a), None) => a,
            (None, Some(e)) => e,
            (Some(a), Some(e)) => a.min(e),
        };

        // Completions first, one pass each, in start order.
        let mut ending: Vec<RefRunning> =
            running.iter().filter(|r| r.end == now).cloned().collect();
        ending.sort_by_key(|r| r.start_sequence);
        for done in ending {
            running.retain(|r| r.job_id != done.job_id);
            for id in ref_schedule_pass(
                &mut queue,
                &mut running,
                total,
                now,
                cfg,
                &mut start_sequence,
            ) {
                starts.insert(id, now);
            }
        }
        // Then arrivals at this instant, one pass each, in trace order.
        while arrival_cursor < pending.len() && pending[arrival_cursor].submit_time == now {
            queue.push(pending[arrival_cursor].clone());
            arrival_cursor += 1;
            for id in ref_schedule_pass(
                &mut queue,
                &mut running,
                total,
                now,
                cfg,
                &mut start_sequence,
            ) {
                starts.insert(id, now);
            }
        }
    }
    assert!(queue.is_empty(), "reference interpreter stalled");
    starts
}

/// Extract start times from a drained engine state.
pub fn engine_starts(state: &SimState) -> BTreeMap<JobId, Seconds> {
    state
        .completed()
        .iter()
        .map(|(job, _)| (job.job_id.clone(), job.start_time.expect("completed")))
        .collect()
}

/// A random scheduling-instance state: some running allocations, some
/// waiting jobs, clock somewhere past the submits.
pub struct FuzzInstance {
    pub state: SimState,
    pub cfg: PolicyConfig,
}

pub fn fuzz_instance(rng: &mut ChaCha8Rng, max_jobs: usize, total_nodes: u32) -> FuzzInstance {
    let clock: Seconds = rng.random_range(0..100);
    let mut state = SimState::new(total_nodes, 10);
    state.advance_clock_to(clock).unwrap();

    let n_jobs = rng.random_range(1..=max_jobs);
    let n_running = rng.random_range(0..=n_jobs.min(total_nodes as usize));
    let mut free = total_nodes;
    for i in 0..n_running {
        if free == 0 {
            break;
        }
        let nodes = rng.random_range(1..=free.min(total_nodes / 2 + 1));
        let submit = rng.random_range(0..=clock);
        let start = rng.random_range(submit..=clock);
        let walltime = rng.random_range(1..200);
        let job = Job::new(format!("r{i:02}"), submit, nodes, walltime);
        state.add_waiting(job).unwrap();
        state
            .record_external_start(&format!("r{i:02}"), start, start + walltime)
            .unwrap();
        free -= nodes;
    }
    for i in 0..(n_jobs - n_running) {
        let nodes = rng.random_range(1..=total_nodes);
        let submit = rng.random_range(0..=clock);
        let walltime = rng.random_range(1..200);
        state
            .add_waiting(Job::new(format!("w{i:02}"), submit, nodes, walltime))
            .unwrap();
    }

    let mut cfg = PolicyConfig::new(PolicyId::ALL[rng.random_range(0..3usize)]);
    if rng.random_range(0..10) == 0 {
        cfg.backfill_enabled = false;
    }
    FuzzInstance { state, cfg }
}

/// Brute-force reservation-safety check over a post-instance state: with
/// the remaining allocations' predicted ends, the reserved job must still
/// fit no later than the reservation time.
pub fn reservation_holds(state: &SimState, reserved_nodes: u32, reserve_at: Seconds) -> bool {
    let running: Vec<RefRunning> = state
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
    let fit = ref_earliest_fit(
        state.cluster().total_nodes(),
        &running,
        reserved_nodes,
        state.clock(),
    );
    fit <= reserve_at
}
