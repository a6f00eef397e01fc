//! Candidate scheduling policies: wait-queue orderings (FCFS, WFP, SJF)
//! with EASY backfilling layered on top of each.
//!
//! A scheduling instance starts jobs from the head of the policy-ordered
//! queue while they fit. The first job that does not fit gets a reservation
//! at the earliest time it would fit given the running jobs' predicted ends;
//! later jobs may backfill onto idle nodes only if they cannot delay that
//! reservation.

use serde::{Deserialize, Serialize};

use crate::des::SimState;
use crate::error::Result;
use crate::types::{ClusterState, Job, JobId, JobState, PolicyId, Seconds};

/// One pool member: a queue ordering plus backfill settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub id: PolicyId,
    #[serde(default = "default_backfill")]
    pub backfill_enabled: bool,
    /// Exponent in the WFP utility `nodes * (wait / walltime)^e`.
    #[serde(default = "default_wfp_exponent")]
    pub wfp_exponent: f64,
}

fn default_backfill() -> bool {
    true
}

fn default_wfp_exponent() -> f64 {
    3.0
}

impl PolicyConfig {
    pub fn new(id: PolicyId) -> Self {
        PolicyConfig {
            id,
            backfill_enabled: default_backfill(),
            wfp_exponent: default_wfp_exponent(),
        }
    }
}

/// Resource hold for the first job that did not fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub job_id: JobId,
    pub nodes: u32,
    /// Earliest fit time computed at the instance; backfills must not push
    /// the job past it.
    pub start_no_later_than: Seconds,
}

/// What one scheduling instance did.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    /// Jobs started now: `(job_id, nodes, predicted_end)` in start order.
    pub started: Vec<(JobId, u32, Seconds)>,
    pub reservation: Option<Reservation>,
}

fn wfp_utility(job: &Job, clock: Seconds, exponent: f64) -> f64 {
    let wait = clock.saturating_sub(job.submit_time) as f64;
    let ratio = wait / job.requested_walltime as f64;
    job.requested_nodes as f64 * ratio.powf(exponent)
}

/// Return the queue permuted into the policy's service order.
///
/// FCFS sorts by submit time, SJF by requested walltime, WFP by descending
/// utility. Every tie breaks by submit time then job id, so the order is a
/// deterministic function of the queue contents and the clock.
pub fn order_queue(queue: &[Job], clock: Seconds, cfg: &PolicyConfig) -> Vec<Job> {
    debug_assert!(queue.iter().all(|j| j.state == JobState::Waiting));
    let mut ordered: Vec<Job> = queue.to_vec();
    match cfg.id {
        PolicyId::Fcfs => {
            ordered.sort_by(|a, b| {
                a.submit_time
                    .cmp(&b.submit_time)
                    .then_with(|| a.job_id.cmp(&b.job_id))
            });
        }
        PolicyId::Sjf => {
            ordered.sort_by(|a, b| {
                a.requested_walltime
                    .cmp(&b.requested_walltime)
                    .then_with(|| a.submit_time.cmp(&b.submit_time))
                    .then_with(|| a.job_id.cmp(&b.job_id))
            });
        }
        PolicyId::Wfp => {
            ordered.sort_by(|a, b| {
                let ua = wfp_utility(a, clock, cfg.wfp_exponent);
                let ub = wfp_utility(b, clock, cfg.wfp_exponent);
                ub.total_cmp(&ua)
                    .then_with(|| a.submit_time.cmp(&b.submit_time))
                    .then_with(|| a.job_id.cmp(&b.job_id))
            });
        }
    }
    ordered
}

/// Earliest time at which `need` nodes are simultaneously free, assuming
/// running jobs release at their predicted ends, plus the nodes left free at
/// that instant after taking the `need`.
pub(crate) fn earliest_fit(cluster: &ClusterState, need: u32, clock: Seconds) -> (Seconds, u32) {
    let mut free = cluster.free_nodes();
    if free >= need {
        return (clock, free - need);
    }
    let mut ends: Vec<(Seconds, u32)> = cluster
        .allocations()
        .values()
        .map(|a| (a.predicted_end.max(clock), a.nodes))
        .collect();
    ends.sort();
    let mut i = 0;
    while i < ends.len() {
        let t = ends[i].0;
        while i < ends.len() && ends[i].0 == t {
            free += ends[i].1;
            i += 1;
        }
        if free >= need {
            return (t, free - need);
        }
    }
    // Unreachable when need <= total_nodes; callers validate job sizes
    // against the cluster at load time.
    (
        ends.last().map(|e| e.0).unwrap_or(clock),
        free.saturating_sub(need),
    )
}

/// Run one scheduling instance over `state` at its current clock.
///
/// Starts the longest policy-order prefix that fits, reserves for the first
/// blocked job, then backfills any later job that fits the free nodes and
/// either ends by the reservation time or fits the nodes that remain free
/// at it. The wait queue and cluster are updated; started jobs are returned
/// in start order with their predicted ends.
pub fn schedule_instance(state: &mut SimState, cfg: &PolicyConfig) -> Result<InstanceOutcome> {
    let clock = state.clock();
    let ordered = order_queue(&state.wait_queue, clock, cfg);
    let mut started: Vec<(JobId, u32, Seconds)> = Vec::new();
    let mut reservation = None;

    let mut blocked_at = ordered.len();
    for (i, job) in ordered.iter().enumerate() {
        if job.requested_nodes <= state.cluster.free_nodes() {
            started.push(state.start_waiting_job(&job.job_id)?);
        } else {
            blocked_at = i;
            break;
        }
    }

    if blocked_at < ordered.len() && cfg.backfill_enabled {
        let head = &ordered[blocked_at];
        let (reserve_at, mut shadow_free) =
            earliest_fit(&state.cluster, head.requested_nodes, clock);
        reservation = Some(Reservation {
            job_id: head.job_id.clone(),
            nodes: head.requested_nodes,
            start_no_later_than: reserve_at,
        });
        for job in &ordered[blocked_at + 1..] {
            if job.requested_nodes > state.cluster.free_nodes() {
                continue;
            }
            let ends_by_reservation = clock + job.requested_walltime <= reserve_at;
            let fits_shadow = job.requested_nodes <= shadow_free;
            if ends_by_reservation || fits_shadow {
                started.push(state.start_waiting_job(&job.job_id)?);
                if !ends_by_reservation {
                    shadow_free -= job.requested_nodes;
                }
            }
        }
    }

    Ok(InstanceOutcome {
        started,
        reservation,
    })
}
