//! Shared domain types: jobs, events, cluster state, and per-job metrics.
//!
//! All times are non-negative integral seconds, which keeps every simulation
//! bit-reproducible. Nodes are fungible: an allocation is a count, not a
//! placement.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation/cluster time in whole seconds.
pub type Seconds = u64;

/// Unique job identifier.
pub type JobId = String;

/// Default denominator clamp for bounded slowdown, in seconds.
pub const DEFAULT_SLOWDOWN_BOUND: Seconds = 10;

/// Lifecycle of a job. Transitions only move forward:
/// Waiting -> Running -> Completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Waiting,
    Running,
    Completed,
}

/// A batch job as seen by schedulers: user-facing fields only.
///
/// The job's true runtime is deliberately not part of this type; it lives in
/// [`TraceJob`] and is visible only to the workload trace and the cluster
/// emulator. Policies and the twin schedule against `requested_walltime`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    pub submit_time: Seconds,
    pub requested_nodes: u32,
    pub requested_walltime: Seconds,
    pub start_time: Option<Seconds>,
    pub end_time: Option<Seconds>,
    pub state: JobState,
}

impl Job {
    pub fn new(
        job_id: impl Into<JobId>,
        submit_time: Seconds,
        requested_nodes: u32,
        requested_walltime: Seconds,
    ) -> Self {
        Job {
            job_id: job_id.into(),
            submit_time,
            requested_nodes,
            requested_walltime,
            start_time: None,
            end_time: None,
            state: JobState::Waiting,
        }
    }

    /// Check field invariants: positive request sizes and state/timestamp
    /// coherence (start set iff running or completed, end set iff completed,
    /// end >= start >= submit).
    pub fn validate(&self) -> Result<()> {
        if self.requested_nodes < 1 {
            return Err(Error::InvalidArgument(format!(
                "job {}: requested_nodes must be >= 1",
                self.job_id
            )));
        }
        if self.requested_walltime == 0 {
            return Err(Error::InvalidArgument(format!(
                "job {}: requested_walltime must be positive",
                self.job_id
            )));
        }
        let coherent = match self.state {
            JobState::Waiting => self.start_time.is_none() && self.end_time.is_none(),
            JobState::Running => self.start_time.is_some() && self.end_time.is_none(),
            JobState::Completed => self.start_time.is_some() && self.end_time.is_some(),
        };
        if !coherent {
            return Err(Error::CorruptedState(format!(
                "job {}: timestamps inconsistent with state {:?}",
                self.job_id, self.state
            )));
        }
        if let Some(start) = self.start_time {
            if start < self.submit_time {
                return Err(Error::CorruptedState(format!(
                    "job {}: start {} precedes submit {}",
                    self.job_id, start, self.submit_time
                )));
            }
            if let Some(end) = self.end_time {
                if end < start {
                    return Err(Error::CorruptedState(format!(
                        "job {}: end {} precedes start {}",
                        self.job_id, end, start
                    )));
                }
            }
        }
        Ok(())
    }

    /// Transition Waiting -> Running at `at`.
    pub fn start(&mut self, at: Seconds) -> Result<()> {
        if self.state != JobState::Waiting {
            return Err(Error::CorruptedState(format!(
                "job {}: start while {:?}",
                self.job_id, self.state
            )));
        }
        if at < self.submit_time {
            return Err(Error::CorruptedState(format!(
                "job {}: start {} precedes submit {}",
                self.job_id, at, self.submit_time
            )));
        }
        self.start_time = Some(at);
        self.state = JobState::Running;
        Ok(())
    }

    /// Transition Running -> Completed at `at`.
    pub fn complete(&mut self, at: Seconds) -> Result<()> {
        if self.state != JobState::Running {
            return Err(Error::CorruptedState(format!(
                "job {}: complete while {:?}",
                self.job_id, self.state
            )));
        }
        let start = self.start_time.expect("running job has start_time");
        if at < start {
            return Err(Error::CorruptedState(format!(
                "job {}: end {} precedes start {}",
                self.job_id, at, start
            )));
        }
        self.end_time = Some(at);
        self.state = JobState::Completed;
        Ok(())
    }

    /// Seconds spent waiting, defined once started.
    pub fn wait_time(&self) -> Option<Seconds> {
        self.start_time.map(|s| s - self.submit_time)
    }
}

/// A job plus its hidden true runtime, as read from a trace.
///
/// Only the workload reader/generator and the cluster emulator handle this
/// type; everything downstream of the event stream sees [`Job`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceJob {
    pub job: Job,
    pub true_runtime: Seconds,
}

impl TraceJob {
    pub fn validate(&self) -> Result<()> {
        self.job.validate()?;
        if self.true_runtime == 0 {
            return Err(Error::InvalidArgument(format!(
                "job {}: true_runtime must be positive",
                self.job.job_id
            )));
        }
        Ok(())
    }
}

/// Scheduler-visible event on the stream. Submit carries the job's public
/// request fields; no event ever carries the true runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Submit { nodes: u32, walltime: Seconds },
    Run,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub timestamp: Seconds,
    pub job_id: JobId,
    pub kind: EventKind,
}

impl Event {
    pub fn submit(job: &Job) -> Event {
        Event {
            timestamp: job.submit_time,
            job_id: job.job_id.clone(),
            kind: EventKind::Submit {
                nodes: job.requested_nodes,
                walltime: job.requested_walltime,
            },
        }
    }

    pub fn run(job_id: impl Into<JobId>, at: Seconds) -> Event {
        Event {
            timestamp: at,
            job_id: job_id.into(),
            kind: EventKind::Run,
        }
    }

    pub fn end(job_id: impl Into<JobId>, at: Seconds) -> Event {
        Event {
            timestamp: at,
            job_id: job_id.into(),
            kind: EventKind::End,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EventKind::Submit { .. } => "submit",
            EventKind::Run => "run",
            EventKind::End => "end",
        }
    }
}

/// One running job's share of the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub nodes: u32,
    pub start_time: Seconds,
    pub predicted_end: Seconds,
}

/// Node-count bookkeeping for a cluster. Fields are private so that
/// `free_nodes == total_nodes - sum(allocations)` holds by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterState {
    total_nodes: u32,
    free_nodes: u32,
    allocations: BTreeMap<JobId, Allocation>,
    clock: Seconds,
}

impl ClusterState {
    pub fn new(total_nodes: u32) -> Self {
        ClusterState {
            total_nodes,
            free_nodes: total_nodes,
            allocations: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn total_nodes(&self) -> u32 {
        self.total_nodes
    }

    pub fn free_nodes(&self) -> u32 {
        self.free_nodes
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn allocations(&self) -> &BTreeMap<JobId, Allocation> {
        &self.allocations
    }

    pub fn is_allocated(&self, job_id: &str) -> bool {
        self.allocations.contains_key(job_id)
    }

    /// Advance the clock, never backwards. Allocations whose predicted end
    /// has already passed are pushed forward to `now`: the job is still
    /// running, so the best blind prediction is that it ends imminently.
    pub fn advance_to(&mut self, now: Seconds) -> Result<()> {
        if now < self.clock {
            return Err(Error::CorruptedState(format!(
                "clock moving backwards: {} -> {}",
                self.clock, now
            )));
        }
        self.clock = now;
        for alloc in self.allocations.values_mut() {
            if alloc.predicted_end < now {
                alloc.predicted_end = now;
            }
        }
        Ok(())
    }

    pub fn allocate(
        &mut self,
        job_id: impl Into<JobId>,
        nodes: u32,
        start_time: Seconds,
        predicted_end: Seconds,
    ) -> Result<()> {
        let job_id = job_id.into();
        if nodes > self.free_nodes {
            return Err(Error::InsufficientNodes {
                job_id,
                requested: nodes,
                free: self.free_nodes,
            });
        }
        if self.allocations.contains_key(&job_id) {
            return Err(Error::CorruptedState(format!(
                "job {job_id} already allocated"
            )));
        }
        self.free_nodes -= nodes;
        self.allocations.insert(
            job_id,
            Allocation {
                nodes,
                start_time,
                predicted_end: predicted_end.max(self.clock),
            },
        );
        Ok(())
    }

    pub fn release(&mut self, job_id: &str) -> Result<Allocation> {
        let alloc = self
            .allocations
            .remove(job_id)
            .ok_or_else(|| Error::CorruptedState(format!("release of unallocated job {job_id}")))?;
        self.free_nodes += alloc.nodes;
        Ok(alloc)
    }

    /// Verify `free = total - sum(allocated)` and `predicted_end >= clock`.
    pub fn check_accounting(&self) -> Result<()> {
        let used: u64 = self.allocations.values().map(|a| u64::from(a.nodes)).sum();
        let expected_free = u64::from(self.total_nodes)
            .checked_sub(used)
            .ok_or_else(|| {
                Error::CorruptedState(format!(
                    "allocations use {used} of {} nodes",
                    self.total_nodes
                ))
            })?;
        if u64::from(self.free_nodes) != expected_free {
            return Err(Error::CorruptedState(format!(
                "free_nodes {} != total {} - allocated {used}",
                self.free_nodes, self.total_nodes
            )));
        }
        for (job_id, alloc) in &self.allocations {
            if alloc.predicted_end < self.clock {
                return Err(Error::CorruptedState(format!(
                    "job {job_id}: predicted end {} behind clock {}",
                    alloc.predicted_end, self.clock
                )));
            }
        }
        Ok(())
    }
}

/// Candidate scheduling policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyId {
    Fcfs,
    Wfp,
    Sjf,
}

impl PolicyId {
    pub const ALL: [PolicyId; 3] = [PolicyId::Fcfs, PolicyId::Wfp, PolicyId::Sjf];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyId::Fcfs => "fcfs",
            PolicyId::Wfp => "wfp",
            PolicyId::Sjf => "sjf",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcfs" => Ok(PolicyId::Fcfs),
            "wfp" => Ok(PolicyId::Wfp),
            "sjf" => Ok(PolicyId::Sjf),
            other => Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// Wait time and bounded slowdown for one completed job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    pub wait_time: Seconds,
    pub slowdown: f64,
}

/// Bounded slowdown: `max(1, (wait + run) / max(run, bound))`.
///
/// The bound clamps the denominator so very short jobs do not blow the
/// metric up; with `bound = run` this degrades to plain slowdown.
pub fn slowdown(wait: Seconds, run: Seconds, bound: Seconds) -> Result<f64> {
    if run == 0 {
        return Err(Error::InvalidArgument(
            "slowdown: run must be positive".into(),
        ));
    }
    if bound == 0 {
        return Err(Error::InvalidArgument(
            "slowdown: bound must be positive".into(),
        ));
    }
    let value = (wait + run) as f64 / run.max(bound) as f64;
    Ok(value.max(1.0))
}
