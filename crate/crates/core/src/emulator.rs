//! Emulated cluster: the ground-truth side of the loop.
//!
//! The emulator holds the trace's true runtimes, which nothing downstream of
//! the event stream ever sees. It starts jobs only on explicit run commands
//! — the controller on the other end of the stream is the scheduler — and
//! produces the Submit/Run/End event timeline. Jobs run for their true
//! runtime; predicted ends exposed in snapshots are walltime-based, exactly
//! what a resource-manager query would report.

use std::cmp::Reverse;
use std::collections::VecDeque;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::stream::StreamProducer;
use crate::types::{ClusterState, Event, Job, JobId, JobState, Seconds, TraceJob};

/// How the emulator clock relates to wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    /// The clock jumps event to event; the whole loop is deterministic.
    VirtualTime,
    /// Inter-event gaps are paced in wall time, divided by `scale`
    /// (scale 10 plays the trace ten times faster than real time).
    WallClock { scale: f64 },
}

impl ClockMode {
    /// Wall-clock pause for a virtual gap under this mode.
    pub fn pause_for(&self, gap: Seconds) -> Duration {
        match self {
            ClockMode::VirtualTime => Duration::ZERO,
            ClockMode::WallClock { scale } => Duration::from_secs_f64(gap as f64 / scale),
        }
    }
}

#[derive(Debug, Clone)]
struct EmulatedJob {
    job: Job,
    true_runtime: Seconds,
}

/// Ground-truth cluster state plus the not-yet-submitted tail of the trace.
#[derive(Debug)]
pub struct Emulator {
    cluster: ClusterState,
    jobs: BTreeMap<JobId, EmulatedJob>,
    pending_submits: VecDeque<JobId>,
    /// `(end_time, start_sequence, job_id)` min-heap of scheduled ends.
    end_queue: BinaryHeap<Reverse<(Seconds, u64, JobId)>>,
    next_start_sequence: u64,
    clock: Seconds,
    clock_mode: ClockMode,
    /// Extra seconds between a job's true end and its End event, modelling
    /// scheduler cleanup.
    cleanup_delay: Seconds,
    /// Submitted, not yet started, in submission order.
    waiting: Vec<JobId>,
}

impl Emulator {
    pub fn new(total_nodes: u32, clock_mode: ClockMode, cleanup_delay: Seconds) -> Self {
        Emulator {
            cluster: ClusterState::new(total_nodes),
            jobs: BTreeMap::new(),
            pending_submits: VecDeque::new(),
            end_queue: BinaryHeap::new(),
            next_start_sequence: 0,
            clock: 0,
            clock_mode,
            cleanup_delay,
            waiting: Vec::new(),
        }
    }

    /// Load a trace, rejecting jobs that could never fit the cluster.
    pub fn load_trace(&mut self, trace: Vec<TraceJob>) -> Result<()> {
        let oversized: Vec<JobId> = trace
            .iter()
            .filter(|t| t.job.requested_nodes > self.cluster.total_nodes())
            .map(|t| t.job.job_id.clone())
            .collect();
        if !oversized.is_empty() {
            return Err(Error::OversizedJobs(oversized));
        }
        let mut ordered: Vec<TraceJob> = Vec::with_capacity(trace.len());
        for entry in trace {
            entry.validate()?;
            if self.jobs.contains_key(&entry.job.job_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate job id {}",
                    entry.job.job_id
                )));
            }
            ordered.push(entry);
        }
        ordered.sort_by(|a, b| {
            a.job
                .submit_time
                .cmp(&b.job.submit_time)
                .then_with(|| a.job.job_id.cmp(&b.job.job_id))
        });
        for entry in ordered {
            let id = entry.job.job_id.clone();
            self.jobs.insert(
                id.clone(),
                EmulatedJob {
                    job: entry.job,
                    true_runtime: entry.true_runtime,
                },
            );
            self.pending_submits.push_back(id);
        }
        Ok(())
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.clock_mode
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.cluster
    }

    /// True when no submit or end events remain.
    pub fn is_drained(&self) -> bool {
        self.pending_submits.is_empty() && self.end_queue.is_empty()
    }

    pub fn waiting_jobs(&self) -> Vec<&Job> {
        self.waiting.iter().map(|id| &self.jobs[id].job).collect()
    }

    /// Completed jobs in submission order.
    pub fn completed_jobs(&self) -> Vec<&Job> {
        let mut done: Vec<&Job> = self
            .jobs
            .values()
            .map(|e| &e.job)
            .filter(|j| j.state == JobState::Completed)
            .collect();
        done.sort_by(|a, b| {
            a.submit_time
                .cmp(&b.submit_time)
                .then_with(|| a.job_id.cmp(&b.job_id))
        });
        done
    }

    /// Virtual time until the next event, if any.
    pub fn gap_to_next_event(&self) -> Option<Seconds> {
        self.peek_next_time().map(|t| t.saturating_sub(self.clock))
    }

    fn peek_next_time(&self) -> Option<Seconds> {
        let submit = self
            .pending_submits
            .front()
            .map(|id| self.jobs[id].job.submit_time);
        let end = self.end_queue.peek().map(|Reverse((t, _, _))| *t);
        match (submit, end) {
            (Some(s), Some(e)) => Some(s.min(e)),
            (Some(s), None) => Some(s),
            (None, Some(e)) => Some(e),
            (None, None) => None,
        }
    }

    /// Pop the next timeline event, advancing the clock to it. Ends at a
    /// timestamp pop before submits at the same instant so freed nodes are
    /// visible to the scheduling decision the event triggers.
    pub fn next_event(&mut self) -> Result<Option<Event>> {
        let submit_time = self
            .pending_submits
            .front()
            .map(|id| self.jobs[id].job.submit_time);
        let end_time = self.end_queue.peek().map(|Reverse((t, _, _))| *t);
        let take_end = match (submit_time, end_time) {
            (None, None) => return Ok(None),
            (Some(_), None) => false,
            (None, Some(_)) => true,
            (Some(s), Some(e)) => e <= s,
        };
        if take_end {
            let Reverse((t, _, job_id)) = self.end_queue.pop().expect("peeked");
            self.clock = t;
            self.cluster.advance_to(t)?;
            self.cluster.release(&job_id)?;
            self.jobs
                .get_mut(&job_id)
                .expect("scheduled end for known job")
                .job
                .complete(t)?;
            Ok(Some(Event::end(job_id, t)))
        } else {
            let job_id = self.pending_submits.pop_front().expect("peeked");
            let job = &self.jobs[&job_id].job;
            let t = job.submit_time;
            let event = Event::submit(job);
            self.clock = self.clock.max(t);
            self.cluster.advance_to(self.clock)?;
            self.waiting.push(job_id);
            Ok(Some(event))
        }
    }

    /// Execute a `RUN <job_id>` command at the current clock: allocate
    /// nodes, schedule the End at `clock + true_runtime (+ cleanup)`, and
    /// return the Run event for the stream. Rejections leave state
    /// untouched and are reported to the caller.
    pub fn execute_run(&mut self, job_id: &str) -> Result<Event> {
        let position = self
            .waiting
            .iter()
            .position(|id| id == job_id)
            .ok_or_else(|| Error::InvalidCommand(format!("job {job_id} is not waiting")))?;
        let (nodes, walltime, true_runtime) = {
            let entry = &self.jobs[job_id];
            (
                entry.job.requested_nodes,
                entry.job.requested_walltime,
                entry.true_runtime,
            )
        };
        if nodes > self.cluster.free_nodes() {
            return Err(Error::InsufficientNodes {
                job_id: job_id.to_string(),
                requested: nodes,
                free: self.cluster.free_nodes(),
            });
        }
        self.cluster
            .allocate(job_id, nodes, self.clock, self.clock + walltime)?;
        self.jobs
            .get_mut(job_id)
            .expect("known job")
            .job
            .start(self.clock)?;
        self.waiting.remove(position);
        let sequence = self.next_start_sequence;
        self.next_start_sequence += 1;
        self.end_queue.push(Reverse((
            self.clock + true_runtime + self.cleanup_delay,
            sequence,
            job_id.to_string(),
        )));
        Ok(Event::run(job_id, self.clock))
    }

    /// Point-in-time ground truth with public fields only: the cluster (its
    /// predicted ends are walltime-based) and the waiting jobs. Emulates
    /// querying the resource manager's command-line tools.
    pub fn snapshot_authoritative(&self) -> (ClusterState, Vec<Job>) {
        let waiting = self
            .waiting
            .iter()
            .map(|id| self.jobs[id].job.clone())
            .collect();
        (self.cluster.clone(), waiting)
    }

    /// Drain every remaining event to the sink with no controller attached:
    /// only submits appear unless run commands were executed beforehand.
    pub fn emit_timeline(&mut self, sink: &mut dyn StreamProducer) -> Result<()> {
        while let Some(event) = self.next_event()? {
            sink.append(event)?;
        }
        Ok(())
    }
}
