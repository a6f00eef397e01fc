//! Discrete-event simulation engine.
//!
//! Time advances by jumping from one event to the next. Each popped event
//! updates state (an arrival joins the wait queue, a completion frees nodes)
//! and then triggers one scheduling instance under the configured policy.
//! Simulated jobs run for their requested walltime: the simulator is blind to
//! true runtimes, exactly like the live controller it stands in for.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};
#[cfg(debug_assertions)]
use crate::policy::Reservation;
use crate::policy::{self, PolicyConfig};
use crate::types::{slowdown, ClusterState, Job, JobId, JobMetrics, JobState, PolicyId, Seconds};

/// Default cap on events processed by a single simulation run.
pub const DEFAULT_EVENT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEventKind {
    /// A running job finishes and releases its nodes.
    Completion,
    /// A job enters the wait queue.
    Arrival,
}

/// Queued simulation event. Pops in `(time, kind, sequence)` order;
/// completions at a timestamp process before arrivals so freed nodes are
/// visible to the scheduling instance that follows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: Seconds,
    pub kind: SimEventKind,
    pub job_id: JobId,
    pub sequence: u64,
}

impl SimEvent {
    fn kind_rank(&self) -> u8 {
        match self.kind {
            SimEventKind::Completion => 0,
            SimEventKind::Arrival => 1,
        }
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then(self.kind_rank().cmp(&other.kind_rank()))
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Wraps SimEvent to make `BinaryHeap` a min-heap.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Earliest(SimEvent);

impl Ord for Earliest {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.cmp(&self.0)
    }
}

impl PartialOrd for Earliest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Result of one completed what-if or open-loop simulation.
///
/// Wait/slowdown aggregates cover the measurement scope fixed when the run
/// started: jobs then waiting or yet to arrive. Jobs already running had
/// their wait decided earlier, identically under every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub policy: PolicyId,
    pub max_wait: Seconds,
    pub avg_wait: f64,
    pub max_slowdown: f64,
    pub avg_slowdown: f64,
    /// Node-seconds used over the simulated horizon, as a fraction.
    pub utilization: f64,
    /// Jobs the simulation started at exactly its initial clock value.
    pub immediate_starts: Vec<(JobId, u32)>,
    /// Final clock minus initial clock.
    pub makespan: Seconds,
    /// Number of jobs the wait/slowdown aggregates cover.
    pub jobs_measured: usize,
}

/// Full state of one simulation: clock, cluster, queues, and completions.
///
/// A job lives in exactly one of `wait_queue`, `running` (mirrored by a
/// cluster allocation), or `completed`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub(crate) clock: Seconds,
    pub(crate) cluster: ClusterState,
    pub(crate) wait_queue: Vec<Job>,
    pub(crate) running: BTreeMap<JobId, Job>,
    pub(crate) completed: Vec<(Job, JobMetrics)>,
    pending_arrivals: BTreeMap<JobId, Job>,
    event_queue: BinaryHeap<Earliest>,
    next_sequence: u64,
    slowdown_bound: Seconds,
    event_budget: u64,
}

impl SimState {
    pub fn new(total_nodes: u32, slowdown_bound: Seconds) -> Self {
        SimState {
            clock: 0,
            cluster: ClusterState::new(total_nodes),
            wait_queue: Vec::new(),
            running: BTreeMap::new(),
            completed: Vec::new(),
            pending_arrivals: BTreeMap::new(),
            event_queue: BinaryHeap::new(),
            next_sequence: 0,
            slowdown_bound,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.cluster
    }

    pub fn wait_queue(&self) -> &[Job] {
        &self.wait_queue
    }

    pub fn running(&self) -> &BTreeMap<JobId, Job> {
        &self.running
    }

    pub fn completed(&self) -> &[(Job, JobMetrics)] {
        &self.completed
    }

    pub fn slowdown_bound(&self) -> Seconds {
        self.slowdown_bound
    }

    pub fn set_event_budget(&mut self, budget: u64) {
        self.event_budget = budget;
    }

    pub fn has_pending_events(&self) -> bool {
        !self.event_queue.is_empty()
    }

    /// Independent deep copy; mutating the copy never touches the original.
    pub fn snapshot(&self) -> SimState {
        self.clone()
    }

    /// Copy for a what-if fork: same queue and allocations, fresh metrics,
    /// event queue rebuilt from the allocations' predicted ends. No future
    /// arrivals are seeded because submissions cannot be predicted. A job
    /// already at or past its predicted end is still running as far as the
    /// fork knows, so its completion is seeded strictly after the fork
    /// clock; immediate starts therefore never bank on nodes whose release
    /// has not actually been observed.
    pub fn fork_for_what_if(&self) -> SimState {
        let mut fork = SimState::new(self.cluster.total_nodes(), self.slowdown_bound);
        fork.clock = self.clock;
        fork.cluster = self.cluster.clone();
        fork.wait_queue = self.wait_queue.clone();
        fork.running = self.running.clone();
        fork.event_budget = self.event_budget;
        for (job_id, alloc) in self.cluster.allocations() {
            let at = alloc.predicted_end.max(self.clock.saturating_add(1));
            fork.push_event(SimEventKind::Completion, at, job_id.clone());
        }
        fork
    }

    /// Queue a future arrival (open-loop replay of a known trace).
    pub fn inject_arrival(&mut self, job: Job) -> Result<()> {
        job.validate()?;
        if job.submit_time < self.clock {
            return Err(Error::InvalidArgument(format!(
                "job {}: arrival at {} is before clock {}",
                job.job_id, job.submit_time, self.clock
            )));
        }
        if self.pending_arrivals.contains_key(&job.job_id) {
            return Err(Error::InvalidArgument(format!(
                "job {}: duplicate arrival",
                job.job_id
            )));
        }
        let at = job.submit_time;
        let id = job.job_id.clone();
        self.pending_arrivals.insert(id.clone(), job);
        self.push_event(SimEventKind::Arrival, at, id);
        Ok(())
    }

    /// Append a job directly to the wait queue at the current clock.
    pub fn add_waiting(&mut self, job: Job) -> Result<()> {
        job.validate()?;
        self.wait_queue.push(job);
        Ok(())
    }

    /// Advance the clock without processing an event (mirror construction).
    pub fn advance_clock_to(&mut self, now: Seconds) -> Result<()> {
        if now < self.clock {
            return Err(Error::InvalidArgument(format!(
                "clock moving backwards: {} -> {now}",
                self.clock
            )));
        }
        self.clock = now;
        self.cluster.advance_to(now)
    }

    /// Record an externally started job (mirror synchronization): the job
    /// moves from the wait queue into the running set with the given
    /// predicted end.
    pub fn record_external_start(
        &mut self,
        job_id: &str,
        start: Seconds,
        predicted_end: Seconds,
    ) -> Result<u32> {
        let idx = self
            .wait_queue
            .iter()
            .position(|j| j.job_id == job_id)
            .ok_or_else(|| Error::Desync(format!("run event for non-waiting job {job_id}")))?;
        let mut job = self.wait_queue.remove(idx);
        job.start(start)?;
        let nodes = job.requested_nodes;
        self.cluster.allocate(job_id, nodes, start, predicted_end)?;
        self.running.insert(job_id.to_string(), job);
        Ok(nodes)
    }

    /// Record an externally observed completion at `at` (actual end time,
    /// which may differ from the predicted end).
    pub fn record_external_end(&mut self, job_id: &str, at: Seconds) -> Result<()> {
        if !self.running.contains_key(job_id) {
            return Err(Error::Desync(format!(
                "end event for non-running job {job_id}"
            )));
        }
        self.complete_job(job_id, at)
    }

    /// Rebuild this state from an authoritative cluster snapshot: running
    /// allocations are adopted with predicted ends clamped to the clock, the
    /// wait queue is replaced, and completion history is kept. A running job
    /// this state never saw is reconstructed from its allocation's public
    /// fields (its submit time reads as its start time). An inconsistent
    /// snapshot is rejected and the state left untouched.
    pub fn resync(&mut self, authoritative: &ClusterState, waiting: &[Job]) -> Result<()> {
        authoritative
            .check_accounting()
            .map_err(|e| Error::InconsistentSnapshot(e.to_string()))?;
        for job in waiting {
            job.validate()
                .map_err(|e| Error::InconsistentSnapshot(e.to_string()))?;
            if job.state != JobState::Waiting {
                return Err(Error::InconsistentSnapshot(format!(
                    "job {} in waiting list has state {:?}",
                    job.job_id, job.state
                )));
            }
        }
        let clock = self.clock.max(authoritative.clock());
        let mut cluster = ClusterState::new(authoritative.total_nodes());
        cluster.advance_to(clock)?;
        let mut running = BTreeMap::new();
        for (job_id, alloc) in authoritative.allocations() {
            let job = match self.running.get(job_id) {
                Some(known) => known.clone(),
                None => {
                    let walltime = alloc.predicted_end.saturating_sub(alloc.start_time).max(1);
                    let mut job = Job::new(job_id.clone(), alloc.start_time, alloc.nodes, walltime);
                    job.start(alloc.start_time)?;
                    job
                }
            };
            cluster.allocate(
                job_id.clone(),
                alloc.nodes,
                alloc.start_time,
                alloc.predicted_end,
            )?;
            running.insert(job_id.clone(), job);
        }
        self.clock = clock;
        self.cluster = cluster;
        self.running = running;
        self.wait_queue = waiting.to_vec();
        self.pending_arrivals.clear();
        self.event_queue.clear();
        Ok(())
    }

    pub(crate) fn push_event(&mut self, kind: SimEventKind, time: Seconds, job_id: JobId) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.event_queue.push(Earliest(SimEvent {
            time,
            kind,
            job_id,
            sequence,
        }));
    }

    /// Move a waiting job into the running set at the current clock with
    /// predicted end `clock + walltime`. Used by scheduling instances.
    pub(crate) fn start_waiting_job(&mut self, job_id: &str) -> Result<(JobId, u32, Seconds)> {
        let predicted_end = {
            let job = self
                .wait_queue
                .iter()
                .find(|j| j.job_id == job_id)
                .ok_or_else(|| {
                    Error::CorruptedState(format!("start of non-waiting job {job_id}"))
                })?;
            self.clock + job.requested_walltime
        };
        let nodes = self.record_external_start(job_id, self.clock, predicted_end)?;
        Ok((job_id.to_string(), nodes, predicted_end))
    }

    fn complete_job(&mut self, job_id: &str, at: Seconds) -> Result<()> {
        let mut job = self.running.remove(job_id).ok_or_else(|| {
            Error::CorruptedState(format!("completion event for unknown job {job_id}"))
        })?;
        self.cluster.release(job_id)?;
        job.complete(at)?;
        let wait = job.wait_time().expect("completed job has start");
        let run = job.end_time.unwrap() - job.start_time.unwrap();
        // Zero-length runs cannot happen in simulation (walltime > 0) but an
        // emulated job could end in the same second it started.
        let sd = slowdown(wait, run.max(1), self.slowdown_bound)?;
        self.completed.push((
            job,
            JobMetrics {
                wait_time: wait,
                slowdown: sd,
            },
        ));
        Ok(())
    }

    /// Pop the earliest event, apply it, then run one scheduling instance.
    /// Returns the jobs that instance started.
    pub fn step(&mut self, cfg: &PolicyConfig) -> Result<Vec<(JobId, u32)>> {
        let Earliest(event) = self
            .event_queue
            .pop()
            .ok_or_else(|| Error::InvalidArgument("step with empty event queue".into()))?;
        self.clock = event.time;
        self.cluster.advance_to(event.time)?;
        match event.kind {
            SimEventKind::Arrival => {
                let job = self.pending_arrivals.remove(&event.job_id).ok_or_else(|| {
                    Error::CorruptedState(format!("arrival event for unknown job {}", event.job_id))
                })?;
                self.wait_queue.push(job);
            }
            SimEventKind::Completion => {
                self.complete_job(&event.job_id, event.time)?;
            }
        }
        let started = self.run_scheduling_instance(cfg);
        debug_assert!(self.cluster.check_accounting().is_ok());
        started
    }

    /// One scheduling instance at the current clock: order the queue, start
    /// what fits plus any safe backfills, and queue their completion events.
    pub fn run_scheduling_instance(&mut self, cfg: &PolicyConfig) -> Result<Vec<(JobId, u32)>> {
        let outcome = policy::schedule_instance(self, cfg)?;
        for (job_id, _nodes, predicted_end) in &outcome.started {
            self.push_event(SimEventKind::Completion, *predicted_end, job_id.clone());
        }
        #[cfg(debug_assertions)]
        if let Some(res) = &outcome.reservation {
            self.assert_reservation_holds(res);
        }
        Ok(outcome
            .started
            .into_iter()
            .map(|(id, nodes, _)| (id, nodes))
            .collect())
    }

    /// Debug check: with the post-instance allocations' predicted ends, the
    /// reserved job still fits no later than its reservation time.
    #[cfg(debug_assertions)]
    fn assert_reservation_holds(&self, res: &Reservation) {
        let (earliest, _) = policy::earliest_fit(&self.cluster, res.nodes, self.clock);
        debug_assert!(
            earliest <= res.start_no_later_than,
            "backfill delayed reservation for {}: fit at {} > reserved {}",
            res.job_id,
            earliest,
            res.start_no_later_than
        );
    }

    /// Drain the simulation: step until no events remain, then report.
    ///
    /// A scheduling instance runs once at entry so that jobs already able to
    /// start do so at the initial clock; those starts (and any others at the
    /// same instant) form `immediate_starts`.
    pub fn run_to_exhaustion(&mut self, cfg: &PolicyConfig) -> Result<SimOutcome> {
        let initial_clock = self.clock;
        let completed_before = self.completed.len();
        let scope: Vec<JobId> = self
            .wait_queue
            .iter()
            .map(|j| j.job_id.clone())
            .chain(self.pending_arrivals.keys().cloned())
            .collect();

        let mut immediate_starts = Vec::new();
        for started in self.run_scheduling_instance(cfg)? {
            immediate_starts.push(started);
        }

        let mut events_processed: u64 = 0;
        while self.has_pending_events() {
            events_processed += 1;
            if events_processed > self.event_budget {
                return Err(Error::RunawaySimulation {
                    policy: cfg.id,
                    budget: self.event_budget,
                });
            }
            let started = self.step(cfg)?;
            if self.clock == initial_clock {
                immediate_starts.extend(started);
            }
        }
        if !self.wait_queue.is_empty() || !self.pending_arrivals.is_empty() {
            return Err(Error::CorruptedState(format!(
                "simulation stalled with {} waiting and {} pending jobs",
                self.wait_queue.len(),
                self.pending_arrivals.len()
            )));
        }

        Ok(self.build_outcome(
            cfg.id,
            initial_clock,
            completed_before,
            scope,
            immediate_starts,
        ))
    }

    fn build_outcome(
        &self,
        policy: PolicyId,
        initial_clock: Seconds,
        completed_before: usize,
        scope: Vec<JobId>,
        immediate_starts: Vec<(JobId, u32)>,
    ) -> SimOutcome {
        let final_clock = self.clock;
        let mut max_wait: Seconds = 0;
        let mut sum_wait: u128 = 0;
        let mut max_slowdown: f64 = 0.0;
        let mut sum_slowdown: f64 = 0.0;
        let mut measured = 0usize;
        for (job, metrics) in &self.completed {
            if !scope.contains(&job.job_id) {
                continue;
            }
            measured += 1;
            max_wait = max_wait.max(metrics.wait_time);
            sum_wait += u128::from(metrics.wait_time);
            max_slowdown = max_slowdown.max(metrics.slowdown);
            sum_slowdown += metrics.slowdown;
        }
        let (avg_wait, avg_slowdown) = if measured > 0 {
            (
                sum_wait as f64 / measured as f64,
                sum_slowdown / measured as f64,
            )
        } else {
            (0.0, 0.0)
        };

        let horizon = final_clock.saturating_sub(initial_clock);
        let utilization = if horizon == 0 {
            0.0
        } else {
            let mut busy: u128 = 0;
            for (job, _) in &self.completed[completed_before..] {
                let start = job.start_time.expect("completed").max(initial_clock);
                let end = job.end_time.expect("completed").min(final_clock);
                if end > start {
                    busy += u128::from(end - start) * u128::from(job.requested_nodes);
                }
            }
            busy as f64 / (u128::from(self.cluster.total_nodes()) * u128::from(horizon)) as f64
        };

        SimOutcome {
            policy,
            max_wait,
            avg_wait,
            max_slowdown,
            avg_slowdown,
            utilization,
            immediate_starts,
            makespan: horizon,
            jobs_measured: measured,
        }
    }

    fn sorted_events(&self) -> Vec<SimEvent> {
        let mut events: Vec<SimEvent> = self.event_queue.iter().map(|e| e.0.clone()).collect();
        events.sort();
        events
    }
}

impl PartialEq for SimState {
    fn eq(&self, other: &Self) -> bool {
        self.clock == other.clock
            && self.cluster == other.cluster
            && self.wait_queue == other.wait_queue
            && self.running == other.running
            && self.completed == other.completed
            && self.pending_arrivals == other.pending_arrivals
            && self.sorted_events() == other.sorted_events()
    }
}
