//! The twin controller: mirrors the physical cluster from streamed events,
//! forks parallel what-if simulations over a policy pool, scores the
//! outcomes, and feeds the winner's immediate job starts back as run
//! commands.
//!
//! The score is a weighted sum of wait-time and slowdown aggregates, so it
//! is a cost: selection minimizes it. Ties within a relative epsilon resolve
//! by a fixed priority order over the pool.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::des::{SimOutcome, SimState};
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::types::{ClusterState, Event, EventKind, Job, JobId, PolicyId, Seconds};

/// What an ingested event implies for the control loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    /// A run event: the mirror recorded the start; no new scheduling
    /// opportunity exists.
    NoAction,
    /// A submit or end event: new work or freed nodes warrant a what-if
    /// cycle.
    ScheduleNeeded,
}

/// Weights and tie-breaking for policy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub w_max_wait: f64,
    pub w_max_slowdown: f64,
    pub w_avg_wait: f64,
    pub w_avg_slowdown: f64,
    /// Priority order used when outcomes tie on cost.
    pub tie_break_order: Vec<PolicyId>,
    /// Relative tolerance for treating two costs as tied.
    pub tie_epsilon: f64,
    /// Min-max normalize each metric across the pool before weighting.
    ///
    /// On by default: the raw sum mixes seconds with dimensionless
    /// slowdowns, so on a backed-up queue the max-wait term swamps the
    /// other three and selection degenerates to chasing max wait alone.
    /// Normalizing per cycle makes the four metrics commensurable; set
    /// false to select on the verbatim weighted sum instead.
    pub normalize: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            w_max_wait: 0.25,
            w_max_slowdown: 0.25,
            w_avg_wait: 0.25,
            w_avg_slowdown: 0.25,
            tie_break_order: vec![PolicyId::Wfp, PolicyId::Fcfs, PolicyId::Sjf],
            tie_epsilon: 1e-9,
            normalize: true,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.w_max_wait,
            self.w_max_slowdown,
            self.w_avg_wait,
            self.w_avg_slowdown,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("score", "weights must be finite and >= 0"));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::config(
                "score",
                "at least one weight must be positive",
            ));
        }
        if !self.tie_epsilon.is_finite() || self.tie_epsilon < 0.0 {
            return Err(Error::config(
                "score.tie_epsilon",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Weighted cost of one outcome. Lower is better.
pub fn score(outcome: &SimOutcome, cfg: &ScoreConfig) -> f64 {
    cfg.w_max_wait * outcome.max_wait as f64
        + cfg.w_max_slowdown * outcome.max_slowdown
        + cfg.w_avg_wait * outcome.avg_wait
        + cfg.w_avg_slowdown * outcome.avg_slowdown
}

fn normalized_costs(outcomes: &[SimOutcome], cfg: &ScoreConfig) -> Vec<f64> {
    let metrics: Vec<[f64; 4]> = outcomes
        .iter()
        .map(|o| {
            [
                o.max_wait as f64,
                o.max_slowdown,
                o.avg_wait,
                o.avg_slowdown,
            ]
        })
        .collect();
    let weights = [
        cfg.w_max_wait,
        cfg.w_max_slowdown,
        cfg.w_avg_wait,
        cfg.w_avg_slowdown,
    ];
    let mut costs = vec![0.0; outcomes.len()];
    for axis in 0..4 {
        let lo = metrics
            .iter()
            .map(|m| m[axis])
            .fold(f64::INFINITY, f64::min);
        let hi = metrics
            .iter()
            .map(|m| m[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        for (i, m) in metrics.iter().enumerate() {
            let norm = if hi > lo {
                (m[axis] - lo) / (hi - lo)
            } else {
                0.0
            };
            costs[i] += weights[axis] * norm;
        }
    }
    costs
}

/// Pick the outcome with minimum cost; costs within the relative tie
/// tolerance of the minimum form a tie set resolved by `tie_break_order`.
/// Returns the chosen policy and its immediate starts.
pub fn select_policy(
    outcomes: &[SimOutcome],
    cfg: &ScoreConfig,
) -> Result<(PolicyId, Vec<(JobId, u32)>)> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument(
            "select_policy with no outcomes".into(),
        ));
    }
    let costs: Vec<f64> = if cfg.normalize {
        normalized_costs(outcomes, cfg)
    } else {
        outcomes.iter().map(|o| score(o, cfg)).collect()
    };
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = cfg.tie_epsilon * min_cost.abs().max(1.0);
    let rank = |policy: PolicyId| {
        cfg.tie_break_order
            .iter()
            .position(|p| *p == policy)
            .unwrap_or(usize::MAX)
    };
    let chosen = costs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c - min_cost <= threshold)
        .min_by_key(|(i, _)| (rank(outcomes[*i].policy), *i))
        .map(|(i, _)| i)
        .expect("tie set contains the minimum");
    Ok((
        outcomes[chosen].policy,
        outcomes[chosen].immediate_starts.clone(),
    ))
}

/// Fold one streamed event into a mirror of the physical cluster. This is
/// the synchronization step shared by the twin and the fixed-policy
/// baseline controller; only their decision paths differ.
pub(crate) fn sync_mirror(mirror: &mut SimState, event: &Event) -> Result<IngestOutcome> {
    if event.timestamp < mirror.clock() {
        return Err(Error::Desync(format!(
            "event at {} behind mirror clock {}",
            event.timestamp,
            mirror.clock()
        )));
    }
    mirror.clock = event.timestamp;
    mirror.cluster.advance_to(event.timestamp)?;
    match event.kind {
        EventKind::Submit { nodes, walltime } => {
            let known = mirror.wait_queue().iter().any(|j| j.job_id == event.job_id)
                || mirror.running().contains_key(&event.job_id)
                || mirror
                    .completed()
                    .iter()
                    .any(|(j, _)| j.job_id == event.job_id);
            if known {
                return Err(Error::Desync(format!(
                    "duplicate submit for job {}",
                    event.job_id
                )));
            }
            let job = Job::new(event.job_id.clone(), event.timestamp, nodes, walltime);
            mirror.add_waiting(job)?;
            Ok(IngestOutcome::ScheduleNeeded)
        }
        EventKind::Run => {
            let walltime = mirror
                .wait_queue()
                .iter()
                .find(|j| j.job_id == event.job_id)
                .map(|j| j.requested_walltime)
                .ok_or_else(|| {
                    Error::Desync(format!("run event for non-waiting job {}", event.job_id))
                })?;
            mirror.record_external_start(
                &event.job_id,
                event.timestamp,
                event.timestamp + walltime,
            )?;
            Ok(IngestOutcome::NoAction)
        }
        EventKind::End => {
            mirror.record_external_end(&event.job_id, event.timestamp)?;
            Ok(IngestOutcome::ScheduleNeeded)
        }
    }
}

/// Destination for `RUN <job_id>` feedback commands.
pub trait RunCommandSink {
    fn run(&mut self, job_id: &str) -> Result<()>;
}

/// In-process sink that just collects commands; the driver drains it.
#[derive(Debug, Default)]
pub struct CommandBuffer {
    pub commands: Vec<JobId>,
}

impl RunCommandSink for CommandBuffer {
    fn run(&mut self, job_id: &str) -> Result<()> {
        self.commands.push(job_id.to_string());
        Ok(())
    }
}

/// The twin controller state: mirror, policy pool, and decision log.
#[derive(Debug, Clone)]
pub struct Twin {
    mirror: SimState,
    pool: Vec<PolicyConfig>,
    score_config: ScoreConfig,
    last_decisions: Vec<(JobId, PolicyId)>,
    dropped_commands: Vec<JobId>,
    workers: usize,
}

impl Twin {
    pub fn new(
        total_nodes: u32,
        slowdown_bound: Seconds,
        pool: Vec<PolicyConfig>,
        score_config: ScoreConfig,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::config("pool", "policy pool must be non-empty"));
        }
        score_config.validate()?;
        Ok(Twin {
            mirror: SimState::new(total_nodes, slowdown_bound),
            pool,
            score_config,
            last_decisions: Vec::new(),
            dropped_commands: Vec::new(),
            workers: 0,
        })
    }

    /// Cap concurrent what-if simulations; 0 means one thread per policy.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    /// Event budget each what-if fork inherits before it is declared
    /// runaway.
    pub fn with_event_budget(mut self, budget: u64) -> Self {
        self.mirror.set_event_budget(budget);
        self
    }

    pub fn mirror(&self) -> &SimState {
        &self.mirror
    }

    pub fn pool(&self) -> &[PolicyConfig] {
        &self.pool
    }

    pub fn score_config(&self) -> &ScoreConfig {
        &self.score_config
    }

    /// Every `(job, policy)` decision delivered so far, in emission order.
    pub fn decisions(&self) -> &[(JobId, PolicyId)] {
        &self.last_decisions
    }

    pub fn dropped_commands(&self) -> &[JobId] {
        &self.dropped_commands
    }

    /// Fold one streamed event into the mirror.
    ///
    /// Submit adds the job to the mirrored wait queue. Run records the
    /// allocation with a predicted end of `timestamp + walltime` (the
    /// completion the simulator will assume). End releases nodes at the
    /// actual end time, pulling the predicted completion back when the job
    /// under-ran its estimate and pushing it forward when it over-ran.
    pub fn ingest_event(&mut self, event: &Event) -> Result<IngestOutcome> {
        sync_mirror(&mut self.mirror, event)
    }

    /// Fork one simulation per pool policy and run each to exhaustion.
    ///
    /// Forks run on their own threads (at most `workers` at a time) and the
    /// results are assembled in pool order, so completion order never shows
    /// in the output.
    pub fn what_if(&self) -> Result<Vec<SimOutcome>> {
        self.mirror.cluster().check_accounting()?;
        let workers = if self.workers == 0 {
            self.pool.len()
        } else {
            self.workers.max(1)
        };
        let mut outcomes = Vec::with_capacity(self.pool.len());
        for chunk in self.pool.chunks(workers) {
            let chunk_results: Vec<Result<SimOutcome>> = thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|cfg| {
                        let mirror = &self.mirror;
                        scope.spawn(move || {
                            let mut fork = mirror.fork_for_what_if();
                            fork.run_to_exhaustion(cfg)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("what-if worker panicked"))
                    .collect()
            });
            for result in chunk_results {
                outcomes.push(result?);
            }
        }
        Ok(outcomes)
    }

    /// One full control cycle: ingest the event and, when it opens a
    /// scheduling opportunity, run the what-if fan-out, select a policy, and
    /// emit one run command per immediate start. A failed delivery is
    /// retried once, then logged and dropped; the mirror recovers via
    /// resync on the next desync detection.
    pub fn cycle(
        &mut self,
        event: &Event,
        sink: &mut dyn RunCommandSink,
    ) -> Result<Vec<(JobId, PolicyId)>> {
        match self.ingest_event(event)? {
            IngestOutcome::NoAction => Ok(Vec::new()),
            IngestOutcome::ScheduleNeeded => {
                let outcomes = self.what_if()?;
                let (policy, starts) = select_policy(&outcomes, &self.score_config)?;
                let mut emitted = Vec::new();
                for (job_id, _nodes) in starts {
                    match sink.run(&job_id).or_else(|_| sink.run(&job_id)) {
                        Ok(()) => {
                            self.last_decisions.push((job_id.clone(), policy));
                            emitted.push((job_id, policy));
                        }
                        Err(err) => {
                            eprintln!("run command for {job_id} dropped after retry: {err}");
                            self.dropped_commands.push(job_id);
                        }
                    }
                }
                Ok(emitted)
            }
        }
    }

    /// Rebuild the mirror from an authoritative snapshot. An inconsistent
    /// snapshot is rejected and the prior mirror kept.
    pub fn resync(&mut self, authoritative: &ClusterState, waiting: &[Job]) -> Result<()> {
        self.mirror.resync(authoritative, waiting)
    }
}
