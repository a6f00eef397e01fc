//! Post-run aggregation: report assembly, utilization, radar (Kiviat)
//! areas, per-policy attribution, and report file emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::ScoreConfig;
use crate::types::{slowdown, Job, JobId, JobState, PolicyId, Seconds};

pub const REPORT_CSV_HEADER: &str = "job_id,submit,start,end,nodes,wait,slowdown,started_by";

/// One completed job's row in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRow {
    pub job_id: JobId,
    pub submit: Seconds,
    pub start: Seconds,
    pub end: Seconds,
    pub nodes: u32,
    pub wait: Seconds,
    pub slowdown: f64,
    pub started_by: PolicyId,
}

/// Aggregated result of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub per_job: Vec<JobRow>,
    pub avg_wait: f64,
    pub max_wait: Seconds,
    pub avg_slowdown: f64,
    pub max_slowdown: f64,
    pub utilization: f64,
    pub makespan: Seconds,
    /// Fraction of started jobs attributed to each policy.
    pub policy_mix: BTreeMap<PolicyId, f64>,
}

/// Assemble a report from completed jobs and their start attributions.
/// The horizon is `[first submit, last completion]`.
pub fn build_report(
    jobs: &[(Job, PolicyId)],
    total_nodes: u32,
    slowdown_bound: Seconds,
) -> Result<RunReport> {
    let mut per_job = Vec::with_capacity(jobs.len());
    let mut counts: BTreeMap<PolicyId, usize> = BTreeMap::new();
    let mut max_wait = 0;
    let mut sum_wait: u128 = 0;
    let mut max_slowdown: f64 = 0.0;
    let mut sum_slowdown = 0.0;
    for (job, started_by) in jobs {
        if job.state != JobState::Completed {
            return Err(Error::InvalidArgument(format!(
                "report over non-completed job {}",
                job.job_id
            )));
        }
        let start = job.start_time.expect("completed job");
        let end = job.end_time.expect("completed job");
        let wait = start - job.submit_time;
        let sd = slowdown(wait, (end - start).max(1), slowdown_bound)?;
        per_job.push(JobRow {
            job_id: job.job_id.clone(),
            submit: job.submit_time,
            start,
            end,
            nodes: job.requested_nodes,
            wait,
            slowdown: sd,
            started_by: *started_by,
        });
        *counts.entry(*started_by).or_insert(0) += 1;
        max_wait = max_wait.max(wait);
        sum_wait += u128::from(wait);
        max_slowdown = max_slowdown.max(sd);
        sum_slowdown += sd;
    }
    let n = per_job.len();
    let (avg_wait, avg_slowdown) = if n > 0 {
        (sum_wait as f64 / n as f64, sum_slowdown / n as f64)
    } else {
        (0.0, 0.0)
    };
    let policy_mix = counts
        .into_iter()
        .map(|(p, c)| (p, c as f64 / n as f64))
        .collect();
    let (utilization, makespan) = if n > 0 {
        let t0 = per_job.iter().map(|r| r.submit).min().unwrap();
        let t1 = per_job.iter().map(|r| r.end).max().unwrap();
        let jobs_only: Vec<Job> = jobs.iter().map(|(j, _)| j.clone()).collect();
        let util = if t1 > t0 {
            utilization(&jobs_only, total_nodes, (t0, t1))?
        } else {
            0.0
        };
        (util, t1 - t0)
    } else {
        (0.0, 0)
    };
    Ok(RunReport {
        per_job,
        avg_wait,
        max_wait,
        avg_slowdown,
        max_slowdown,
        utilization,
        makespan,
        policy_mix,
    })
}

/// Node-seconds consumed inside the horizon divided by node-seconds
/// available: `sum(nodes * overlap(run, horizon)) / (total * (t1 - t0))`.
pub fn utilization(jobs: &[Job], total_nodes: u32, horizon: (Seconds, Seconds)) -> Result<f64> {
    let (t0, t1) = horizon;
    if t1 <= t0 {
        return Err(Error::InvalidArgument(format!(
            "utilization horizon [{t0}, {t1}] is empty"
        )));
    }
    if total_nodes == 0 {
        return Err(Error::InvalidArgument("utilization with zero nodes".into()));
    }
    let mut busy: u128 = 0;
    for job in jobs {
        let (Some(start), Some(end)) = (job.start_time, job.end_time) else {
            return Err(Error::InvalidArgument(format!(
                "utilization over non-completed job {}",
                job.job_id
            )));
        };
        let lo = start.max(t0);
        let hi = end.min(t1);
        if hi > lo {
            busy += u128::from(hi - lo) * u128::from(job.requested_nodes);
        }
    }
    Ok(busy as f64 / (u128::from(total_nodes) * u128::from(t1 - t0)) as f64)
}

/// The five radar axes in their fixed order.
const RADAR_AXES: usize = 5;

fn radar_metrics(report: &RunReport) -> [f64; RADAR_AXES] {
    [
        report.avg_wait,
        report.max_wait as f64,
        report.avg_slowdown,
        report.max_slowdown,
        report.utilization,
    ]
}

/// Kiviat areas over five axes (avg wait, max wait, avg slowdown, max
/// slowdown, utilization). Each axis is min-max normalized across methods;
/// cost axes are inverted so a larger radius is better everywhere. A method
/// worst on every axis collapses to area zero; best on every axis closes
/// the full pentagon.
pub fn radar_area(reports: &BTreeMap<String, RunReport>) -> Result<BTreeMap<String, f64>> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(
            "radar areas need at least two methods to normalize across".into(),
        ));
    }
    let metrics: BTreeMap<&String, [f64; RADAR_AXES]> = reports
        .iter()
        .map(|(name, r)| (name, radar_metrics(r)))
        .collect();
    let mut radii: BTreeMap<&String, [f64; RADAR_AXES]> = BTreeMap::new();
    for axis in 0..RADAR_AXES {
        let lo = metrics
            .values()
            .map(|m| m[axis])
            .fold(f64::INFINITY, f64::min);
        let hi = metrics
            .values()
            .map(|m| m[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        for (name, m) in &metrics {
            let r = if hi > lo {
                let norm = (m[axis] - lo) / (hi - lo);
                // Utilization is the only larger-is-better axis.
                if axis == 4 {
                    norm
                } else {
                    1.0 - norm
                }
            } else {
                1.0
            };
            radii.entry(name).or_insert([0.0; RADAR_AXES])[axis] = r;
        }
    }
    let wedge = 0.5 * (2.0 * std::f64::consts::PI / RADAR_AXES as f64).sin();
    Ok(radii
        .into_iter()
        .map(|(name, r)| {
            let area: f64 = (0..RADAR_AXES)
                .map(|i| r[i] * r[(i + 1) % RADAR_AXES])
                .sum::<f64>()
                * wedge;
            (name.clone(), area)
        })
        .collect())
}

/// Percentage of started jobs attributed to each policy.
pub fn attribution_table(report: &RunReport) -> BTreeMap<PolicyId, f64> {
    report
        .policy_mix
        .iter()
        .map(|(p, f)| (*p, f * 100.0))
        .collect()
}

/// Report-level cost under a score config: the same weighted sum the twin
/// minimizes per cycle, applied to the run's final aggregates.
pub fn report_cost(report: &RunReport, cfg: &ScoreConfig) -> f64 {
    cfg.w_max_wait * report.max_wait as f64
        + cfg.w_max_slowdown * report.max_slowdown
        + cfg.w_avg_wait * report.avg_wait
        + cfg.w_avg_slowdown * report.avg_slowdown
}

/// Report-level costs under the configured objective, evaluated jointly:
/// when the score normalizes, each of the four metrics is min-max scaled
/// across the methods before weighting, mirroring what selection does per
/// cycle. Without normalization this is just [`report_cost`] per method.
pub fn report_costs(
    reports: &BTreeMap<String, RunReport>,
    cfg: &ScoreConfig,
) -> BTreeMap<String, f64> {
    if !cfg.normalize {
        return reports
            .iter()
            .map(|(name, r)| (name.clone(), report_cost(r, cfg)))
            .collect();
    }
    let metrics: BTreeMap<&String, [f64; 4]> = reports
        .iter()
        .map(|(name, r)| {
            (
                name,
                [
                    r.max_wait as f64,
                    r.max_slowdown,
                    r.avg_wait,
                    r.avg_slowdown,
                ],
            )
        })
        .collect();
    let weights = [
        cfg.w_max_wait,
        cfg.w_max_slowdown,
        cfg.w_avg_wait,
        cfg.w_avg_slowdown,
    ];
    let mut costs: BTreeMap<String, f64> = reports.keys().map(|name| (name.clone(), 0.0)).collect();
    for axis in 0..4 {
        let lo = metrics
            .values()
            .map(|m| m[axis])
            .fold(f64::INFINITY, f64::min);
        let hi = metrics
            .values()
            .map(|m| m[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (name, m) in &metrics {
                *costs.get_mut(name.as_str()).unwrap() +=
                    weights[axis] * (m[axis] - lo) / (hi - lo);
            }
        }
    }
    costs
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryWire {
    avg_wait: f64,
    max_wait: Seconds,
    avg_slowdown: f64,
    max_slowdown: f64,
    utilization: f64,
    makespan: Seconds,
    policy_mix: BTreeMap<PolicyId, f64>,
}

/// Write the report: one JSON summary line, then the per-job table as CSV
/// with a fixed header.
pub fn emit_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let summary = SummaryWire {
        avg_wait: report.avg_wait,
        max_wait: report.max_wait,
        avg_slowdown: report.avg_slowdown,
        max_slowdown: report.max_slowdown,
        utilization: report.utilization,
        makespan: report.makespan,
        policy_mix: report.policy_mix.clone(),
    };
    let mut emit = || -> std::io::Result<()> {
        writeln!(
            writer,
            "{}",
            serde_json::to_string(&summary).expect("summary serializes")
        )?;
        writeln!(writer, "{REPORT_CSV_HEADER}")?;
        for row in &report.per_job {
            writeln!(
                writer,
                "{},{},{},{},{},{},{},{}",
                row.job_id,
                row.submit,
                row.start,
                row.end,
                row.nodes,
                row.wait,
                row.slowdown,
                row.started_by
            )?;
        }
        writer.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Parse a report file written by [`emit_report`].
pub fn parse_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let summary_line = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty report", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let summary: SummaryWire =
        serde_json::from_str(&summary_line).map_err(|e| Error::Parse(e.to_string()))?;
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: missing table header", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    if header != REPORT_CSV_HEADER {
        return Err(Error::Parse(format!("unexpected table header `{header}`")));
    }
    let mut per_job = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Parse(format!("bad row `{line}`")));
        }
        let parse_u64 = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad integer `{s}` in `{line}`")))
        };
        per_job.push(JobRow {
            job_id: cols[0].to_string(),
            submit: parse_u64(cols[1])?,
            start: parse_u64(cols[2])?,
            end: parse_u64(cols[3])?,
            nodes: parse_u64(cols[4])? as u32,
            wait: parse_u64(cols[5])?,
            slowdown: cols[6]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad float `{}` in `{line}`", cols[6])))?,
            started_by: cols[7].parse()?,
        });
    }
    Ok(RunReport {
        per_job,
        avg_wait: summary.avg_wait,
        max_wait: summary.max_wait,
        avg_slowdown: summary.avg_slowdown,
        max_slowdown: summary.max_slowdown,
        utilization: summary.utilization,
        makespan: summary.makespan,
        policy_mix: summary.policy_mix,
    })
}
