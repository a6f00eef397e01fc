//! Workload provisioning: a phased synthetic trace generator and a Standard
//! Workload Format reader/writer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Job, Seconds, TraceJob};

/// One phase of the synthetic workload: `count` jobs drawing nodes and
/// walltime uniformly from inclusive ranges. True runtime is the walltime
/// scaled by a draw from `runtime_fraction`, so jobs finish at or before
/// their estimate and exercise the predicted-end pull-back path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub count: u32,
    pub nodes: (u32, u32),
    pub walltime: (Seconds, Seconds),
    #[serde(default = "default_runtime_fraction")]
    pub runtime_fraction: (f64, f64),
}

fn default_runtime_fraction() -> (f64, f64) {
    (0.6, 1.0)
}

impl PhaseSpec {
    pub fn new(count: u32, nodes: (u32, u32), walltime: (Seconds, Seconds)) -> Self {
        PhaseSpec {
            count,
            nodes,
            walltime,
            runtime_fraction: default_runtime_fraction(),
        }
    }

    fn validate(&self, index: usize, total_nodes: u32) -> Result<()> {
        let field = |name: &str| format!("phases[{index}].{name}");
        if self.nodes.0 < 1 || self.nodes.0 > self.nodes.1 {
            return Err(Error::config(
                &field("nodes"),
                "range must satisfy 1 <= lo <= hi",
            ));
        }
        if self.nodes.1 > total_nodes {
            return Err(Error::config(
                &field("nodes"),
                format!(
                    "upper bound {} exceeds cluster size {total_nodes}",
                    self.nodes.1
                ),
            ));
        }
        if self.walltime.0 < 1 || self.walltime.0 > self.walltime.1 {
            return Err(Error::config(
                &field("walltime"),
                "range must satisfy 1 <= lo <= hi",
            ));
        }
        let (flo, fhi) = self.runtime_fraction;
        if !(flo > 0.0 && flo <= fhi && fhi <= 1.0) {
            return Err(Error::config(
                &field("runtime_fraction"),
                "range must satisfy 0 < lo <= hi <= 1",
            ));
        }
        Ok(())
    }
}

/// Default inter-arrival gap between consecutive submissions.
pub const DEFAULT_INTERARRIVAL: Seconds = 5;

/// The default four-phase mix: a small-job warm-up, a burst of large long
/// jobs, a steady medium phase, and a short-job tail.
pub fn default_phases() -> Vec<PhaseSpec> {
    vec![
        PhaseSpec::new(25, (2, 4), (60, 180)),
        PhaseSpec::new(35, (16, 20), (500, 700)),
        PhaseSpec::new(40, (6, 8), (200, 300)),
        PhaseSpec::new(50, (2, 4), (60, 180)),
    ]
}

/// Generate the synthetic trace: job `i` submits at `i * interarrival`, and
/// per-job values draw from the seeded generator, so a fixed seed yields a
/// fixed trace.
pub fn generate_synthetic(
    phases: &[PhaseSpec],
    interarrival: Seconds,
    seed: u64,
    total_nodes: u32,
) -> Result<Vec<TraceJob>> {
    if phases.is_empty() {
        return Err(Error::config("phases", "at least one phase is required"));
    }
    if interarrival == 0 {
        return Err(Error::config("interarrival", "must be >= 1 second"));
    }
    for (i, phase) in phases.iter().enumerate() {
        phase.validate(i, total_nodes)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut index: u64 = 0;
    for phase in phases {
        for _ in 0..phase.count {
            let nodes = rng.random_range(phase.nodes.0..=phase.nodes.1);
            let walltime = rng.random_range(phase.walltime.0..=phase.walltime.1);
            let fraction = rng.random_range(phase.runtime_fraction.0..=phase.runtime_fraction.1);
            let true_runtime = ((walltime as f64 * fraction).round() as Seconds).max(1);
            trace.push(TraceJob {
                job: Job::new(
                    format!("j{:04}", index + 1),
                    index * interarrival,
                    nodes,
                    walltime,
                ),
                true_runtime,
            });
            index += 1;
        }
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Standard Workload Format
// ---------------------------------------------------------------------------

/// Parse result with the count of rows skipped for unusable fields.
#[derive(Debug)]
pub struct SwfParse {
    pub jobs: Vec<TraceJob>,
    pub skipped_rows: usize,
}

/// Read an SWF trace. Columns used: 1 job id, 2 submit time, 4 run time,
/// 5/8 processors (requested preferred, allocated as fallback), 9 requested
/// time (falling back to the run time when absent). Rows with non-positive
/// runtime or processors are skipped and counted.
pub fn read_swf(path: impl AsRef<Path>) -> Result<Vec<TraceJob>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_swf(
        BufReader::new(file)
            .lines()
            .map(|l| l.map_err(|e| Error::io(path, e))),
    )?;
    if parsed.skipped_rows > 0 {
        eprintln!(
            "{}: skipped {} unusable rows",
            path.display(),
            parsed.skipped_rows
        );
    }
    Ok(parsed.jobs)
}

pub fn parse_swf<I>(lines: I) -> Result<SwfParse>
where
    I: IntoIterator<Item = Result<String>>,
{
    let mut jobs = Vec::new();
    let mut skipped = 0usize;
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 9 {
            skipped += 1;
            continue;
        }
        let int = |i: usize| fields[i].parse::<i64>().ok();
        let job_id = fields[0].to_string();
        let (Some(submit), Some(run_time)) = (int(1), int(3)) else {
            skipped += 1;
            continue;
        };
        let allocated = int(4).unwrap_or(-1);
        let requested = int(7).unwrap_or(-1);
        let processors = if requested > 0 { requested } else { allocated };
        let requested_time = int(8).unwrap_or(-1);
        if submit < 0 || run_time <= 0 || processors <= 0 {
            skipped += 1;
            continue;
        }
        let walltime = if requested_time > 0 {
            requested_time as Seconds
        } else {
            run_time as Seconds
        };
        jobs.push(TraceJob {
            job: Job::new(job_id, submit as Seconds, processors as u32, walltime),
            true_runtime: run_time as Seconds,
        });
    }
    if jobs.is_empty() {
        return Err(Error::EmptyTrace { skipped });
    }
    jobs.sort_by(|a, b| {
        a.job
            .submit_time
            .cmp(&b.job.submit_time)
            .then_with(|| a.job.job_id.cmp(&b.job.job_id))
    });
    Ok(SwfParse {
        jobs,
        skipped_rows: skipped,
    })
}

/// Write a trace in SWF layout (18 whitespace-separated columns, unused
/// fields as -1). `read_swf` inverts this on the fields it uses.
pub fn write_swf(path: impl AsRef<Path>, trace: &[TraceJob]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(writer, "; jobs: {}", trace.len())?;
        for entry in trace {
            let job = &entry.job;
            writeln!(
                writer,
                "{} {} -1 {} {} -1 -1 {} {} -1 -1 -1 -1 -1 -1 -1 -1 -1",
                job.job_id,
                job.submit_time,
                entry.true_runtime,
                job.requested_nodes,
                job.requested_nodes,
                job.requested_walltime,
            )?;
        }
        writer.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
