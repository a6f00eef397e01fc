//! Command-line experiment driver.
//!
//! Subcommands: `generate` emits a trace file, `run` executes one
//! experiment, `compare` runs every baseline plus the twin on one trace,
//! and `replay` feeds a recorded event stream back through the twin. With
//! no config file, defaults reproduce the stock setup: a 32-node cluster,
//! the four-phase 150-job synthetic trace, and a WFP/FCFS/SJF pool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use simsched_core::{
    attribution_table, emit_report, load_trace, read_stream_file, replay_stream, report_cost,
    run_experiment_recorded, write_swf, ExperimentConfig, Mode, PolicyId,
};

#[derive(Parser)]
#[command(
    name = "simsched",
    version,
    about = "Closed-loop batch scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); defaults reproduce the stock setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the synthetic trace seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cap on concurrent what-if simulations (0 = one per policy).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured trace as an SWF file.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one experiment (mode taken from the config).
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Record the event stream to this file (twin mode).
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run every pool baseline plus the twin on the same trace.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Feed a recorded event stream through the twin and report decisions.
    Replay {
        #[command(flatten)]
        common: CommonArgs,
        /// Recorded stream file from `run --record`.
        #[arg(long)]
        stream: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        if cfg.seed().is_none() {
            eprintln!("warning: --seed has no effect on file traces");
        }
        cfg.set_seed(seed);
    }
    if let Some(workers) = common.workers {
        cfg.what_if_workers = workers;
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(common.out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, common: &CommonArgs) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| common.out.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn print_report_line(method: &str, report: &simsched_core::RunReport, cost: f64) {
    println!(
        "{method:>6}: avg_wait {:>8.2}s  max_wait {:>6}s  avg_sd {:>6.3}  max_sd {:>8.3}  util {:>5.3}  makespan {:>6}s  cost {:>9.3}",
        report.avg_wait,
        report.max_wait,
        report.avg_slowdown,
        report.max_slowdown,
        report.utilization,
        report.makespan,
        cost,
    );
}

fn cmd_generate(common: CommonArgs) -> Result<()> {
    let cfg = load_config(&common)?;
    cfg.validate()?;
    let dir = out_dir(&cfg, &common)?;
    let trace = load_trace(&cfg)?;
    let path = dir.join("trace.swf");
    write_swf(&path, &trace)?;
    println!("wrote {} jobs to {}", trace.len(), path.display());
    Ok(())
}

fn cmd_run(common: CommonArgs, record: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&cfg, &common)?;
    let run = run_experiment_recorded(&cfg, record.as_deref())?;
    let path = dir.join(format!("{}.report", run.method));
    emit_report(&run.report, &path)?;
    print_report_line(
        &run.method,
        &run.report,
        report_cost(&run.report, &cfg.score),
    );
    if matches!(cfg.mode, Mode::Twin) {
        print_attribution(&attribution_table(&run.report));
    }
    if run.resyncs > 0 {
        println!("resyncs: {}", run.resyncs);
    }
    println!("report: {}", path.display());
    if let Some(record) = record {
        println!("stream: {}", record.display());
    }
    Ok(())
}

fn print_attribution(table: &BTreeMap<PolicyId, f64>) {
    let parts: Vec<String> = table
        .iter()
        .map(|(p, pct)| format!("{p} {pct:.2}%"))
        .collect();
    println!("policy mix: {}", parts.join("  "));
}

fn cmd_compare(common: CommonArgs) -> Result<()> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&cfg, &common)?;
    let output = simsched_core::compare(&cfg)?;
    for (method, report) in &output.reports {
        emit_report(report, dir.join(format!("{method}.report")))?;
        print_report_line(method, report, output.costs[method]);
    }
    println!();
    for (method, area) in &output.areas {
        println!("{method:>6}: radar area {area:.3}");
    }
    print_attribution(&output.twin_attribution);

    let summary = serde_json::json!({
        "seed": cfg.seed(),
        "areas": output.areas,
        "costs": output.costs,
        "twin_attribution": output.twin_attribution,
    });
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, format!("{summary:#}\n"))
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!("\nreports and summary.json in {}", dir.display());
    Ok(())
}

fn cmd_replay(common: CommonArgs, stream: &Path) -> Result<()> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&cfg, &common)?;
    let records = read_stream_file(stream)?;
    let decisions = replay_stream(&cfg, &records)?;
    let path = dir.join("replay_decisions.csv");
    let mut text = String::from("job_id,policy\n");
    for (job, policy) in &decisions {
        text.push_str(&format!("{job},{policy}\n"));
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "replayed {} records -> {} decisions ({})",
        records.len(),
        decisions.len(),
        path.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Run { common, record } => cmd_run(common, record),
        Command::Compare { common } => cmd_compare(common),
        Command::Replay { common, stream } => {
            if !stream.exists() {
                bail!("stream file {} does not exist", stream.display());
            }
            cmd_replay(common, &stream)
        }
    }
}
