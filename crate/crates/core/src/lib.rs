//! simsched-core — a desk-scale, fully closed loop for adaptive batch
//! scheduling driven by what-if simulation.
//!
//! An emulated cluster publishes job events onto an append-only stream; a
//! twin controller mirrors cluster state from those events, forks one
//! discrete-event simulation per candidate policy, scores the predicted
//! outcomes, and feeds the winner's immediate job starts back as run
//! commands. Fixed-policy baselines close the same loop with a single
//! scheduling instance per event, so adaptive and static scheduling are
//! compared on identical machinery.
//!
//! ```text
//! ┌──────────┐ submit/run/end ┌────────────┐ what-if forks ┌─────────────┐
//! │ Emulator │───────────────▶│   Stream   │──────────────▶│    Twin     │
//! │ (truth)  │                │ (ordered,  │               │ mirror+pool │
//! │          │◀───────────────│  replayable│◀──────────────│ score+pick  │
//! └──────────┘  RUN <job_id>  └────────────┘               └─────────────┘
//! ```
//!
//! Time is integral seconds and every virtual-time run is bit-reproducible:
//! identical config and seed give identical reports, independent of the
//! what-if worker count.

pub mod des;
pub mod emulator;
pub mod error;
pub mod experiment;
pub mod policy;
pub mod report;
pub mod stream;
pub mod twin;
pub mod types;
pub mod workload;

pub use des::{SimOutcome, SimState, DEFAULT_EVENT_BUDGET};
pub use emulator::{ClockMode, Emulator};
pub use error::{Error, Result};
pub use experiment::{
    compare, load_trace, replay_stream, run_experiment, run_experiment_recorded, CompareOutput,
    ExperimentConfig, ExperimentRun, Mode, TraceSource,
};
pub use policy::{order_queue, schedule_instance, InstanceOutcome, PolicyConfig, Reservation};
pub use report::{
    attribution_table, build_report, emit_report, parse_report, radar_area, report_cost,
    report_costs, utilization, JobRow, RunReport,
};
pub use stream::{
    read_stream_file, validate_stream, FileStreamReader, FileStreamWriter, InMemoryStream,
    ReadOutcome, RunCommandClient, RunCommandServer, SocketStreamClient, SocketStreamServer,
    StreamConsumer, StreamProducer, StreamRecord,
};
pub use twin::{
    score, select_policy, CommandBuffer, IngestOutcome, RunCommandSink, ScoreConfig, Twin,
};
pub use types::{
    slowdown, Allocation, ClusterState, Event, EventKind, Job, JobId, JobMetrics, JobState,
    PolicyId, Seconds, TraceJob, DEFAULT_SLOWDOWN_BOUND,
};
pub use workload::{default_phases, generate_synthetic, read_swf, write_swf, PhaseSpec};
