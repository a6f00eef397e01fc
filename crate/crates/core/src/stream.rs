//! Append-only, ordered event transport between the cluster (producer) and
//! the twin (consumer).
//!
//! Three backends share one record model: an in-process buffer for closed
//! loops, a newline-delimited file log for recording and replay, and a TCP
//! socket framing one record per line for external producers. The wire
//! schema is fixed: one JSON object per line with `offset`, `ts`, `kind`,
//! `job`, and for submits only `nodes` and `walltime`. True runtimes are
//! never serialized on this stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Event, EventKind, JobId};

/// One immutable entry in a stream: a gap-free offset plus the event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRecord {
    pub offset: u64,
    pub event: Event,
}

/// Result of a blocking read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadOutcome {
    Record(StreamRecord),
    /// Nothing arrived within the timeout; the stream is still open.
    Timeout,
    /// The stream is closed and holds no record at the requested offset.
    EndOfStream,
}

pub trait StreamProducer {
    /// Append the event, returning its assigned offset.
    fn append(&mut self, event: Event) -> Result<u64>;
    /// Mark the stream complete; readers past the end see end-of-stream.
    fn close(&mut self) -> Result<()>;
}

pub trait StreamConsumer {
    /// Return the record at `from_offset`, waiting up to `timeout` for it.
    fn read_blocking(&mut self, from_offset: u64, timeout: Duration) -> Result<ReadOutcome>;
}

// ---------------------------------------------------------------------------
// Wire schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    offset: u64,
    ts: u64,
    kind: String,
    job: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    walltime: Option<u64>,
}

/// Serialize a record to its wire line (no trailing newline).
pub fn record_to_line(record: &StreamRecord) -> String {
    let (nodes, walltime) = match record.event.kind {
        EventKind::Submit { nodes, walltime } => (Some(nodes), Some(walltime)),
        _ => (None, None),
    };
    let wire = WireRecord {
        offset: record.offset,
        ts: record.event.timestamp,
        kind: record.event.kind_name().to_string(),
        job: record.event.job_id.clone(),
        nodes,
        walltime,
    };
    serde_json::to_string(&wire).expect("wire record serializes")
}

/// Parse one wire line back into a record.
pub fn line_to_record(line: &str) -> Result<StreamRecord> {
    let wire: WireRecord =
        serde_json::from_str(line).map_err(|e| Error::Parse(format!("{e}: {line}")))?;
    let kind = match wire.kind.as_str() {
        "submit" => {
            let nodes = wire
                .nodes
                .ok_or_else(|| Error::Parse(format!("submit without nodes: {line}")))?;
            let walltime = wire
                .walltime
                .ok_or_else(|| Error::Parse(format!("submit without walltime: {line}")))?;
            EventKind::Submit { nodes, walltime }
        }
        "run" | "end" => {
            if wire.nodes.is_some() || wire.walltime.is_some() {
                return Err(Error::Parse(format!(
                    "{} event must not carry request fields: {line}",
                    wire.kind
                )));
            }
            if wire.kind == "run" {
                EventKind::Run
            } else {
                EventKind::End
            }
        }
        other => return Err(Error::Parse(format!("unknown event kind `{other}`"))),
    };
    Ok(StreamRecord {
        offset: wire.offset,
        event: Event {
            timestamp: wire.ts,
            job_id: wire.job,
            kind,
        },
    })
}

/// Check stream-level invariants: gap-free offsets from zero, non-decreasing
/// timestamps, and per-job submit -> run -> end legality.
pub fn validate_stream(records: &[StreamRecord]) -> Result<()> {
    let mut last_ts = 0u64;
    let mut seen: std::collections::BTreeMap<&str, u8> = std::collections::BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        if record.offset != i as u64 {
            return Err(Error::Parse(format!(
                "offset {} at position {i} breaks the gap-free sequence",
                record.offset
            )));
        }
        if record.event.timestamp < last_ts {
            return Err(Error::Parse(format!(
                "timestamp {} at offset {} decreases (previous {})",
                record.event.timestamp, record.offset, last_ts
            )));
        }
        last_ts = record.event.timestamp;
        let stage = seen.entry(record.event.job_id.as_str()).or_insert(0);
        let expected = match record.event.kind {
            EventKind::Submit { .. } => 0,
            EventKind::Run => 1,
            EventKind::End => 2,
        };
        if *stage != expected {
            return Err(Error::Parse(format!(
                "job {}: {} event out of order",
                record.event.job_id,
                record.event.kind_name()
            )));
        }
        *stage += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// In-memory backend
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct SharedLog {
    records: Vec<StreamRecord>,
    closed: bool,
}

/// In-process log. Handles are cheap clones over the same log; producers and
/// consumers may live on different threads.
#[derive(Debug, Clone, Default)]
pub struct InMemoryStream {
    inner: Arc<(Mutex<SharedLog>, Condvar)>,
}

impl InMemoryStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.0.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of everything appended so far.
    pub fn records(&self) -> Vec<StreamRecord> {
        self.inner.0.lock().unwrap().records.clone()
    }
}

impl StreamProducer for InMemoryStream {
    fn append(&mut self, event: Event) -> Result<u64> {
        let (lock, cvar) = &*self.inner;
        let mut log = lock.lock().unwrap();
        if log.closed {
            return Err(Error::StreamClosed);
        }
        let offset = log.records.len() as u64;
        log.records.push(StreamRecord { offset, event });
        cvar.notify_all();
        Ok(offset)
    }

    fn close(&mut self) -> Result<()> {
        let (lock, cvar) = &*self.inner;
        lock.lock().unwrap().closed = true;
        cvar.notify_all();
        Ok(())
    }
}

impl StreamConsumer for InMemoryStream {
    fn read_blocking(&mut self, from_offset: u64, timeout: Duration) -> Result<ReadOutcome> {
        let (lock, cvar) = &*self.inner;
        let deadline = Instant::now() + timeout;
        let mut log = lock.lock().unwrap();
        loop {
            if let Some(record) = log.records.get(from_offset as usize) {
                return Ok(ReadOutcome::Record(record.clone()));
            }
            if log.closed {
                return Ok(ReadOutcome::EndOfStream);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(ReadOutcome::Timeout);
            }
            let (guard, wait) = cvar.wait_timeout(log, deadline - now).unwrap();
            log = guard;
            if wait.timed_out() && log.records.len() as u64 <= from_offset && !log.closed {
                return Ok(ReadOutcome::Timeout);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// File backend
// ---------------------------------------------------------------------------

/// Writer half of the file-backed log: one wire line per record, flushed on
/// every append.
#[derive(Debug)]
pub struct FileStreamWriter {
    writer: BufWriter<File>,
    path: PathBuf,
    next_offset: u64,
    closed: bool,
}

impl FileStreamWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(FileStreamWriter {
            writer: BufWriter::new(file),
            path,
            next_offset: 0,
            closed: false,
        })
    }
}

impl StreamProducer for FileStreamWriter {
    fn append(&mut self, event: Event) -> Result<u64> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        let offset = self.next_offset;
        let line = record_to_line(&StreamRecord { offset, event });
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.next_offset += 1;
        Ok(offset)
    }

    fn close(&mut self) -> Result<()> {
        self.closed = true;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Load a complete recorded stream, validating the offset sequence.
pub fn read_stream_file(path: impl AsRef<Path>) -> Result<Vec<StreamRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(line_to_record(&line)?);
    }
    for (i, record) in records.iter().enumerate() {
        if record.offset != i as u64 {
            return Err(Error::Parse(format!(
                "{}: offset {} at line {} breaks the sequence",
                path.display(),
                record.offset,
                i + 1
            )));
        }
    }
    Ok(records)
}

/// Reader over a recorded file: a file is a closed stream, so a read past
/// the end is end-of-stream, never a timeout.
#[derive(Debug)]
pub struct FileStreamReader {
    records: Vec<StreamRecord>,
}

impl FileStreamReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(FileStreamReader {
            records: read_stream_file(path)?,
        })
    }

    pub fn records(&self) -> &[StreamRecord] {
        &self.records
    }
}

impl StreamConsumer for FileStreamReader {
    fn read_blocking(&mut self, from_offset: u64, _timeout: Duration) -> Result<ReadOutcome> {
        Ok(match self.records.get(from_offset as usize) {
            Some(record) => ReadOutcome::Record(record.clone()),
            None => ReadOutcome::EndOfStream,
        })
    }
}

// ---------------------------------------------------------------------------
// Socket backend
// ---------------------------------------------------------------------------

/// Producer half over TCP: frames one record per line.
#[derive(Debug)]
pub struct SocketStreamClient {
    stream: TcpStream,
    next_offset: u64,
    closed: bool,
}

impl SocketStreamClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("socket", e))?;
        Ok(SocketStreamClient {
            stream,
            next_offset: 0,
            closed: false,
        })
    }
}

impl StreamProducer for SocketStreamClient {
    fn append(&mut self, event: Event) -> Result<u64> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        let offset = self.next_offset;
        let mut line = record_to_line(&StreamRecord { offset, event });
        line.push('\n');
        self.stream
            .write_all(line.as_bytes())
            .map_err(|e| Error::io("socket", e))?;
        self.next_offset += 1;
        Ok(offset)
    }

    fn close(&mut self) -> Result<()> {
        self.closed = true;
        self.stream
            .shutdown(std::net::Shutdown::Write)
            .map_err(|e| Error::io("socket", e))
    }
}

/// Consumer half over TCP: accepts one producer connection and buffers its
/// records; reads see the same ordered, gap-free log as the other backends.
#[derive(Debug)]
pub struct SocketStreamServer {
    log: InMemoryStream,
    local_addr: SocketAddr,
}

impl SocketStreamServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("socket", e))?;
        let local_addr = listener.local_addr().map_err(|e| Error::io("socket", e))?;
        let log = InMemoryStream::new();
        let mut writer = log.clone();
        thread::spawn(move || {
            let Ok((conn, _)) = listener.accept() else {
                let _ = writer.close();
                return;
            };
            let reader = BufReader::new(conn);
            let mut expected = 0u64;
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match line_to_record(&line) {
                    Ok(record) if record.offset == expected => {
                        expected += 1;
                        if writer.append(record.event).is_err() {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            let _ = writer.close();
        });
        Ok(SocketStreamServer { log, local_addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

impl StreamConsumer for SocketStreamServer {
    fn read_blocking(&mut self, from_offset: u64, timeout: Duration) -> Result<ReadOutcome> {
        self.log.read_blocking(from_offset, timeout)
    }
}

// ---------------------------------------------------------------------------
// Run-command line protocol (`RUN <job_id>`)
// ---------------------------------------------------------------------------

/// Client side of the feedback channel: writes `RUN <job_id>` lines.
#[derive(Debug)]
pub struct RunCommandClient {
    stream: TcpStream,
}

impl RunCommandClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("socket", e))?;
        Ok(RunCommandClient { stream })
    }
}

impl crate::twin::RunCommandSink for RunCommandClient {
    fn run(&mut self, job_id: &str) -> Result<()> {
        self.stream
            .write_all(format!("RUN {job_id}\n").as_bytes())
            .map_err(|e| Error::io("socket", e))
    }
}

/// Server side of the feedback channel: parses incoming `RUN` lines and
/// hands the job ids to the emulator via a channel.
#[derive(Debug)]
pub struct RunCommandServer {
    receiver: mpsc::Receiver<JobId>,
    local_addr: SocketAddr,
}

impl RunCommandServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("socket", e))?;
        let local_addr = listener.local_addr().map_err(|e| Error::io("socket", e))?;
        let (sender, receiver) = mpsc::channel();
        thread::spawn(move || {
            let Ok((conn, _)) = listener.accept() else {
                return;
            };
            for line in BufReader::new(conn).lines() {
                let Ok(line) = line else { break };
                if let Some(job_id) = parse_run_command(&line) {
                    if sender.send(job_id).is_err() {
                        break;
                    }
                }
            }
        });
        Ok(RunCommandServer {
            receiver,
            local_addr,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<JobId> {
        self.receiver.recv_timeout(timeout).ok()
    }
}

/// Parse one `RUN <job_id>` line; malformed lines yield None.
pub fn parse_run_command(line: &str) -> Option<JobId> {
    let rest = line.trim().strip_prefix("RUN ")?;
    let job_id = rest.trim();
    (!job_id.is_empty()).then(|| job_id.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twin::RunCommandSink;
    use crate::types::Job;

    fn sample_events() -> Vec<Event> {
        let job = Job::new("j0001", 0, 3, 120);
        vec![
            Event::submit(&job),
            Event::run("j0001", 0),
            Event::end("j0001", 50),
        ]
    }

    #[test]
    fn appends_assign_sequential_offsets() {
        let mut stream = InMemoryStream::new();
        assert_eq!(stream.append(Event::run("a", 0)).unwrap(), 0);
        assert_eq!(stream.append(Event::run("b", 1)).unwrap(), 1);
    }

    #[test]
    fn read_returns_appended_record() {
        let mut stream = InMemoryStream::new();
        stream.append(Event::run("a", 7)).unwrap();
        match stream.read_blocking(0, Duration::ZERO).unwrap() {
            ReadOutcome::Record(rec) => {
                assert_eq!(rec.offset, 0);
                assert_eq!(rec.event.timestamp, 7);
            }
            other => panic!("expected record, got {other:?}"),
        }
    }

    #[test]
    fn read_past_end_times_out_then_sees_end_of_stream() {
        let mut stream = InMemoryStream::new();
        stream.append(Event::run("a", 0)).unwrap();
        assert_eq!(
            stream.read_blocking(1, Duration::ZERO).unwrap(),
            ReadOutcome::Timeout
        );
        stream.close().unwrap();
        assert_eq!(
            stream.read_blocking(1, Duration::ZERO).unwrap(),
            ReadOutcome::EndOfStream
        );
        assert!(matches!(
            StreamProducer::append(&mut stream.clone(), Event::run("b", 1)),
            Err(Error::StreamClosed)
        ));
    }

    #[test]
    fn wire_lines_match_fixed_schema() {
        let events = sample_events();
        let lines: Vec<String> = events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                record_to_line(&StreamRecord {
                    offset: i as u64,
                    event: e.clone(),
                })
            })
            .collect();
        assert_eq!(
            lines[0],
            r#"{"offset":0,"ts":0,"kind":"submit","job":"j0001","nodes":3,"walltime":120}"#
        );
        assert_eq!(
            lines[1],
            r#"{"offset":1,"ts":0,"kind":"run","job":"j0001"}"#
        );
        assert_eq!(
            lines[2],
            r#"{"offset":2,"ts":50,"kind":"end","job":"j0001"}"#
        );
        for (i, line) in lines.iter().enumerate() {
            let parsed = line_to_record(line).unwrap();
            assert_eq!(parsed.event, events[i]);
        }
    }

    #[test]
    fn wire_parser_rejects_malformed_lines() {
        assert!(line_to_record(r#"{"offset":0,"ts":0,"kind":"submit","job":"x"}"#).is_err());
        assert!(line_to_record(r#"{"offset":0,"ts":0,"kind":"run","job":"x","nodes":2}"#).is_err());
        assert!(line_to_record(r#"{"offset":0,"ts":0,"kind":"boot","job":"x"}"#).is_err());
        assert!(line_to_record("not json").is_err());
    }

    #[test]
    fn concurrent_producers_get_gap_free_offsets() {
        let stream = InMemoryStream::new();
        let mut handles = Vec::new();
        for t in 0..4 {
            let mut handle = stream.clone();
            handles.push(thread::spawn(move || {
                for i in 0..2500u64 {
                    handle.append(Event::run(format!("t{t}-{i}"), 0)).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let records = stream.records();
        assert_eq!(records.len(), 10_000);
        for (i, rec) in records.iter().enumerate() {
            assert_eq!(rec.offset, i as u64);
        }
    }

    #[test]
    fn interleaved_consumer_observes_every_record_in_order() {
        let stream = InMemoryStream::new();
        let mut producer = stream.clone();
        let total = 500u64;
        let producer_handle = thread::spawn(move || {
            for i in 0..total {
                producer.append(Event::run(format!("j{i}"), i)).unwrap();
                if i % 97 == 0 {
                    thread::yield_now();
                }
            }
            producer.close().unwrap();
        });
        let mut consumer = stream.clone();
        let mut seen = Vec::new();
        let mut offset = 0u64;
        loop {
            match consumer
                .read_blocking(offset, Duration::from_secs(5))
                .unwrap()
            {
                ReadOutcome::Record(rec) => {
                    seen.push(rec.event.job_id.clone());
                    offset += 1;
                }
                ReadOutcome::EndOfStream => break,
                ReadOutcome::Timeout => panic!("producer stalled"),
            }
        }
        producer_handle.join().unwrap();
        let expected: Vec<String> = (0..total).map(|i| format!("j{i}")).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn replaying_from_zero_twice_yields_identical_sequences() {
        let mut stream = InMemoryStream::new();
        for e in sample_events() {
            stream.append(e).unwrap();
        }
        stream.close().unwrap();
        let read_all = || {
            let mut consumer = stream.clone();
            let mut out = Vec::new();
            let mut offset = 0;
            while let ReadOutcome::Record(rec) =
                consumer.read_blocking(offset, Duration::ZERO).unwrap()
            {
                out.push(rec);
                offset += 1;
            }
            out
        };
        assert_eq!(read_all(), read_all());
    }

    #[test]
    fn file_backend_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let mut writer = FileStreamWriter::create(&path).unwrap();
        for e in sample_events() {
            writer.append(e).unwrap();
        }
        writer.close().unwrap();

        let records = read_stream_file(&path).unwrap();
        assert_eq!(records.len(), 3);
        validate_stream(&records).unwrap();

        let mut reader = FileStreamReader::open(&path).unwrap();
        assert!(matches!(
            reader.read_blocking(2, Duration::ZERO).unwrap(),
            ReadOutcome::Record(_)
        ));
        assert_eq!(
            reader.read_blocking(3, Duration::ZERO).unwrap(),
            ReadOutcome::EndOfStream
        );
    }

    #[test]
    fn stream_validator_rejects_illegal_sequences() {
        let job = Job::new("a", 5, 1, 10);
        let legal = vec![
            StreamRecord {
                offset: 0,
                event: Event::submit(&job),
            },
            StreamRecord {
                offset: 1,
                event: Event::run("a", 5),
            },
            StreamRecord {
                offset: 2,
                event: Event::end("a", 9),
            },
        ];
        validate_stream(&legal).unwrap();

        let run_first = vec![StreamRecord {
            offset: 0,
            event: Event::run("a", 5),
        }];
        assert!(validate_stream(&run_first).is_err());

        let backwards = vec![
            StreamRecord {
                offset: 0,
                event: Event::submit(&job),
            },
            StreamRecord {
                offset: 1,
                event: Event::run("a", 3),
            },
        ];
        assert!(validate_stream(&backwards).is_err());

        let gap = vec![StreamRecord {
            offset: 1,
            event: Event::submit(&job),
        }];
        assert!(validate_stream(&gap).is_err());
    }

    #[test]
    fn socket_stream_carries_records_end_to_end() {
        let mut server = SocketStreamServer::bind("127.0.0.1:0").unwrap();
        let mut client = SocketStreamClient::connect(server.local_addr()).unwrap();
        for e in sample_events() {
            client.append(e).unwrap();
        }
        client.close().unwrap();

        let mut got = Vec::new();
        let mut offset = 0;
        loop {
            match server
                .read_blocking(offset, Duration::from_secs(5))
                .unwrap()
            {
                ReadOutcome::Record(rec) => {
                    got.push(rec.event);
                    offset += 1;
                }
                ReadOutcome::EndOfStream => break,
                ReadOutcome::Timeout => panic!("socket producer stalled"),
            }
        }
        assert_eq!(got, sample_events());
    }

    #[test]
    fn run_command_protocol_round_trips() {
        let server = RunCommandServer::bind("127.0.0.1:0").unwrap();
        let mut client = RunCommandClient::connect(server.local_addr()).unwrap();
        client.run("j0042").unwrap();
        client.run("j0043").unwrap();
        assert_eq!(
            server.recv_timeout(Duration::from_secs(5)),
            Some("j0042".to_string())
        );
        assert_eq!(
            server.recv_timeout(Duration::from_secs(5)),
            Some("j0043".to_string())
        );
    }

    #[test]
    fn run_command_parser_handles_malformed_lines() {
        assert_eq!(parse_run_command("RUN j1"), Some("j1".to_string()));
        assert_eq!(parse_run_command("  RUN j1  "), Some("j1".to_string()));
        assert_eq!(parse_run_command("RUN "), None);
        assert_eq!(parse_run_command("STOP j1"), None);
    }
}
