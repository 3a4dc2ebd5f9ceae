//! Per-message timestamp chains, aggregation and CSV export.
//!
//! Tasks report stage timestamps through a [`MetricsSink`], which never
//! blocks the caller: events go through a bounded queue to a collector
//! thread, and events that do not fit are counted as dropped.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use parking_lot::Mutex;
use thiserror::Error;
use uuid::Uuid;

use crate::broker::{Record, Stage};

pub const CSV_HEADER: [&str; 9] = [
    "job_id",
    "partition",
    "message_id",
    "payload_bytes",
    "produced_us",
    "broker_in_us",
    "consumed_us",
    "processed_us",
    "handler_version",
];

pub const SUMMARY_PREFIX: &str = "#summary";

const SUMMARY_FIELDS: [&str; 14] = [
    "job_id",
    "messages",
    "payload_bytes",
    "wall_time_s",
    "throughput_mb_s",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "produce_to_broker_ms",
    "broker_to_consume_ms",
    "consume_to_processed_ms",
    "bottleneck",
    "records",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no complete timestamp chains to aggregate")]
    NoCompleteChains,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One message's timestamp chain. A zero timestamp means the stage was not
/// recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricRecord {
    pub job_id: Uuid,
    pub partition: u32,
    pub message_id: u64,
    pub payload_bytes: u64,
    pub produced_us: u64,
    pub broker_in_us: u64,
    pub consumed_us: u64,
    pub processed_us: u64,
    pub handler_version: u64,
}

impl MetricRecord {
    pub fn new(job_id: Uuid, partition: u32, message_id: u64) -> Self {
        Self {
            job_id,
            partition,
            message_id,
            payload_bytes: 0,
            produced_us: 0,
            broker_in_us: 0,
            consumed_us: 0,
            processed_us: 0,
            handler_version: 0,
        }
    }

    /// Chain built from the timestamps a broker record carries.
    pub fn from_record(record: &Record, handler_version: u64) -> Self {
        let mut m = Self::new(record.job_id, record.partition, record.message_id);
        m.payload_bytes = record.payload.len() as u64;
        m.handler_version = handler_version;
        for &(stage, t) in &record.timestamps {
            m.set_if_missing(stage, t);
        }
        m
    }

    pub fn stage(&self, stage: Stage) -> u64 {
        match stage {
            Stage::Produced => self.produced_us,
            Stage::BrokerIn => self.broker_in_us,
            Stage::Consumed => self.consumed_us,
            Stage::Processed => self.processed_us,
        }
    }

    fn slot(&mut self, stage: Stage) -> &mut u64 {
        match stage {
            Stage::Produced => &mut self.produced_us,
            Stage::BrokerIn => &mut self.broker_in_us,
            Stage::Consumed => &mut self.consumed_us,
            Stage::Processed => &mut self.processed_us,
        }
    }

    /// First write wins.
    fn set_if_missing(&mut self, stage: Stage, micros: u64) -> bool {
        let s = self.slot(stage);
        if *s == 0 {
            *s = micros;
            true
        } else {
            false
        }
    }

    pub fn is_complete(&self) -> bool {
        Stage::ALL.iter().all(|&s| self.stage(s) != 0)
    }

    /// Recorded timestamps never go backwards in stage order.
    pub fn is_monotonic(&self) -> bool {
        let ts: Vec<u64> = Stage::ALL
            .iter()
            .map(|&s| self.stage(s))
            .filter(|&t| t != 0)
            .collect();
        ts.windows(2).all(|w| w[0] <= w[1])
    }

    /// Processed minus produced.
    pub fn end_to_end_us(&self) -> Option<u64> {
        self.is_complete()
            .then(|| self.processed_us.saturating_sub(self.produced_us))
    }

    /// Produce→broker, broker→consume, consume→processed.
    pub fn hops_us(&self) -> Option<[u64; 3]> {
        self.is_complete().then(|| {
            [
                self.broker_in_us.saturating_sub(self.produced_us),
                self.consumed_us.saturating_sub(self.broker_in_us),
                self.processed_us.saturating_sub(self.consumed_us),
            ]
        })
    }
}

/// The three hops of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hop {
    ProduceToBroker,
    BrokerToConsume,
    ConsumeToProcessed,
}

impl Hop {
    pub const ALL: [Hop; 3] = [Hop::ProduceToBroker, Hop::BrokerToConsume, Hop::ConsumeToProcessed];

    pub fn name(self) -> &'static str {
        match self {
            Hop::ProduceToBroker => "produce_to_broker",
            Hop::BrokerToConsume => "broker_to_consume",
            Hop::ConsumeToProcessed => "consume_to_processed",
        }
    }

    pub fn from_name(name: &str) -> Option<Hop> {
        Hop::ALL.into_iter().find(|h| h.name() == name)
    }
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

/// Aggregate over the complete chains of one run.
///
/// Wall time spans the earliest `produced` to the latest `processed`
/// timestamp, so every field can be recomputed from exported rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub messages: u64,
    pub payload_bytes: u64,
    pub wall_time_s: f64,
    pub throughput_mb_s: f64,
    /// End-to-end, produced → processed.
    pub latency: LatencyStats,
    /// Mean duration of each hop, in [`Hop::ALL`] order.
    pub hop_mean_ms: [f64; 3],
    pub bottleneck: Hop,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Aggregates the complete chains among `records`.
pub fn aggregate(records: &[MetricRecord]) -> Result<Summary, MetricsError> {
    let complete: Vec<&MetricRecord> = records.iter().filter(|r| r.is_complete()).collect();
    if complete.is_empty() {
        return Err(MetricsError::NoCompleteChains);
    }
    let n = complete.len() as f64;
    let first = complete.iter().map(|r| r.produced_us).min().unwrap();
    let last = complete.iter().map(|r| r.processed_us).max().unwrap();
    let wall_time_s = (last - first) as f64 / 1e6;
    let payload_bytes: u64 = complete.iter().map(|r| r.payload_bytes).sum();
    let throughput_mb_s = if wall_time_s > 0.0 {
        payload_bytes as f64 / wall_time_s / 1e6
    } else {
        f64::INFINITY
    };

    let mut lat: Vec<f64> = complete
        .iter()
        .map(|r| r.end_to_end_us().unwrap() as f64 / 1e3)
        .collect();
    lat.sort_by(f64::total_cmp);
    let latency = LatencyStats {
        mean_ms: lat.iter().sum::<f64>() / n,
        p50_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
        p99_ms: percentile(&lat, 99.0),
    };

    let mut sums = [0u64; 3];
    for r in &complete {
        for (s, h) in sums.iter_mut().zip(r.hops_us().unwrap()) {
            *s += h;
        }
    }
    let hop_mean_ms = sums.map(|s| s as f64 / n / 1e3);
    let bottleneck = Hop::ALL
        .into_iter()
        .zip(hop_mean_ms)
        .fold((Hop::ProduceToBroker, f64::NEG_INFINITY), |best, (h, v)| {
            if v > best.1 {
                (h, v)
            } else {
                best
            }
        })
        .0;

    Ok(Summary {
        messages: complete.len() as u64,
        payload_bytes,
        wall_time_s,
        throughput_mb_s,
        latency,
        hop_mean_ms,
        bottleneck,
    })
}

/// Per-partition counts of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionCounts {
    pub partition: u32,
    pub produced: u64,
    pub processed: u64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub job_id: Uuid,
    pub partitions: Vec<PartitionCounts>,
    pub produced: u64,
    pub processed: u64,
    /// Produced but never processed.
    pub lost: u64,
    /// Orchestrator-side duration of the run, start to join.
    pub elapsed_s: f64,
    /// `None` when no chain completed.
    pub summary: Option<Summary>,
    pub records: Vec<MetricRecord>,
    /// Metric events the sink could not queue.
    pub dropped_metrics: u64,
    /// First handler failure, if the run aborted.
    pub failure: Option<String>,
    /// Verdicts returned by the cloud handler, and how many flagged outliers.
    pub verdicts: u64,
    pub outliers: u64,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.failure.is_none() && self.lost == 0 && self.dropped_metrics == 0
    }

    pub fn complete_chains(&self) -> usize {
        self.records.iter().filter(|r| r.is_complete()).count()
    }
}

enum Event {
    Stage {
        key: (Uuid, u32, u64),
        stage: Stage,
        micros: u64,
        payload_bytes: u64,
        handler_version: Option<u64>,
    },
    Flush(Sender<()>),
}

type Table = HashMap<(Uuid, u32, u64), MetricRecord>;

/// Concurrent, non-blocking metric collector.
pub struct MetricsSink {
    tx: Sender<Event>,
    table: Arc<Mutex<Table>>,
    dropped: Arc<AtomicU64>,
    collector: Mutex<Option<JoinHandle<()>>>,
}

impl fmt::Debug for MetricsSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricsSink")
            .field("dropped", &self.dropped())
            .finish()
    }
}

impl Default for MetricsSink {
    fn default() -> Self {
        Self::with_capacity(1 << 16)
    }
}

impl MetricsSink {
    pub fn with_capacity(capacity: usize) -> Self {
        let (tx, rx) = bounded(capacity);
        let table = Arc::new(Mutex::new(Table::new()));
        let t = table.clone();
        let collector = std::thread::Builder::new()
            .name("metrics".into())
            .spawn(move || collect(rx, t))
            .expect("spawn metrics collector");
        Self {
            tx,
            table,
            dropped: Arc::new(AtomicU64::new(0)),
            collector: Mutex::new(Some(collector)),
        }
    }

    /// Records one stage timestamp. Repeated calls for the same message and
    /// stage keep the first value.
    pub fn record_stage(
        &self,
        job_id: Uuid,
        partition: u32,
        message_id: u64,
        stage: Stage,
        micros: u64,
        payload_bytes: u64,
    ) {
        self.push(Event::Stage {
            key: (job_id, partition, message_id),
            stage,
            micros,
            payload_bytes,
            handler_version: None,
        });
    }

    /// Records the processed stage together with the handler version that
    /// handled the message.
    pub fn record_processed(
        &self,
        job_id: Uuid,
        partition: u32,
        message_id: u64,
        micros: u64,
        payload_bytes: u64,
        handler_version: u64,
    ) {
        self.push(Event::Stage {
            key: (job_id, partition, message_id),
            stage: Stage::Processed,
            micros,
            payload_bytes,
            handler_version: Some(handler_version),
        });
    }

    /// Records every stage of a finished chain.
    pub fn record_chain(&self, chain: &MetricRecord) {
        for stage in Stage::ALL {
            let t = chain.stage(stage);
            if t == 0 {
                continue;
            }
            if stage == Stage::Processed {
                self.record_processed(
                    chain.job_id,
                    chain.partition,
                    chain.message_id,
                    t,
                    chain.payload_bytes,
                    chain.handler_version,
                );
            } else {
                self.record_stage(
                    chain.job_id,
                    chain.partition,
                    chain.message_id,
                    stage,
                    t,
                    chain.payload_bytes,
                );
            }
        }
    }

    fn push(&self, event: Event) {
        match self.tx.try_send(event) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Waits until every event queued so far has been applied.
    pub fn flush(&self) {
        let (ack_tx, ack_rx) = bounded(1);
        if self.tx.send(Event::Flush(ack_tx)).is_ok() {
            let _ = ack_rx.recv();
        }
    }

    /// All chains of a job, ordered by partition then message id.
    pub fn records_for(&self, job_id: Uuid) -> Vec<MetricRecord> {
        self.flush();
        let mut out: Vec<MetricRecord> = self
            .table
            .lock()
            .values()
            .filter(|r| r.job_id == job_id)
            .copied()
            .collect();
        out.sort_by_key(|r| (r.partition, r.message_id));
        out
    }

    /// All chains of all jobs, ordered by job, partition, message id.
    pub fn snapshot(&self) -> Vec<MetricRecord> {
        self.flush();
        let mut out: Vec<MetricRecord> = self.table.lock().values().copied().collect();
        out.sort_by_key(|r| (r.job_id, r.partition, r.message_id));
        out
    }
}

impl Drop for MetricsSink {
    fn drop(&mut self) {
        // closing the channel ends the collector
        let (dead_tx, _) = bounded(0);
        drop(std::mem::replace(&mut self.tx, dead_tx));
        if let Some(j) = self.collector.lock().take() {
            let _ = j.join();
        }
    }
}

fn collect(rx: Receiver<Event>, table: Arc<Mutex<Table>>) {
    for event in rx {
        match event {
            Event::Stage {
                key,
                stage,
                micros,
                payload_bytes,
                handler_version,
            } => {
                let mut t = table.lock();
                let rec = t
                    .entry(key)
                    .or_insert_with(|| MetricRecord::new(key.0, key.1, key.2));
                if rec.payload_bytes == 0 {
                    rec.payload_bytes = payload_bytes;
                }
                if rec.set_if_missing(stage, micros) {
                    if let Some(v) = handler_version {
                        rec.handler_version = v;
                    }
                }
            }
            Event::Flush(ack) => {
                let _ = ack.send(());
            }
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn summary_row(job_id: Uuid, s: &Summary, records: usize) -> Vec<String> {
    vec![
        SUMMARY_PREFIX.to_string(),
        job_id.to_string(),
        s.messages.to_string(),
        s.payload_bytes.to_string(),
        fmt_f64(s.wall_time_s),
        fmt_f64(s.throughput_mb_s),
        fmt_f64(s.latency.mean_ms),
        fmt_f64(s.latency.p50_ms),
        fmt_f64(s.latency.p95_ms),
        fmt_f64(s.latency.p99_ms),
        fmt_f64(s.hop_mean_ms[0]),
        fmt_f64(s.hop_mean_ms[1]),
        fmt_f64(s.hop_mean_ms[2]),
        s.bottleneck.name().to_string(),
        records.to_string(),
    ]
}

/// Writes one row per chain plus one `#summary` row per job that has at
/// least one complete chain.
pub fn write_csv<W: Write>(out: W, records: &[MetricRecord]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut jobs: Vec<Uuid> = Vec::new();
    for r in records {
        if !jobs.contains(&r.job_id) {
            jobs.push(r.job_id);
        }
        w.write_record(&[
            r.job_id.to_string(),
            r.partition.to_string(),
            r.message_id.to_string(),
            r.payload_bytes.to_string(),
            r.produced_us.to_string(),
            r.broker_in_us.to_string(),
            r.consumed_us.to_string(),
            r.processed_us.to_string(),
            r.handler_version.to_string(),
        ])?;
    }
    for job in jobs {
        let rows: Vec<MetricRecord> = records.iter().filter(|r| r.job_id == job).copied().collect();
        if let Ok(s) = aggregate(&rows) {
            w.write_record(summary_row(job, &s, rows.len()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(path: &Path, records: &[MetricRecord]) -> Result<(), MetricsError> {
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), records)
}

/// Contents of an exported CSV.
#[derive(Debug, Clone, Default)]
pub struct CsvRun {
    pub records: Vec<MetricRecord>,
    /// Stored summaries, keyed by job.
    pub summaries: Vec<(Uuid, Summary)>,
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, MetricsError> {
    field
        .parse()
        .map_err(|_| MetricsError::SchemaMismatch(format!("bad {what} `{field}`")))
}

pub fn read_csv<R: Read>(input: R) -> Result<CsvRun, MetricsError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rd.records();
    let header = rows
        .next()
        .ok_or_else(|| MetricsError::SchemaMismatch("empty file".into()))??;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(MetricsError::SchemaMismatch(format!(
            "header `{}` does not match `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            CSV_HEADER.join(",")
        )));
    }
    let mut run = CsvRun::default();
    for row in rows {
        let row = row?;
        if row.get(0) == Some(SUMMARY_PREFIX) {
            if row.len() != SUMMARY_FIELDS.len() + 1 {
                return Err(MetricsError::SchemaMismatch(format!(
                    "summary row has {} fields",
                    row.len()
                )));
            }
            let f = |i: usize| &row[i + 1];
            let job: Uuid = parse(f(0), "job id")?;
            let summary = Summary {
                messages: parse(f(1), "messages")?,
                payload_bytes: parse(f(2), "payload bytes")?,
                wall_time_s: parse(f(3), "wall time")?,
                throughput_mb_s: parse(f(4), "throughput")?,
                latency: LatencyStats {
                    mean_ms: parse(f(5), "latency")?,
                    p50_ms: parse(f(6), "latency")?,
                    p95_ms: parse(f(7), "latency")?,
                    p99_ms: parse(f(8), "latency")?,
                },
                hop_mean_ms: [
                    parse(f(9), "hop")?,
                    parse(f(10), "hop")?,
                    parse(f(11), "hop")?,
                ],
                bottleneck: Hop::from_name(f(12))
                    .ok_or_else(|| MetricsError::SchemaMismatch(format!("bad hop `{}`", f(12))))?,
            };
            run.summaries.push((job, summary));
            continue;
        }
        if row.len() != CSV_HEADER.len() {
            return Err(MetricsError::SchemaMismatch(format!(
                "row has {} fields, expected {}",
                row.len(),
                CSV_HEADER.len()
            )));
        }
        run.records.push(MetricRecord {
            job_id: parse(&row[0], "job id")?,
            partition: parse(&row[1], "partition")?,
            message_id: parse(&row[2], "message id")?,
            payload_bytes: parse(&row[3], "payload bytes")?,
            produced_us: parse(&row[4], "timestamp")?,
            broker_in_us: parse(&row[5], "timestamp")?,
            consumed_us: parse(&row[6], "timestamp")?,
            processed_us: parse(&row[7], "timestamp")?,
            handler_version: parse(&row[8], "handler version")?,
        });
    }
    Ok(run)
}

pub fn import_csv(path: &Path) -> Result<CsvRun, MetricsError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
