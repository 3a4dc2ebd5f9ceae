//! The edge-to-cloud function pipeline.
//!
//! Per partition, a produce task on the edge pilot calls the produce
//! handler, applies the edge handler in-line and publishes the block to the
//! topic `{job_id}-data`. A consumer task on the cloud processing pilot
//! fetches the partition, calls the cloud handler and commits the offset
//! after each success. Handlers live in versioned slots and can be swapped
//! while the pipeline runs; tasks pick up the new handler at their next
//! message.

mod handler;
mod placement;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;
use uuid::Uuid;

use crate::broker::{BrokerApi, BrokerError, ConsumerGroup, Offset, Record, Stage, POINT_BYTES};
use crate::clock;
use crate::metrics::{aggregate, MetricRecord, MetricsSink, PartitionCounts, RunReport};
use crate::mlops::{PointBlock, FEATURES};
use crate::param::ParamApi;
use crate::pilot::{PilotHandle, PilotState, Tier};
use crate::services::Services;

pub use handler::{
    CloudFn, EdgeFn, Handler, HandlerError, HandlerResult, HandlerRole, HandlerSlot, HandlerSlots,
    ProduceFn,
};
pub use placement::{compute_placements, Placement};

const FETCH_MAX: u32 = 64;
const FETCH_WAIT: Duration = Duration::from_millis(100);
/// Per-partition retention is sized so buffered payload stays near this.
const RETENTION_BUDGET_BYTES: usize = 64 << 20;

/// Pilot ids by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub edge: Uuid,
    pub cloud_processing: Uuid,
    pub cloud_broker: Uuid,
}

/// What a handler can see of the running pipeline.
#[derive(Clone)]
pub struct FunctionContext {
    pub job_id: Uuid,
    pub topology: Topology,
    pub broker_endpoint: String,
    pub param_endpoint: String,
    pub user_config: BTreeMap<String, String>,
    pub partition_index: u32,
    /// Sequence number of the message being produced or processed.
    pub message_id: u64,
    pub points_per_message: usize,
    params: Arc<dyn ParamApi>,
}

impl fmt::Debug for FunctionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionContext")
            .field("job_id", &self.job_id)
            .field("topology", &self.topology)
            .field("broker_endpoint", &self.broker_endpoint)
            .field("partition_index", &self.partition_index)
            .field("message_id", &self.message_id)
            .finish_non_exhaustive()
    }
}

impl FunctionContext {
    /// A context outside any pipeline, for calling handlers directly.
    pub fn standalone(job_id: Uuid, partition_index: u32, params: Arc<dyn ParamApi>) -> Self {
        Self {
            job_id,
            topology: Topology {
                edge: Uuid::nil(),
                cloud_processing: Uuid::nil(),
                cloud_broker: Uuid::nil(),
            },
            broker_endpoint: "inproc".into(),
            param_endpoint: "inproc".into(),
            user_config: BTreeMap::new(),
            partition_index,
            message_id: 0,
            points_per_message: 0,
            params,
        }
    }

    /// Parameter-server client for the tier the task runs on.
    pub fn params(&self) -> &dyn ParamApi {
        self.params.as_ref()
    }

    pub fn config(&self, key: &str) -> Option<&str> {
        self.user_config.get(key).map(String::as_str)
    }
}

pub struct PipelineConfig {
    pub pilot_edge: PilotHandle,
    pub pilot_cloud_processing: PilotHandle,
    pub pilot_cloud_broker: PilotHandle,
    /// Broker and parameter server, deployed on `pilot_cloud_broker`.
    pub services: Arc<Services>,
    pub produce_handler: Handler,
    /// Identity when `None`.
    pub edge_handler: Option<Handler>,
    pub cloud_handler: Handler,
    pub partitions: u32,
    pub messages_per_producer: u64,
    pub points_per_message: usize,
    pub user_config: BTreeMap<String, String>,
    /// Random when `None`.
    pub job_id: Option<Uuid>,
    /// A private sink is created when `None`.
    pub metrics: Option<Arc<MetricsSink>>,
    /// Records kept per partition; derived from the message size when `None`.
    pub retention: Option<u32>,
}

impl PipelineConfig {
    /// One partition, 512 messages of 25 points, identity edge handler.
    pub fn new(
        pilot_edge: PilotHandle,
        pilot_cloud_processing: PilotHandle,
        pilot_cloud_broker: PilotHandle,
        services: Arc<Services>,
        produce_handler: Handler,
        cloud_handler: Handler,
    ) -> Self {
        Self {
            pilot_edge,
            pilot_cloud_processing,
            pilot_cloud_broker,
            services,
            produce_handler,
            edge_handler: None,
            cloud_handler,
            partitions: 1,
            messages_per_producer: 512,
            points_per_message: 25,
            user_config: BTreeMap::new(),
            job_id: None,
            metrics: None,
            retention: None,
        }
    }
}

/// Retention that keeps about 64 MB of payload per partition, within
/// [8, 4096] records.
pub fn default_retention(points_per_message: usize) -> u32 {
    let bytes = points_per_message.max(1) * POINT_BYTES;
    (RETENTION_BUDGET_BYTES / bytes).clamp(8, 4096) as u32
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{role} pilot is {state:?}, not running")]
    PilotNotRunning { role: &'static str, state: PilotState },
    #[error("broker unreachable: {0}")]
    BrokerUnreachable(String),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("pipeline is {0:?}")]
    InvalidState(PipelineState),
    #[error("{role} handler failed on partition {partition}: {message}")]
    HandlerPanic {
        role: HandlerRole,
        partition: u32,
        message: String,
        report: Box<RunReport>,
    },
    #[error("broker error on partition {partition}: {error}")]
    Broker {
        partition: u32,
        error: BrokerError,
        report: Box<RunReport>,
    },
    #[error("{role} task for partition {partition} did not complete: {reason}")]
    TaskLost {
        role: HandlerRole,
        partition: u32,
        reason: String,
        report: Box<RunReport>,
    },
}

impl PipelineError {
    /// Partial report of an aborted run.
    pub fn report(&self) -> Option<&RunReport> {
        match self {
            PipelineError::HandlerPanic { report, .. }
            | PipelineError::Broker { report, .. }
            | PipelineError::TaskLost { report, .. } => Some(report),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineState {
    Ready,
    Running,
    Finished,
    Failed,
}

struct Inner {
    job_id: Uuid,
    topic: String,
    group: String,
    partitions: u32,
    messages: u64,
    points: usize,
    edge: PilotHandle,
    cloud: PilotHandle,
    services: Arc<Services>,
    slots: HandlerSlots,
    placements: RwLock<Vec<Placement>>,
    metrics: Arc<MetricsSink>,
    base_context: FunctionContext,
    state: Mutex<PipelineState>,
}

impl Inner {
    fn replace_placements(&self) {
        *self.placements.write() = compute_placements(
            self.edge.id(),
            self.edge.current_workers(),
            self.cloud.id(),
            self.cloud.current_workers(),
            self.partitions,
        );
    }
}

/// A built pipeline. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct PipelineHandle {
    inner: Arc<Inner>,
}

impl fmt::Debug for PipelineHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PipelineHandle")
            .field("job_id", &self.inner.job_id)
            .field("partitions", &self.inner.partitions)
            .field("state", &self.state())
            .finish()
    }
}

fn require_running(role: &'static str, p: &PilotHandle) -> Result<(), PipelineError> {
    match p.state() {
        PilotState::Running => Ok(()),
        state => Err(PipelineError::PilotNotRunning { role, state }),
    }
}

/// Validates the configuration, creates the data topic and computes
/// placements.
pub fn build_pipeline(config: PipelineConfig) -> Result<PipelineHandle, PipelineError> {
    require_running("edge", &config.pilot_edge)?;
    require_running("cloud processing", &config.pilot_cloud_processing)?;
    require_running("cloud broker", &config.pilot_cloud_broker)?;
    let ids = [
        config.pilot_edge.id(),
        config.pilot_cloud_processing.id(),
        config.pilot_cloud_broker.id(),
    ];
    if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
        return Err(PipelineError::InvalidConfig(
            "edge, cloud processing and broker roles need three distinct pilots".into(),
        ));
    }
    if config.pilot_edge.tier() != Tier::Edge || config.pilot_cloud_processing.tier() != Tier::Cloud {
        return Err(PipelineError::InvalidConfig(
            "edge pilot must be on the edge tier and processing pilot on the cloud tier".into(),
        ));
    }
    if config.partitions == 0 {
        return Err(PipelineError::InvalidConfig("partitions must be at least 1".into()));
    }
    if !(1..=1_000_000).contains(&config.points_per_message) {
        return Err(PipelineError::InvalidConfig(
            "points per message must be in [1, 1000000]".into(),
        ));
    }
    let edge_handler = config.edge_handler.unwrap_or_else(Handler::identity_edge);
    for (h, role) in [
        (&config.produce_handler, HandlerRole::Produce),
        (&edge_handler, HandlerRole::EdgeProcess),
        (&config.cloud_handler, HandlerRole::CloudProcess),
    ] {
        if h.role() != role {
            return Err(PipelineError::InvalidConfig(format!(
                "{} handler supplied for the {role} role",
                h.role()
            )));
        }
    }
    let services = config.services;
    if services.host_pilot() != config.pilot_cloud_broker.id() {
        return Err(PipelineError::BrokerUnreachable(
            "services are not hosted on the broker pilot".into(),
        ));
    }

    let job_id = config.job_id.unwrap_or_else(Uuid::new_v4);
    let topic = format!("{job_id}-data");
    let group = format!("{job_id}-cloud");
    let retention = config
        .retention
        .unwrap_or_else(|| default_retention(config.points_per_message));
    let admin = services
        .broker_client(Tier::Cloud)
        .map_err(|e| PipelineError::BrokerUnreachable(e.to_string()))?;
    admin
        .create_topic(&topic, config.partitions, retention)
        .map_err(|e| match e {
            BrokerError::Io(m) | BrokerError::Protocol(m) => PipelineError::BrokerUnreachable(m),
            other => PipelineError::InvalidConfig(other.to_string()),
        })?;
    let params = services
        .param_client(Tier::Cloud)
        .map_err(|e| PipelineError::BrokerUnreachable(e.to_string()))?;

    let base_context = FunctionContext {
        job_id,
        topology: Topology {
            edge: ids[0],
            cloud_processing: ids[1],
            cloud_broker: ids[2],
        },
        broker_endpoint: services.endpoint(),
        param_endpoint: services.endpoint(),
        user_config: config.user_config,
        partition_index: 0,
        message_id: 0,
        points_per_message: config.points_per_message,
        params,
    };

    let inner = Arc::new(Inner {
        job_id,
        topic,
        group,
        partitions: config.partitions,
        messages: config.messages_per_producer,
        points: config.points_per_message,
        edge: config.pilot_edge,
        cloud: config.pilot_cloud_processing,
        services,
        slots: HandlerSlots::new(config.produce_handler, edge_handler, config.cloud_handler),
        placements: RwLock::new(Vec::new()),
        metrics: config.metrics.unwrap_or_default(),
        base_context,
        state: Mutex::new(PipelineState::Ready),
    });
    inner.replace_placements();
    for pilot in [&inner.edge, &inner.cloud] {
        let weak: Weak<Inner> = Arc::downgrade(&inner);
        pilot.on_scale(move |_| {
            if let Some(i) = weak.upgrade() {
                i.replace_placements();
            }
        });
    }
    Ok(PipelineHandle { inner })
}

enum Failure {
    Handler(String),
    Broker(BrokerError),
    Lost(String),
}

struct Outcome {
    role: HandlerRole,
    partition: u32,
    failure: Option<Failure>,
}

struct RunShared {
    inner: Arc<Inner>,
    abort: AtomicBool,
    produced: Vec<AtomicU64>,
    processed: Vec<AtomicU64>,
    verdicts: AtomicU64,
    outliers: AtomicU64,
}

impl PipelineHandle {
    pub fn job_id(&self) -> Uuid {
        self.inner.job_id
    }

    pub fn topic(&self) -> &str {
        &self.inner.topic
    }

    pub fn consumer_group(&self) -> &str {
        &self.inner.group
    }

    pub fn state(&self) -> PipelineState {
        *self.inner.state.lock()
    }

    pub fn placements(&self) -> Vec<Placement> {
        self.inner.placements.read().clone()
    }

    pub fn metrics(&self) -> &Arc<MetricsSink> {
        &self.inner.metrics
    }

    pub fn handler_version(&self, role: HandlerRole) -> u64 {
        self.inner.slots.get(role).version()
    }

    /// Replaces the handler of `handler`'s role; running tasks switch at
    /// their next message. Returns the new slot version.
    pub fn swap_handler(&self, handler: Handler) -> u64 {
        let role = handler.role();
        let v = self.inner.slots.swap(handler);
        log::info!("job {}: {role} handler now at version {v}", self.inner.job_id);
        v
    }

    /// Runs every partition to completion and assembles the report. A
    /// pipeline runs once.
    pub fn run(&self) -> Result<RunReport, PipelineError> {
        {
            let mut st = self.inner.state.lock();
            if *st != PipelineState::Ready {
                return Err(PipelineError::InvalidState(*st));
            }
            *st = PipelineState::Running;
        }
        let inner = &self.inner;
        let start = Instant::now();
        let n = inner.partitions as usize;
        let shared = Arc::new(RunShared {
            inner: inner.clone(),
            abort: AtomicBool::new(false),
            produced: (0..n).map(|_| AtomicU64::new(0)).collect(),
            processed: (0..n).map(|_| AtomicU64::new(0)).collect(),
            verdicts: AtomicU64::new(0),
            outliers: AtomicU64::new(0),
        });

        let (tx, rx) = unbounded::<Outcome>();
        let mut expected = Vec::new();
        let mut first_failure: Option<(HandlerRole, u32, Failure)> = None;
        if inner.messages > 0 {
            match self.launch(&shared, &tx) {
                Ok(tasks) => expected = tasks,
                Err(failure) => {
                    shared.abort.store(true, Ordering::Release);
                    first_failure = Some(failure);
                }
            }
        }
        drop(tx);

        let mut pending = expected.clone();
        while !pending.is_empty() {
            let Ok(out) = rx.recv() else { break };
            pending.retain(|k| *k != (out.role, out.partition));
            if let Some(f) = out.failure {
                if !shared.abort.swap(true, Ordering::AcqRel) {
                    log::warn!("job {}: aborting after {} failure on partition {}", inner.job_id, out.role, out.partition);
                    // producers blocked on retention must not wait for consumers that quit
                    let _ = inner.services.broker().leave_group(&inner.topic, &inner.group);
                }
                if first_failure.is_none() {
                    first_failure = Some((out.role, out.partition, f));
                }
            }
        }
        if first_failure.is_none() {
            if let Some(&(role, partition)) = pending.first() {
                first_failure = Some((
                    role,
                    partition,
                    Failure::Lost("task was dropped before completing".into()),
                ));
            }
        }

        let elapsed_s = start.elapsed().as_secs_f64();
        let records = inner.metrics.records_for(inner.job_id);
        let failed_partition = first_failure.as_ref().map(|(_, p, _)| *p);
        let partitions: Vec<PartitionCounts> = (0..n)
            .map(|p| PartitionCounts {
                partition: p as u32,
                produced: shared.produced[p].load(Ordering::Acquire),
                processed: shared.processed[p].load(Ordering::Acquire),
                failed: failed_partition == Some(p as u32),
            })
            .collect();
        let produced: u64 = partitions.iter().map(|c| c.produced).sum();
        let processed: u64 = partitions.iter().map(|c| c.processed).sum();
        let mut report = RunReport {
            job_id: inner.job_id,
            partitions,
            produced,
            processed,
            lost: produced.saturating_sub(processed),
            elapsed_s,
            summary: aggregate(&records).ok(),
            records,
            dropped_metrics: inner.metrics.dropped(),
            failure: None,
            verdicts: shared.verdicts.load(Ordering::Acquire),
            outliers: shared.outliers.load(Ordering::Acquire),
        };

        match first_failure {
            None => {
                *inner.state.lock() = PipelineState::Finished;
                Ok(report)
            }
            Some((role, partition, f)) => {
                *inner.state.lock() = PipelineState::Failed;
                let report_err = |msg: String, report: &mut RunReport| {
                    report.failure = Some(msg);
                    Box::new(report.clone())
                };
                Err(match f {
                    Failure::Handler(message) => PipelineError::HandlerPanic {
                        role,
                        partition,
                        report: report_err(format!("{role} handler: {message}"), &mut report),
                        message,
                    },
                    Failure::Broker(error) => PipelineError::Broker {
                        partition,
                        report: report_err(format!("broker: {error}"), &mut report),
                        error,
                    },
                    Failure::Lost(reason) => PipelineError::TaskLost {
                        role,
                        partition,
                        report: report_err(format!("task lost: {reason}"), &mut report),
                        reason,
                    },
                })
            }
        }
    }

    /// Submits consumer and producer tasks. Returns the `(role, partition)`
    /// keys of the outcomes to wait for.
    #[allow(clippy::type_complexity)]
    fn launch(
        &self,
        shared: &Arc<RunShared>,
        tx: &Sender<Outcome>,
    ) -> Result<Vec<(HandlerRole, u32)>, (HandlerRole, u32, Failure)> {
        let inner = &self.inner;
        let placements = self.placements();
        let members: Vec<String> = placements
            .iter()
            .filter(|p| p.role == HandlerRole::CloudProcess)
            .map(|p| p.task_id.to_string())
            .collect();
        let admin = inner
            .services
            .broker_client(Tier::Cloud)
            .map_err(|e| (HandlerRole::CloudProcess, 0, Failure::Broker(e)))?;
        let assignment = admin
            .assign_partitions(&inner.topic, &ConsumerGroup::new(&inner.group, members.clone()))
            .map_err(|e| (HandlerRole::CloudProcess, 0, Failure::Broker(e)))?;

        let mut expected = Vec::new();
        for member in &members {
            let parts: Vec<u32> = assignment
                .iter()
                .filter(|(_, m)| *m == member)
                .map(|(p, _)| *p)
                .collect();
            for &p in &parts {
                expected.push((HandlerRole::CloudProcess, p));
            }
            if parts.is_empty() {
                continue;
            }
            let (s, t) = (shared.clone(), tx.clone());
            inner
                .cloud
                .submit(Box::new(move |w| consume_task(&s, &parts, &|| w.is_cancelled(), &t)))
                .map_err(|e| (HandlerRole::CloudProcess, 0, Failure::Lost(e.to_string())))?;
        }
        for p in 0..inner.partitions {
            expected.push((HandlerRole::Produce, p));
            let (s, t) = (shared.clone(), tx.clone());
            inner
                .edge
                .submit(Box::new(move |w| produce_task(&s, p, &|| w.is_cancelled(), &t)))
                .map_err(|e| (HandlerRole::Produce, p, Failure::Lost(e.to_string())))?;
        }
        Ok(expected)
    }
}

fn report_outcome(tx: &Sender<Outcome>, role: HandlerRole, partition: u32, failure: Option<Failure>) {
    let _ = tx.send(Outcome {
        role,
        partition,
        failure,
    });
}

fn produce_task(s: &RunShared, partition: u32, cancelled: &dyn Fn() -> bool, tx: &Sender<Outcome>) {
    let failure = produce_loop(s, partition, cancelled).err();
    if failure.is_some() {
        s.abort.store(true, Ordering::Release);
    }
    report_outcome(tx, HandlerRole::Produce, partition, failure);
}

fn produce_loop(s: &RunShared, partition: u32, cancelled: &dyn Fn() -> bool) -> Result<(), Failure> {
    let inner = &s.inner;
    let client = inner.services.broker_client(Tier::Edge).map_err(Failure::Broker)?;
    let params = inner
        .services
        .param_client(Tier::Edge)
        .map_err(|e| Failure::Broker(BrokerError::Io(e.to_string())))?;
    let mut ctx = inner.base_context.clone();
    ctx.partition_index = partition;
    ctx.params = params;
    for seq in 0..inner.messages {
        if s.abort.load(Ordering::Acquire) {
            return Ok(());
        }
        if cancelled() {
            return Err(Failure::Lost("edge pilot cancelled".into()));
        }
        ctx.message_id = seq;
        let (produce, _) = inner.slots.get(HandlerRole::Produce).load();
        let Handler::Produce(produce) = produce else { unreachable!() };
        let block = handler::guarded(|| produce(&ctx)).map_err(Failure::Handler)?;
        if block.len() != inner.points || block.dim() != FEATURES {
            return Err(Failure::Handler(format!(
                "produced {}×{} points, expected {}×{FEATURES}",
                block.len(),
                block.dim(),
                inner.points
            )));
        }
        let (edge, _) = inner.slots.get(HandlerRole::EdgeProcess).load();
        let Handler::Edge(edge) = edge else { unreachable!() };
        let block = handler::guarded(|| edge(&ctx, block)).map_err(Failure::Handler)?;
        if block.is_empty() || block.dim() != FEATURES {
            return Err(Failure::Handler(format!(
                "edge handler returned {}×{} points",
                block.len(),
                block.dim()
            )));
        }
        let payload = block.to_payload();
        let bytes = payload.len() as u64;
        let mut record = Record::new(inner.job_id, seq, partition, payload);
        let t = clock::now_micros();
        record.stamp(Stage::Produced, t);
        inner
            .metrics
            .record_stage(inner.job_id, partition, seq, Stage::Produced, t, bytes);
        client
            .produce(&inner.topic, partition, record)
            .map_err(Failure::Broker)?;
        s.produced[partition as usize].fetch_add(1, Ordering::AcqRel);
    }
    Ok(())
}

fn consume_task(s: &RunShared, partitions: &[u32], cancelled: &dyn Fn() -> bool, tx: &Sender<Outcome>) {
    let client = match s.inner.services.broker_client(Tier::Cloud) {
        Ok(c) => c,
        Err(e) => {
            s.abort.store(true, Ordering::Release);
            for &p in partitions {
                report_outcome(tx, HandlerRole::CloudProcess, p, Some(Failure::Broker(e.clone())));
            }
            return;
        }
    };
    for &p in partitions {
        let failure = consume_loop(s, client.as_ref(), p, cancelled).err();
        if failure.is_some() {
            s.abort.store(true, Ordering::Release);
        }
        report_outcome(tx, HandlerRole::CloudProcess, p, failure);
    }
}

fn consume_loop(
    s: &RunShared,
    client: &dyn BrokerApi,
    partition: u32,
    cancelled: &dyn Fn() -> bool,
) -> Result<(), Failure> {
    let inner = &s.inner;
    let params = inner
        .services
        .param_client(Tier::Cloud)
        .map_err(|e| Failure::Broker(BrokerError::Io(e.to_string())))?;
    let mut ctx = inner.base_context.clone();
    ctx.partition_index = partition;
    ctx.params = params;
    let slot = inner.slots.get(HandlerRole::CloudProcess);
    let mut next = client
        .committed(&inner.group, &inner.topic, partition)
        .map_err(Failure::Broker)?;
    while next < inner.messages {
        if s.abort.load(Ordering::Acquire) {
            return Ok(());
        }
        if cancelled() {
            return Err(Failure::Lost("cloud pilot cancelled".into()));
        }
        let batch = client
            .fetch(&inner.topic, partition, next, FETCH_MAX, FETCH_WAIT)
            .map_err(Failure::Broker)?;
        for fetched in batch {
            if s.abort.load(Ordering::Acquire) {
                return Ok(());
            }
            let mut record = fetched.record;
            let last = record.timestamps.last().map_or(0, |(_, t)| *t);
            let consumed = clock::now_micros().max(last);
            record.stamp(Stage::Consumed, consumed);
            let block = PointBlock::from_payload(&record.payload)
                .map_err(|e| Failure::Handler(format!("undecodable payload: {e}")))?;
            let (cloud, version) = slot.load();
            let Handler::Cloud(cloud) = cloud else { unreachable!() };
            ctx.message_id = record.message_id;
            let verdicts = handler::guarded(|| cloud(&ctx, &block)).map_err(Failure::Handler)?;
            record.stamp(Stage::Processed, clock::now_micros().max(consumed));
            inner
                .metrics
                .record_chain(&MetricRecord::from_record(&record, version));
            client
                .commit(
                    &inner.group,
                    &Offset::new(inner.topic.as_str(), partition, fetched.offset + 1),
                )
                .map_err(Failure::Broker)?;
            next = fetched.offset + 1;
            s.processed[partition as usize].fetch_add(1, Ordering::AcqRel);
            s.verdicts.fetch_add(verdicts.len() as u64, Ordering::Relaxed);
            s.outliers.fetch_add(
                verdicts.iter().filter(|v| v.is_outlier).count() as u64,
                Ordering::Relaxed,
            );
        }
    }
    Ok(())
}
