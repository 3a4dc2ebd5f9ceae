//! Pilot-managed edge-to-cloud streaming pipeline runtime.
//!
//! Resources are acquired as *pilots* (worker pools on the edge or cloud
//! tier) before any work is bound to them. A three-stage function pipeline
//! (produce on the edge, optional in-line edge processing, cloud processing)
//! is then placed onto those pilots and moves point blocks through an
//! embedded partitioned log broker. Model state is shared through a
//! versioned parameter server, WAN links between tiers can be emulated, and
//! every message carries a timestamp chain that feeds the metrics reports.
//!
//! Module map:
//! - [`pilot`]: pilot lifecycle and the resource backend registry
//! - [`broker`]: partitioned log, consumer groups, binary wire protocol
//! - [`param`]: versioned key-value store with compare-and-set
//! - [`pipeline`]: handler slots, placement, run loop and hot-swap
//! - [`mlops`]: data generator and the k-means, isolation forest and
//!   autoencoder detectors
//! - [`netem`]: delay and bandwidth shaping of client transports
//! - [`metrics`]: timestamp chains, aggregation, CSV export
//! - [`scenario`]: experiment driver used by the CLI

pub mod broker;
pub mod clock;
pub mod metrics;
pub mod mlops;
pub mod netem;
pub mod param;
pub mod pilot;
pub mod pipeline;
pub mod scenario;
pub mod services;

pub use broker::{Broker, BrokerApi, BrokerConfig, BrokerError, ConsumerGroup, Offset, Record, Stage};
pub use metrics::{MetricRecord, MetricsSink, RunReport, Summary};
pub use mlops::{PointBlock, Verdict, FEATURES};
pub use netem::{LinkSpec, LinkTable};
pub use param::{ParamApi, ParamError, ParamStore};
pub use pilot::{
    BackendRegistry, PilotDescription, PilotError, PilotHandle, PilotManager, PilotState, Tier,
};
pub use pipeline::{FunctionContext, PipelineConfig, PipelineError, PipelineHandle};
pub use services::{Services, Transport};
