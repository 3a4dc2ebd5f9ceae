//! Embedded partitioned append-only log.
//!
//! Topics are split into a fixed number of partitions, each a bounded ring
//! of [`Record`]s addressed by monotonically increasing offsets. Consumer
//! groups commit offsets per partition; a full ring only evicts its oldest
//! record once every registered group has committed past it, otherwise the
//! producer blocks (backpressure). The same [`BrokerApi`] is served
//! in-process by [`Broker`] and over TCP by [`server`] / [`client`].

pub mod client;
mod group;
mod log;
pub mod server;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use bytes::Bytes;
use thiserror::Error;
use uuid::Uuid;

pub use self::group::{assign_round_robin, ConsumerGroup};
pub use self::log::{Broker, BrokerConfig, TopicInfo};

/// Bytes per serialized point: 32 features of 8 bytes each.
pub const POINT_BYTES: usize = crate::mlops::FEATURES * 8;

/// Timestamp stage tags carried in [`Record::timestamps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Stage {
    Produced = 1,
    BrokerIn = 2,
    Consumed = 3,
    Processed = 4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Produced,
        Stage::BrokerIn,
        Stage::Consumed,
        Stage::Processed,
    ];

    pub fn from_tag(tag: u8) -> Option<Stage> {
        match tag {
            1 => Some(Stage::Produced),
            2 => Some(Stage::BrokerIn),
            3 => Some(Stage::Consumed),
            4 => Some(Stage::Processed),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Produced => "produced",
            Stage::BrokerIn => "broker_in",
            Stage::Consumed => "consumed",
            Stage::Processed => "processed",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub job_id: Uuid,
    pub message_id: u64,
    pub partition: u32,
    pub payload: Bytes,
    /// `(stage, epoch micros)`, non-decreasing in time.
    pub timestamps: Vec<(Stage, u64)>,
}

impl Record {
    pub fn new(job_id: Uuid, message_id: u64, partition: u32, payload: Bytes) -> Self {
        Self {
            job_id,
            message_id,
            partition,
            payload,
            timestamps: Vec::new(),
        }
    }

    pub fn stamp(&mut self, stage: Stage, micros: u64) {
        self.timestamps.push((stage, micros));
    }

    pub fn timestamp(&self, stage: Stage) -> Option<u64> {
        self.timestamps
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, t)| *t)
    }

    pub fn timestamps_ordered(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[0].1 <= w[1].1)
    }

    /// Point count if the payload is a whole number (≥ 1) of points.
    pub fn data_points(&self) -> Option<usize> {
        let len = self.payload.len();
        (len > 0 && len.is_multiple_of(POINT_BYTES)).then_some(len / POINT_BYTES)
    }
}

/// A record together with the offset it was stored at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedRecord {
    pub offset: u64,
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Offset {
    pub topic: String,
    pub partition: u32,
    pub value: u64,
}

impl Offset {
    pub fn new(topic: impl Into<String>, partition: u32, value: u64) -> Self {
        Self {
            topic: topic.into(),
            partition,
            value,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("partition {partition} out of range for {count} partitions")]
    PartitionOutOfRange { partition: u32, count: u32 },
    #[error("topic `{0}` exists with a different configuration")]
    TopicExistsWithDifferentConfig(String),
    #[error("producer blocked longer than the backpressure timeout")]
    BackpressureTimeout,
    #[error("offset no longer retained, oldest is {oldest}")]
    OffsetOutOfRetention { oldest: u64 },
    #[error("offset {offset} is past the log end {end}")]
    OffsetOutOfRange { offset: u64, end: u64 },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BrokerError {
    fn from(e: std::io::Error) -> Self {
        BrokerError::Io(e.to_string())
    }
}

/// Operations shared by the in-process broker and the TCP client.
pub trait BrokerApi: Send + Sync {
    /// Creates a topic; repeating the call with identical settings is a no-op.
    fn create_topic(
        &self,
        name: &str,
        partitions: u32,
        retention: u32,
    ) -> Result<TopicInfo, BrokerError>;

    /// Appends a record and returns the offset it was written at.
    fn produce(&self, topic: &str, partition: u32, record: Record) -> Result<Offset, BrokerError>;

    /// Reads up to `max_records` starting at `from_offset`. With a non-zero
    /// `wait`, blocks up to that long while the partition has nothing new.
    fn fetch(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: u32,
        wait: Duration,
    ) -> Result<Vec<FetchedRecord>, BrokerError>;

    /// Stores `offset.value` as the group's next offset to read. Stale
    /// commits are ignored.
    fn commit(&self, group: &str, offset: &Offset) -> Result<(), BrokerError>;

    /// The group's committed offset, 0 when nothing was committed yet.
    fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, BrokerError>;

    /// Registers the group on the topic and returns partition → member.
    fn assign_partitions(
        &self,
        topic: &str,
        group: &ConsumerGroup,
    ) -> Result<BTreeMap<u32, String>, BrokerError>;
}
