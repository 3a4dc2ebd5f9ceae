//! Fixtures shared by the criterion benches.

use pilot_edge::broker::wire::Request;
use pilot_edge::mlops::{Generator, GeneratorSpec};
use pilot_edge::{Broker, BrokerApi, BrokerConfig, PointBlock, Record};
use uuid::Uuid;

/// Message sizes swept by the benches.
pub const SIZES: [usize; 3] = [25, 1_000, 10_000];

pub const TOPIC: &str = "bench";

/// A block of `n` points from the default generator.
pub fn block(n: usize, seed: u64) -> PointBlock {
    Generator::new(GeneratorSpec::with_seed(seed)).block(0, n).0
}

/// A record carrying `n` points.
pub fn record(n: usize) -> Record {
    Record::new(Uuid::nil(), 0, 0, block(n, 1).to_payload())
}

/// Broker with the one-partition topic [`TOPIC`].
pub fn broker_with_topic(retention: u32) -> Broker {
    let broker = Broker::new(BrokerConfig::default());
    broker
        .create_topic(TOPIC, 1, retention)
        .expect("fresh broker accepts the topic");
    broker
}

/// An encoded produce frame carrying `n` points.
pub fn produce_frame(n: usize) -> Vec<u8> {
    Request::Produce {
        topic: TOPIC.into(),
        partition: 0,
        record: record(n),
    }
    .encode()
    .to_bytes()
}
