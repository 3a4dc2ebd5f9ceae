#![allow(dead_code)]

//! Reference log and wire-frame strategies shared by the broker suites.

use std::time::Duration;

use bytes::Bytes;
use pilot_edge::broker::wire::{ErrorCode, Request, Response};
use pilot_edge::broker::FetchedRecord;
use pilot_edge::{BrokerApi, BrokerError, ConsumerGroup, Offset, Record, Stage};
use proptest::prelude::*;
use uuid::Uuid;

pub const TOPIC: &str = "oracle";
pub const GROUP: &str = "g";

#[derive(Debug, Clone)]
pub enum Op {
    Produce(u32),
    Fetch(u32, u32),
    CommitPosition(u32),
    CommitPastEnd(u32),
    Restart,
}

pub fn op(partitions: u32) -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..partitions).prop_map(Op::Produce),
        3 => (0..partitions, 1u32..6).prop_map(|(p, n)| Op::Fetch(p, n)),
        2 => (0..partitions).prop_map(Op::CommitPosition),
        1 => (0..partitions).prop_map(Op::CommitPastEnd),
        1 => Just(Op::Restart),
    ]
}

/// Reference partition: every record ever appended plus the retained window.
#[derive(Default)]
struct RefPartition {
    log: Vec<u64>,
    base: u64,
    committed: u64,
}

struct Reference {
    parts: Vec<RefPartition>,
    retention: u64,
    position: Vec<u64>,
}

impl Reference {
    fn end(&self, p: usize) -> u64 {
        self.parts[p].log.len() as u64
    }
}

pub fn record(id: u64, partition: u32) -> Record {
    Record::new(Uuid::nil(), id, partition, Bytes::from(id.to_le_bytes().to_vec()))
}

/// Runs `ops` against the broker and the reference.
pub fn check(
    api: &dyn BrokerApi,
    produce: &dyn Fn(u32, Record) -> Result<Offset, BrokerError>,
    partitions: u32,
    retention: u32,
    ops: &[Op],
) {
    api.create_topic(TOPIC, partitions, retention).unwrap();
    api.assign_partitions(TOPIC, &ConsumerGroup::new(GROUP, ["c0"])).unwrap();
    let mut r = Reference {
        parts: (0..partitions).map(|_| RefPartition::default()).collect(),
        retention: u64::from(retention),
        position: vec![0; partitions as usize],
    };
    let mut next_id = 0;
    for op in ops {
        match *op {
            Op::Produce(p) => {
                let rp = &mut r.parts[p as usize];
                let retained = rp.log.len() as u64 - rp.base;
                let full = retained >= r.retention;
                let evictable = rp.committed > rp.base;
                let got = produce(p, record(next_id, p));
                if full && !evictable {
                    assert_eq!(got, Err(BrokerError::BackpressureTimeout));
                } else {
                    if full {
                        rp.base += 1;
                    }
                    assert_eq!(got.unwrap().value, rp.log.len() as u64);
                    rp.log.push(next_id);
                    next_id += 1;
                }
            }
            Op::Fetch(p, max) => {
                let pos = r.position[p as usize];
                let rp = &r.parts[p as usize];
                let got = api.fetch(TOPIC, p, pos, max, Duration::ZERO);
                if pos < rp.base {
                    assert_eq!(got, Err(BrokerError::OffsetOutOfRetention { oldest: rp.base }));
                    continue;
                }
                let got: Vec<(u64, u64)> = got
                    .unwrap()
                    .into_iter()
                    .map(|FetchedRecord { offset, record }| {
                        assert_eq!(record.partition, p);
                        assert!(record.timestamp(Stage::BrokerIn).is_some());
                        (offset, record.message_id)
                    })
                    .collect();
                let want: Vec<(u64, u64)> = (pos..r.end(p as usize))
                    .take(max as usize)
                    .map(|o| (o, rp.log[o as usize]))
                    .collect();
                assert_eq!(got, want);
                r.position[p as usize] += want.len() as u64;
            }
            Op::CommitPosition(p) => {
                let pos = r.position[p as usize];
                api.commit(GROUP, &Offset::new(TOPIC, p, pos)).unwrap();
                let rp = &mut r.parts[p as usize];
                rp.committed = rp.committed.max(pos);
                assert_eq!(api.committed(GROUP, TOPIC, p).unwrap(), rp.committed);
            }
            Op::CommitPastEnd(p) => {
                let end = r.end(p as usize);
                assert_eq!(
                    api.commit(GROUP, &Offset::new(TOPIC, p, end + 1)),
                    Err(BrokerError::OffsetOutOfRange { offset: end + 1, end })
                );
            }
            Op::Restart => {
                for p in 0..partitions {
                    r.position[p as usize] = api.committed(GROUP, TOPIC, p).unwrap();
                    assert_eq!(r.position[p as usize], r.parts[p as usize].committed);
                }
            }
        }
    }
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_./-]{0,24}"
}

fn stamped() -> impl Strategy<Value = Vec<(Stage, u64)>> {
    prop::collection::vec((prop::sample::select(Stage::ALL.to_vec()), 0u64..1 << 50), 0..4).prop_map(|mut v| {
        v.sort_by_key(|&(_, t)| t);
        v
    })
}

fn any_record(partition: u32) -> impl Strategy<Value = Record> {
    (any::<u128>(), any::<u64>(), stamped(), prop::collection::vec(any::<u8>(), 0..300)).prop_map(
        move |(job, id, timestamps, payload)| Record {
            job_id: Uuid::from_u128(job),
            message_id: id,
            partition,
            payload: Bytes::from(payload),
            timestamps,
        },
    )
}

pub fn any_request() -> impl Strategy<Value = Request> {
    let blob = prop::collection::vec(any::<u8>(), 0..200).prop_map(Bytes::from);
    prop_oneof![
        (text(), any::<u32>(), any::<u32>()).prop_map(|(name, partitions, retention)| Request::CreateTopic {
            name,
            partitions,
            retention
        }),
        (text(), any::<u32>()).prop_flat_map(|(topic, partition)| any_record(partition).prop_map(move |record| {
            Request::Produce {
                topic: topic.clone(),
                partition,
                record,
            }
        })),
        (text(), any::<u32>(), any::<u64>(), any::<u32>(), any::<u32>()).prop_map(
            |(topic, partition, from_offset, max_records, wait_ms)| Request::Fetch {
                topic,
                partition,
                from_offset,
                max_records,
                wait_ms
            }
        ),
        (text(), text(), any::<u32>(), any::<u64>()).prop_map(|(group, topic, partition, offset)| Request::Commit {
            group,
            topic,
            partition,
            offset
        }),
        (text(), text(), prop::collection::vec(text(), 0..5)).prop_map(|(topic, group, members)| Request::Assign {
            topic,
            group,
            members
        }),
        (text(), any::<Option<u64>>(), blob).prop_map(|(key, expected_version, blob)| Request::PutParam {
            key,
            expected_version,
            blob
        }),
        (text(), any::<Option<u64>>(), any::<u32>()).prop_map(|(key, min_version, wait_ms)| Request::GetParam {
            key,
            min_version,
            wait_ms
        }),
        (text(), text(), any::<u32>()).prop_map(|(group, topic, partition)| Request::Committed {
            group,
            topic,
            partition
        }),
    ]
}

pub fn any_response() -> impl Strategy<Value = Response> {
    let codes = vec![
        ErrorCode::UnknownTopic,
        ErrorCode::OffsetOutOfRange,
        ErrorCode::VersionConflict,
        ErrorCode::Protocol,
        ErrorCode::Internal,
    ];
    prop_oneof![
        any::<u32>().prop_flat_map(|partition| prop::collection::vec((any::<u64>(), any_record(partition)), 0..4)
            .prop_map(move |rs| Response::Fetched {
                partition,
                records: rs.into_iter().map(|(offset, record)| FetchedRecord { offset, record }).collect(),
            })),
        any::<u64>().prop_map(|offset| Response::Produced { offset }),
        prop::collection::vec((any::<u32>(), text()), 0..5).prop_map(Response::Assigned),
        (any::<u64>(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..100)).prop_map(|(v, t, b)| {
            Response::ParamGot {
                version: v,
                updated_micros: t,
                blob: Bytes::from(b),
            }
        }),
        (prop::sample::select(codes), text()).prop_map(|(code, message)| Response::Error { code, message }),
    ]
}

/// Op of the request a response answers.
pub fn resp_op(resp: &Response) -> u8 {
    let req = match resp {
        Response::Fetched { .. } => Request::Fetch {
            topic: String::new(),
            partition: 0,
            from_offset: 0,
            max_records: 0,
            wait_ms: 0,
        },
        Response::Produced { .. } => Request::Produce {
            topic: String::new(),
            partition: 0,
            record: record(0, 0),
        },
        Response::Assigned(_) => Request::Assign {
            topic: String::new(),
            group: String::new(),
            members: vec![],
        },
        _ => Request::GetParam {
            key: String::new(),
            min_version: None,
            wait_ms: 0,
        },
    };
    req.op()
}
