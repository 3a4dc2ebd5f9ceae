use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};

use super::group::assign_round_robin;
use super::{BrokerApi, BrokerError, ConsumerGroup, FetchedRecord, Offset, Record, Stage};
use crate::clock;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    /// Ring capacity used when a topic is created with retention 0.
    pub default_retention: u32,
    pub backpressure_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            default_retention: 4096,
            backpressure_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopicInfo {
    pub partitions: u32,
    pub retention: u32,
}

struct PartitionState {
    /// Offset of `records[0]`.
    base: u64,
    records: VecDeque<Record>,
    /// Next offset to read, per registered group.
    committed: HashMap<String, u64>,
}

impl PartitionState {
    fn end(&self) -> u64 {
        self.base + self.records.len() as u64
    }

    /// The oldest record may go once every registered group moved past it.
    fn oldest_releasable(&self) -> bool {
        self.committed.values().all(|&c| c > self.base)
    }
}

struct PartitionLog {
    state: Mutex<PartitionState>,
    appended: Condvar,
    released: Condvar,
}

struct TopicLog {
    info: TopicInfo,
    partitions: Vec<PartitionLog>,
    groups: Mutex<BTreeMap<String, Vec<String>>>,
}

impl TopicLog {
    fn partition(&self, partition: u32) -> Result<&PartitionLog, BrokerError> {
        self.partitions
            .get(partition as usize)
            .ok_or(BrokerError::PartitionOutOfRange {
                partition,
                count: self.info.partitions,
            })
    }

    fn register_group(&self, group: &str) {
        for p in &self.partitions {
            p.state.lock().committed.entry(group.to_string()).or_insert(0);
        }
    }
}

/// In-process broker. All operations are thread-safe; appends to one
/// partition are serialized, distinct partitions proceed in parallel.
pub struct Broker {
    config: BrokerConfig,
    topics: RwLock<HashMap<String, Arc<TopicLog>>>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(BrokerConfig::default())
    }
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Self {
            config,
            topics: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    fn topic(&self, name: &str) -> Result<Arc<TopicLog>, BrokerError> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    /// `(oldest retained offset, log end)` of a partition.
    pub fn bounds(&self, topic: &str, partition: u32) -> Result<(u64, u64), BrokerError> {
        let t = self.topic(topic)?;
        let st = t.partition(partition)?.state.lock();
        Ok((st.base, st.end()))
    }

    pub fn topic_info(&self, topic: &str) -> Result<TopicInfo, BrokerError> {
        Ok(self.topic(topic)?.info)
    }

    /// Produce with an explicit backpressure wait instead of the configured
    /// default.
    pub fn produce_with_timeout(
        &self,
        topic: &str,
        partition: u32,
        mut record: Record,
        timeout: Duration,
    ) -> Result<Offset, BrokerError> {
        if !record.timestamps_ordered() {
            return Err(BrokerError::MalformedRecord(
                "timestamps are not in time order".into(),
            ));
        }
        let t = self.topic(topic)?;
        let log = t.partition(partition)?;
        let deadline = Instant::now() + timeout;
        let mut st = log.state.lock();
        while st.records.len() >= t.info.retention as usize {
            if st.oldest_releasable() {
                st.records.pop_front();
                st.base += 1;
            } else if log.released.wait_until(&mut st, deadline).timed_out()
                && st.records.len() >= t.info.retention as usize
                && !st.oldest_releasable()
            {
                return Err(BrokerError::BackpressureTimeout);
            }
        }
        let last = record.timestamps.last().map_or(0, |(_, t)| *t);
        record.stamp(Stage::BrokerIn, clock::now_micros().max(last));
        record.partition = partition;
        let offset = st.end();
        st.records.push_back(record);
        drop(st);
        log.appended.notify_all();
        Ok(Offset::new(topic, partition, offset))
    }

    /// Drops a group's registration so it no longer holds back eviction.
    pub fn leave_group(&self, topic: &str, group: &str) -> Result<(), BrokerError> {
        let t = self.topic(topic)?;
        t.groups.lock().remove(group);
        for p in &t.partitions {
            p.state.lock().committed.remove(group);
            p.released.notify_all();
        }
        Ok(())
    }
}

impl BrokerApi for Broker {
    fn create_topic(
        &self,
        name: &str,
        partitions: u32,
        retention: u32,
    ) -> Result<TopicInfo, BrokerError> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(BrokerError::InvalidArgument("bad topic name length".into()));
        }
        if partitions == 0 {
            return Err(BrokerError::InvalidArgument(
                "partition count must be at least 1".into(),
            ));
        }
        let retention = if retention == 0 {
            self.config.default_retention
        } else {
            retention
        };
        let info = TopicInfo {
            partitions,
            retention,
        };
        let mut topics = self.topics.write();
        if let Some(existing) = topics.get(name) {
            return if existing.info == info {
                Ok(info)
            } else {
                Err(BrokerError::TopicExistsWithDifferentConfig(name.to_string()))
            };
        }
        let log = TopicLog {
            info,
            partitions: (0..partitions)
                .map(|_| PartitionLog {
                    state: Mutex::new(PartitionState {
                        base: 0,
                        records: VecDeque::new(),
                        committed: HashMap::new(),
                    }),
                    appended: Condvar::new(),
                    released: Condvar::new(),
                })
                .collect(),
            groups: Mutex::new(BTreeMap::new()),
        };
        topics.insert(name.to_string(), Arc::new(log));
        Ok(info)
    }

    fn produce(&self, topic: &str, partition: u32, record: Record) -> Result<Offset, BrokerError> {
        self.produce_with_timeout(topic, partition, record, self.config.backpressure_timeout)
    }

    fn fetch(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: u32,
        wait: Duration,
    ) -> Result<Vec<FetchedRecord>, BrokerError> {
        let t = self.topic(topic)?;
        let log = t.partition(partition)?;
        let deadline = Instant::now() + wait;
        let mut st = log.state.lock();
        loop {
            if from_offset < st.base {
                return Err(BrokerError::OffsetOutOfRetention { oldest: st.base });
            }
            let end = st.end();
            if from_offset > end {
                return Err(BrokerError::OffsetOutOfRange {
                    offset: from_offset,
                    end,
                });
            }
            if from_offset < end || wait.is_zero() {
                break;
            }
            if log.appended.wait_until(&mut st, deadline).timed_out() {
                break;
            }
        }
        let start = (from_offset - st.base) as usize;
        Ok(st
            .records
            .iter()
            .skip(start)
            .take(max_records as usize)
            .enumerate()
            .map(|(i, r)| FetchedRecord {
                offset: from_offset + i as u64,
                record: r.clone(),
            })
            .collect())
    }

    fn commit(&self, group: &str, offset: &Offset) -> Result<(), BrokerError> {
        let t = self.topic(&offset.topic)?;
        let log = t.partition(offset.partition)?;
        let mut st = log.state.lock();
        let end = st.end();
        if offset.value > end {
            return Err(BrokerError::OffsetOutOfRange {
                offset: offset.value,
                end,
            });
        }
        if !st.committed.contains_key(group) {
            drop(st);
            t.register_group(group);
            st = log.state.lock();
        }
        let slot = st.committed.entry(group.to_string()).or_insert(0);
        if offset.value > *slot {
            *slot = offset.value;
        }
        drop(st);
        log.released.notify_all();
        Ok(())
    }

    fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, BrokerError> {
        let t = self.topic(topic)?;
        let st = t.partition(partition)?.state.lock();
        Ok(st.committed.get(group).copied().unwrap_or(0))
    }

    fn assign_partitions(
        &self,
        topic: &str,
        group: &ConsumerGroup,
    ) -> Result<BTreeMap<u32, String>, BrokerError> {
        let t = self.topic(topic)?;
        if group.members.is_empty() {
            return Err(BrokerError::InvalidArgument(
                "consumer group needs at least one member".into(),
            ));
        }
        let mut members = group.members.clone();
        members.sort();
        members.dedup();
        let changed = {
            let mut groups = t.groups.lock();
            let prev = groups.insert(group.group_id.clone(), members.clone());
            prev.as_ref() != Some(&members)
        };
        if changed {
            log::debug!(
                "rebalancing group {} on {topic} across {} member(s)",
                group.group_id,
                members.len()
            );
        }
        t.register_group(&group.group_id);
        Ok(assign_round_robin(t.info.partitions, &members))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytes::Bytes;
    use uuid::Uuid;

    fn rec(id: u64) -> Record {
        let mut r = Record::new(Uuid::nil(), id, 0, Bytes::from(vec![id as u8; 256]));
        r.stamp(Stage::Produced, clock::now_micros());
        r
    }

    fn ids(v: &[FetchedRecord]) -> Vec<u64> {
        v.iter().map(|f| f.record.message_id).collect()
    }

    #[test]
    fn create_is_idempotent_but_rejects_clashes() {
        let b = Broker::default();
        let info = b.create_topic("jobA-data", 4, 4096).unwrap();
        assert_eq!(info.partitions, 4);
        for p in 0..4 {
            assert_eq!(b.bounds("jobA-data", p).unwrap(), (0, 0));
        }
        assert_eq!(b.create_topic("jobA-data", 4, 4096).unwrap(), info);
        assert_eq!(
            b.create_topic("jobA-data", 8, 4096),
            Err(BrokerError::TopicExistsWithDifferentConfig("jobA-data".into()))
        );
    }

    #[test]
    fn first_offset_is_zero_and_512_appends() {
        let b = Broker::default();
        b.create_topic("t", 1, 4096).unwrap();
        assert_eq!(b.produce("t", 0, rec(0)).unwrap().value, 0);
        let mut last = 0;
        for i in 1..512 {
            last = b.produce("t", 0, rec(i)).unwrap().value;
        }
        assert_eq!(last, 511);
        assert_eq!(b.bounds("t", 0).unwrap(), (0, 512));
    }

    #[test]
    fn produce_errors() {
        let b = Broker::default();
        b.create_topic("t", 4, 16).unwrap();
        assert_eq!(
            b.produce("t", 4, rec(0)),
            Err(BrokerError::PartitionOutOfRange {
                partition: 4,
                count: 4
            })
        );
        assert_eq!(
            b.produce("nope", 0, rec(0)),
            Err(BrokerError::UnknownTopic("nope".into()))
        );
        let mut bad = rec(0);
        bad.timestamps = vec![(Stage::Produced, 10), (Stage::Produced, 5)];
        assert!(matches!(
            b.produce("t", 0, bad),
            Err(BrokerError::MalformedRecord(_))
        ));
    }

    #[test]
    fn broker_ingress_is_stamped() {
        let b = Broker::default();
        b.create_topic("t", 1, 16).unwrap();
        b.produce("t", 0, rec(7)).unwrap();
        let got = b.fetch("t", 0, 0, 1, Duration::ZERO).unwrap();
        let r = &got[0].record;
        assert!(r.timestamp(Stage::BrokerIn).unwrap() >= r.timestamp(Stage::Produced).unwrap());
        assert!(r.timestamps_ordered());
    }

    #[test]
    fn fetch_reads_and_ends() {
        let b = Broker::default();
        b.create_topic("t", 1, 16).unwrap();
        for i in 0..3 {
            b.produce("t", 0, rec(i)).unwrap();
        }
        let all = b.fetch("t", 0, 0, 10, Duration::ZERO).unwrap();
        assert_eq!(all.iter().map(|f| f.offset).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(ids(&all), vec![0, 1, 2]);
        assert!(b.fetch("t", 0, 3, 10, Duration::ZERO).unwrap().is_empty());
        assert_eq!(
            b.fetch("t", 0, 4, 10, Duration::ZERO),
            Err(BrokerError::OffsetOutOfRange { offset: 4, end: 3 })
        );
    }

    #[test]
    fn long_poll_wakes_on_append() {
        let b = Arc::new(Broker::default());
        b.create_topic("t", 1, 16).unwrap();
        let b2 = b.clone();
        let h = std::thread::spawn(move || b2.fetch("t", 0, 0, 10, Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(50));
        b.produce("t", 0, rec(1)).unwrap();
        assert_eq!(ids(&h.join().unwrap().unwrap()), vec![1]);
    }

    #[test]
    fn long_poll_times_out_empty() {
        let b = Broker::default();
        b.create_topic("t", 1, 16).unwrap();
        let t = Instant::now();
        assert!(b.fetch("t", 0, 0, 10, Duration::from_millis(50)).unwrap().is_empty());
        assert!(t.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn ring_evicts_without_groups() {
        let b = Broker::default();
        b.create_topic("t", 1, 4).unwrap();
        for i in 0..10 {
            b.produce("t", 0, rec(i)).unwrap();
        }
        assert_eq!(b.bounds("t", 0).unwrap(), (6, 10));
        assert_eq!(
            b.fetch("t", 0, 2, 10, Duration::ZERO),
            Err(BrokerError::OffsetOutOfRetention { oldest: 6 })
        );
    }

    #[test]
    fn full_ring_blocks_until_commit() {
        let b = Arc::new(Broker::new(BrokerConfig {
            default_retention: 2,
            backpressure_timeout: Duration::from_secs(5),
        }));
        b.create_topic("t", 1, 2).unwrap();
        b.assign_partitions("t", &ConsumerGroup::new("g", ["c0"])).unwrap();
        b.produce("t", 0, rec(0)).unwrap();
        b.produce("t", 0, rec(1)).unwrap();
        let b2 = b.clone();
        let h = std::thread::spawn(move || b2.produce("t", 0, rec(2)));
        std::thread::sleep(Duration::from_millis(50));
        assert!(!h.is_finished());
        b.commit("g", &Offset::new("t", 0, 1)).unwrap();
        assert_eq!(h.join().unwrap().unwrap().value, 2);
        assert_eq!(b.bounds("t", 0).unwrap(), (1, 3));
    }

    #[test]
    fn backpressure_times_out() {
        let b = Broker::default();
        b.create_topic("t", 1, 1).unwrap();
        b.commit("g", &Offset::new("t", 0, 0)).unwrap();
        b.produce("t", 0, rec(0)).unwrap();
        assert_eq!(
            b.produce_with_timeout("t", 0, rec(1), Duration::from_millis(30)),
            Err(BrokerError::BackpressureTimeout)
        );
        b.leave_group("t", "g").unwrap();
        assert_eq!(b.produce("t", 0, rec(1)).unwrap().value, 1);
    }

    #[test]
    fn commits_are_monotonic() {
        let b = Broker::default();
        b.create_topic("t", 1, 16).unwrap();
        for i in 0..6 {
            b.produce("t", 0, rec(i)).unwrap();
        }
        b.commit("g", &Offset::new("t", 0, 5)).unwrap();
        b.commit("g", &Offset::new("t", 0, 3)).unwrap();
        assert_eq!(b.committed("g", "t", 0).unwrap(), 5);
        b.commit("g", &Offset::new("t", 0, 6)).unwrap();
        assert_eq!(b.committed("g", "t", 0).unwrap(), 6);
        assert_eq!(
            b.commit("g", &Offset::new("t", 0, 7)),
            Err(BrokerError::OffsetOutOfRange { offset: 7, end: 6 })
        );
        assert_eq!(
            b.commit("g", &Offset::new("x", 0, 0)),
            Err(BrokerError::UnknownTopic("x".into()))
        );
        assert_eq!(b.committed("other", "t", 0).unwrap(), 0);
    }

    #[test]
    fn assignment_through_broker() {
        let b = Broker::default();
        b.create_topic("t", 4, 16).unwrap();
        let a = b
            .assign_partitions("t", &ConsumerGroup::new("g", ["b", "a", "c"]))
            .unwrap();
        assert_eq!(a[&0], "a");
        assert_eq!(a[&3], "a");
        assert!(b.assign_partitions("t", &ConsumerGroup::new("g", Vec::<String>::new())).is_err());
    }
}
