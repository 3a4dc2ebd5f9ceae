mod common;

use std::time::Duration;

use common::oracle::*;
use pilot_edge::broker::wire::{Frame, Request, Response};
use pilot_edge::{Broker, BrokerApi, BrokerConfig, Offset, Tier, Transport};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inproc_broker_matches_reference_log(
        partitions in 1u32..4,
        retention in 1u32..6,
        ops in prop::collection::vec(op(3), 1..120),
    ) {
        let ops: Vec<Op> = ops.into_iter().filter(|o| match o {
            Op::Produce(p) | Op::Fetch(p, _) | Op::CommitPosition(p) | Op::CommitPastEnd(p) => *p < partitions,
            Op::Restart => true,
        }).collect();
        let broker = Broker::new(BrokerConfig::default());
        let produce = |p, rec| broker.produce_with_timeout(TOPIC, p, rec, Duration::ZERO);
        check(&broker, &produce, partitions, retention, &ops);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn tcp_broker_matches_reference_log(ops in prop::collection::vec(op(2), 1..80)) {
        let env = common::Env::new(1, Transport::Tcp);
        let client = env.services.broker_client(Tier::Cloud).unwrap();
        let produce = |p, rec| client.produce(TOPIC, p, rec);
        // retention large enough that nothing blocks
        check(client.as_ref(), &produce, 2, 1024, &ops);
    }
}

#[test]
fn consumer_restart_resumes_at_commit() {
    let broker = Broker::default();
    broker.create_topic("t", 1, 100).unwrap();
    for i in 0..10 {
        broker.produce("t", 0, record(i, 0)).unwrap();
    }
    let first = broker.fetch("t", 0, 0, 4, Duration::ZERO).unwrap();
    broker.commit("g", &Offset::new("t", 0, first.last().unwrap().offset + 1)).unwrap();
    let resume = broker.committed("g", "t", 0).unwrap();
    let rest = broker.fetch("t", 0, resume, 100, Duration::ZERO).unwrap();
    let ids: Vec<u64> = first.iter().chain(&rest).map(|f| f.record.message_id).collect();
    assert_eq!(ids, (0..10).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn requests_survive_the_wire(req in any_request()) {
        let bytes = req.encode().to_bytes();
        let back = Request::decode(&Frame::parse(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back, req);
    }

    #[test]
    fn responses_survive_the_wire(resp in any_response()) {
        let frame = resp.encode(resp_op(&resp));
        let back = Response::decode(&Frame::parse(&frame.to_bytes()).unwrap()).unwrap();
        prop_assert_eq!(back, resp);
    }

    #[test]
    fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(frame) = Frame::parse(&bytes) {
            let _ = Request::decode(&frame);
            let _ = Response::decode(&frame);
        }
    }

    #[test]
    fn truncated_frames_are_rejected(req in any_request(), cut in 1usize..64) {
        let bytes = req.encode().to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(Frame::parse(&bytes[..keep]).is_err());
    }
}
