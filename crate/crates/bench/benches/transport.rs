use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pilot_edge::broker::wire::{Frame, Request};
use pilot_edge::BrokerApi;
use pilot_edge_bench::{broker_with_topic, produce_frame, record, SIZES, TOPIC};

fn wire_decode(c: &mut Criterion) {
    let mut g = c.benchmark_group("wire_decode_produce");
    for n in SIZES {
        let bytes = produce_frame(n);
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &bytes, |bench, bytes| {
            bench.iter(|| Request::decode(&Frame::parse(bytes).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn inproc_round_trip(c: &mut Criterion) {
    let mut g = c.benchmark_group("inproc_produce_fetch");
    for n in SIZES {
        let broker = broker_with_topic(64);
        let rec = record(n);
        let mut next = 0u64;
        g.throughput(Throughput::Bytes(rec.payload.len() as u64));
        g.bench_function(BenchmarkId::from_parameter(n), |bench| {
            bench.iter(|| {
                broker.produce(TOPIC, 0, rec.clone()).unwrap();
                let got = broker.fetch(TOPIC, 0, next, 1, Duration::ZERO).unwrap();
                next += 1;
                got
            })
        });
    }
    g.finish();
}

criterion_group!(benches, wire_decode, inproc_round_trip);
criterion_main!(benches);
