//! Criterion microbenchmarks over the runtime's hot primitives: pointer
//! codec, group algebra, and the transport data path (single unit, so no
//! thread scheduling noise).

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use pgas_core::transport::{RegionId, Transport};
use pgas_core::{GlobalPtr, Group, UnitId};

fn bench_gptr_codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("gptr");
    g.bench_function("encode", |b| {
        b.iter(|| {
            GlobalPtr::encode(
                black_box(UnitId(7)),
                black_box(3),
                black_box(1),
                black_box(4096),
            )
            .unwrap()
        })
    });
    let p = GlobalPtr::encode(UnitId(7), 3, 1, 4096).unwrap();
    g.bench_function("decode", |b| b.iter(|| black_box(p).decode()));
    g.bench_function("advance", |b| {
        b.iter(|| black_box(p).advance(black_box(64)).unwrap())
    });
    g.finish();
}

fn bench_group_union(c: &mut Criterion) {
    let a = Group::from_members((0..128).step_by(2).map(UnitId).collect());
    let b = Group::from_members((0..128).step_by(3).map(UnitId).collect());
    c.bench_function("group/union_128", |bench| {
        bench.iter(|| black_box(&a).union(black_box(&b)))
    });
}

fn bench_transport_put_get(c: &mut Criterion) {
    let tr = Transport::new(1);
    let me = UnitId(0);
    let region = RegionId::segment(1, 0);
    tr.region_create(me, region, &[me], 1 << 20).unwrap();
    tr.region_epoch_open(me, region).unwrap();

    let mut g = c.benchmark_group("transport");
    for size in [8usize, 1024, 65536] {
        let src = vec![0xA5u8; size];
        g.throughput(Throughput::Bytes(size as u64));
        g.bench_function(format!("put_wait/{size}"), |b| {
            b.iter(|| {
                let req = tr.put_nb(me, region, 0, 0, black_box(&src)).unwrap();
                tr.request_wait(me, req).unwrap()
            })
        });
        g.bench_function(format!("get_wait/{size}"), |b| {
            b.iter(|| {
                let req = tr.get_nb(me, region, 0, 0, black_box(size)).unwrap();
                tr.request_wait(me, req).unwrap()
            })
        });
    }
    g.finish();
    tr.region_destroy(me, region).unwrap();
}

fn bench_atomics(c: &mut Criterion) {
    let tr = Transport::new(1);
    let me = UnitId(0);
    let region = RegionId::segment(2, 0);
    tr.region_create(me, region, &[me], 64).unwrap();
    tr.region_epoch_open(me, region).unwrap();

    c.bench_function("transport/fetch_and_store", |b| {
        b.iter(|| tr.fetch_and_store(me, region, 0, 0, black_box(42)).unwrap())
    });
    c.bench_function("transport/compare_and_swap", |b| {
        b.iter(|| {
            tr.compare_and_swap(me, region, 0, 8, black_box(0), black_box(0))
                .unwrap()
        })
    });
    tr.region_destroy(me, region).unwrap();
}

criterion_group!(
    benches,
    bench_gptr_codec,
    bench_group_union,
    bench_transport_put_get,
    bench_atomics
);
criterion_main!(benches);
