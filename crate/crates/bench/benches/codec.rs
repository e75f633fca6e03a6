use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use liquidsim_bench::{byte_codec, random_object};
use liquidsim_core::erasure::{Backend, Codec, CodecParams};

fn encode(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode");
    for (n, k) in [(12u32, 8u32), (100, 90)] {
        let codec = byte_codec(n, k, 4096);
        let obj = random_object(&codec, 1);
        let parity: Vec<u32> = (k..n).collect();
        g.throughput(Throughput::Bytes(4096 * k as u64));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{n}_{k}")), &parity, |b, parity| {
            b.iter(|| codec.encode(black_box(&obj), parity).unwrap())
        });
    }
    g.finish();
}

fn decode(c: &mut Criterion) {
    let mut g = c.benchmark_group("decode_from_parity");
    for (n, k) in [(12u32, 8u32), (100, 90)] {
        let codec = byte_codec(n, k, 4096);
        let obj = random_object(&codec, 2);
        let all: Vec<u32> = (0..n).collect();
        let frags = codec.encode(&obj, &all).unwrap();
        // Drop as many systematic fragments as the code allows.
        let pick: Vec<_> = frags[(n - k) as usize..].to_vec();
        g.throughput(Throughput::Bytes(4096 * k as u64));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{n}_{k}")), &pick, |b, pick| {
            b.iter(|| codec.decode(black_box(pick)).unwrap())
        });
    }
    g.finish();
}

fn symbolic_verdict(c: &mut Criterion) {
    let codec = Codec::new(CodecParams::new(1222, 1000, 1).unwrap(), Backend::Symbolic).unwrap();
    let efis: Vec<u32> = (222..1222).collect();
    c.bench_function("symbolic_decodable_1000", |b| b.iter(|| codec.decodable(black_box(efis.iter().copied()))));
}

criterion_group!(benches, encode, decode, symbolic_verdict);
criterion_main!(benches);
