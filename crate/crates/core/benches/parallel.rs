//! Encryption and aggregation of one model upload, on a single-thread pool
//! and on the default pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_bigint::{BigInt, BigUint};
use privfl::fe::{funkey_agg, Scheme};
use privfl::numtheory::{setup_group, PlaintextBound};
use privfl::protocol::{aggregate_encrypted, EncryptedUpdate};
use privfl::rng::stream;

const ELEMENTS: usize = 256;
const CLIENTS: usize = 8;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let params = setup_group(256, &mut stream(1, "crypto", &[])).unwrap();
    let bound = PlaintextBound::new(params.n(), ELEMENTS as u64).unwrap();
    let scheme = Scheme::new(params, bound);
    let keys: Vec<_> = (0..CLIENTS)
        .map(|i| scheme.keygen(i as u32 + 1, &mut stream(1, "keygen", &[i as u64]), 768).unwrap())
        .collect();
    let pks: Vec<_> = keys.iter().map(|k| k.public().clone()).collect();
    let eta = BigUint::from(3u32);
    let upload = |k: usize| EncryptedUpdate {
        client_index: k as u32 + 1,
        round: 0,
        ciphertexts: privfl::par::map_range(ELEMENTS, |e| {
            scheme.encrypt(&keys[k], &BigInt::from(e as i64 - 100), &eta, 0, e as u64).unwrap()
        }),
    };
    let updates: Vec<EncryptedUpdate> = (0..CLIENTS).map(upload).collect();
    let gamma = vec![1u8; CLIENTS];
    let partials: Vec<_> = keys
        .iter()
        .map(|k| scheme.funkeygen_partial(k, &pks, 1, 0, ELEMENTS as u64).unwrap())
        .collect();
    let agg_key = funkey_agg(&partials).unwrap();

    let mut group = c.benchmark_group("upload");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("encrypt", name), |b| {
            b.iter(|| pool.install(|| upload(0)))
        });
        group.bench_function(BenchmarkId::new("aggregate", name), |b| {
            b.iter(|| pool.install(|| aggregate_encrypted(&scheme, &updates, &agg_key, &gamma).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
