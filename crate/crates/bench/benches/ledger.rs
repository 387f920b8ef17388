use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fedsim_bench::intra_txs;
use fedsim_core::codec::Encode;
use fedsim_core::inter::{analytic_success, double_spend_rate};
use fedsim_core::ledger::{tx_root, LedgerTx};
use fedsim_core::{hash, Keyring, Keypair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hashing(c: &mut Criterion) {
    let data = vec![0xabu8; 1024];
    let mut g = c.benchmark_group("hash");
    g.throughput(Throughput::Bytes(data.len() as u64));
    g.bench_function("sha256_1k", |b| b.iter(|| hash(black_box(&data))));
    g.finish();
}

fn transactions(c: &mut Criterion) {
    let txs = intra_txs(1000, 64);
    let mut ring = Keyring::new();
    ring.register(&Keypair::from_seed(b"bench"));
    let mut g = c.benchmark_group("intra_tx");
    g.throughput(Throughput::Elements(txs.len() as u64));
    g.bench_function("verify_1000", |b| b.iter(|| txs.iter().all(|t| t.verify(&ring))));
    g.bench_function("encode_1000", |b| b.iter(|| txs.iter().map(|t| t.to_bytes().len()).sum::<usize>()));
    let digests: Vec<_> = txs.iter().map(|t| t.digest()).collect();
    g.bench_function("tx_root_1000", |b| b.iter(|| tx_root(black_box(digests.iter().copied()))));
    g.finish();
}

fn double_spend(c: &mut Criterion) {
    c.bench_function("analytic_q30_z6", |b| b.iter(|| analytic_success(black_box(0.3), black_box(6))));
    c.bench_function("private_fork_20_attempts", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(9),
            |mut rng| double_spend_rate(0.3, 6, 20, &mut rng),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, hashing, transactions, double_spend);
criterion_main!(benches);
