//! Sequential vs rayon execution of the sweep and k-means kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fieldtier::par::Exec;
use fieldtier::placement::{random_instance, sweep, SweepAxis, SweepParam};
use fieldtier::store::Store;
use fieldtier::tiers::{Backing, TierConfig};
use fieldtier::workloads::kmeans::{gen_points, kmeans, kmeans_layout};
use fieldtier::workloads::{DatasetReader, LayoutMode, RunOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_sweep(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = random_instance(&mut rng, 6, 3);
    p.s = vec![u64::MAX; 3];
    let a1 = SweepAxis::linear(SweepParam::Iters { field: 0, device: 0, ns_per_iter: 1e5 }, 0.0, 40.0, 41);
    let a2 = SweepAxis::linear(SweepParam::Iters { field: 1, device: 0, ns_per_iter: 1e5 }, 0.0, 40.0, 41);
    let mut g = c.benchmark_group("sweep_41x41");
    for (name, exec) in EXECS {
        g.bench_function(name, |b| b.iter(|| sweep(&p, &a1, Some(&a2), exec).unwrap()));
    }
    g.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("points.ds");
    gen_points(&path, 20_000, 12, 8, 1).unwrap();
    let schema = DatasetReader::open(&path).unwrap().schema().clone();
    let layout = kmeans_layout(LayoutMode::AllPmem, &schema).unwrap();
    let mut g = c.benchmark_group("kmeans_20k");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let sub = tempfile::tempdir().unwrap();
                let store = Store::open(&[
                    TierConfig::volatile("dram", 64 << 20),
                    TierConfig::new("pmem", 256 << 20, Backing::MappedFile(sub.path().join("pmem.arena"))),
                    TierConfig::new("disk", 1 << 30, Backing::Directory(sub.path().join("disk"))),
                ])
                .unwrap();
                let opts = RunOptions { exec, ..RunOptions::default() };
                kmeans(&store, &path, 8, 5, &layout, opts).unwrap().report.exec_ns
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_sweep, bench_kmeans);
criterion_main!(benches);
