//! Lloyd's k-means over points stored as records `x0..x{d-1}: f64` plus a
//! string label the computation never reads.

use std::path::Path;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{load, mode_label, BenchReport, DatasetReader, DatasetWriter, LayoutMode, Result, RunOptions, StorageLayout, WorkloadError};
use crate::schema::{FieldKind, FieldSpec, ObjectSchema};
use crate::store::{Store, Value};
use crate::tiers::TierId;

/// Points per parallel work unit. Fixed so sums fold in the same order
/// regardless of thread count.
pub const CHUNK: usize = 4096;

pub fn kmeans_schema(d: usize) -> ObjectSchema {
    let mut fields: Vec<FieldSpec> = (0..d)
        .map(|i| FieldSpec::new(format!("x{i}"), FieldKind::F64, &[TierId::PMEM]))
        .collect();
    fields.push(FieldSpec::new("label", FieldKind::String, &[TierId::PMEM, TierId::DISK]));
    ObjectSchema::new("point", fields).expect("generated schema is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointsInfo {
    /// True blob centers.
    pub means: Vec<Vec<f64>>,
    pub checksum: u64,
}

/// Writes `n` points in `d` dimensions drawn around `blobs` centers,
/// assigned round-robin, with unit normal noise.
pub fn gen_points(path: &Path, n: u64, d: usize, blobs: usize, seed: u64) -> Result<PointsInfo> {
    if d == 0 || blobs == 0 {
        return Err(WorkloadError::InvalidParam("dimensions and blob count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let schema = kmeans_schema(d);
    let mut w = DatasetWriter::create(path, &schema, n)?;
    let mut values = Vec::with_capacity(d + 1);
    for i in 0..n {
        let b = (i % blobs as u64) as usize;
        values.clear();
        values.extend(means[b].iter().map(|m| Value::F64(m + noise.sample(&mut rng))));
        values.push(Value::Str(format!("blob-{b}")));
        w.write_record(&values)?;
    }
    Ok(PointsInfo {
        means,
        checksum: w.finish()?,
    })
}

/// NO_PMEM serializes whole points to disk; ALL_PMEM keeps everything on
/// pmem; SELECT_PMEM keeps coordinates on pmem and labels on disk.
pub fn kmeans_layout(mode: LayoutMode, schema: &ObjectSchema) -> Result<StorageLayout> {
    match mode {
        LayoutMode::NoPmem => Ok(StorageLayout::Serialized),
        LayoutMode::AllPmem => StorageLayout::retagged(schema, |_| TierId::PMEM),
        LayoutMode::SelectPmem => StorageLayout::retagged(schema, |f| if is_coord(f) { TierId::PMEM } else { TierId::DISK }),
    }
}

fn is_coord(name: &str) -> bool {
    name.strip_prefix('x').is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub report: BenchReport,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster sizes after the last pass.
    pub sizes: Vec<u64>,
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d: f64 = point.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Loads `dataset` under `layout`, then runs `iterations` Lloyd passes,
/// re-reading every point from the store each pass. Centroids start at the
/// first `k` distinct points; an empty cluster keeps its centroid.
pub fn kmeans(store: &Store, dataset: &Path, k: usize, iterations: usize, layout: &StorageLayout, opts: RunOptions) -> Result<KmeansResult> {
    if k == 0 {
        return Err(WorkloadError::InvalidParam("k must be positive".into()));
    }
    let reader = DatasetReader::open(dataset)?;
    let coords: Vec<usize> = reader
        .schema()
        .fields
        .iter()
        .enumerate()
        .filter(|(_, f)| is_coord(&f.name) && f.kind == FieldKind::F64)
        .map(|(i, _)| i)
        .collect();
    if coords.is_empty() {
        return Err(WorkloadError::Dataset("no coordinate fields x0.. of kind f64".into()));
    }
    let d = coords.len();
    let t0 = Instant::now();
    let loaded = load(store, reader, layout, opts.profile)?;
    let load_ns = t0.elapsed().as_nanos() as u64;
    let n = loaded.len();

    let before = store.metrics();
    let t1 = Instant::now();
    let point = |i: u64| -> Result<Vec<f64>> {
        let row = loaded.row(store, i, opts.profile)?;
        Ok(loaded
            .read(store, &row, &coords, opts.profile)?
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect())
    };

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..n {
        if centroids.len() == k {
            break;
        }
        let p = point(i)?;
        if !centroids.iter().any(|c| c.iter().zip(&p).all(|(a, b)| a.to_bits() == b.to_bits())) {
            centroids.push(p);
        }
    }
    if centroids.len() < k {
        return Err(WorkloadError::KTooLarge { k, distinct: centroids.len() });
    }

    let indices: Vec<u64> = (0..n).collect();
    let mut sizes = vec![0u64; k];
    for _ in 0..iterations {
        let partials = opts.exec.map_chunks(&indices, CHUNK, |_, chunk| -> Result<(Vec<f64>, Vec<u64>)> {
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0u64; k];
            for &i in chunk {
                let p = point(i)?;
                let c = nearest(&p, &centroids);
                counts[c] += 1;
                for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(&p) {
                    *s += x;
                }
            }
            Ok((sums, counts))
        });
        let mut sums = vec![0.0; k * d];
        sizes = vec![0; k];
        for part in partials {
            let (s, c) = part?;
            sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            sizes.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }
        for (c, cen) in centroids.iter_mut().enumerate() {
            if sizes[c] > 0 {
                for (x, s) in cen.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *x = s / sizes[c] as f64;
                }
            }
        }
    }
    let exec_ns = t1.elapsed().as_nanos() as u64;
    let delta = store.metrics().since(&before);

    let mut bits = Vec::with_capacity(k * d * 8);
    for x in centroids.iter().flatten() {
        bits.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    Ok(KmeansResult {
        report: BenchReport {
            workload: "kmeans".into(),
            mode: mode_label(layout, &opts),
            records: n,
            load_ns,
            exec_ns,
            bytes_materialized: delta.bytes_materialized,
            serde_events: delta.serde_events(),
            checksum: super::fnv64(&bits),
        },
        centroids,
        sizes,
    })
}

