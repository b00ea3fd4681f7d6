//! Social-graph nodes with string features, an adjacency list and a large
//! opaque payload, searched by a conjunction of feature equalities.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{load, mode_label, BenchReport, DatasetReader, DatasetWriter, LayoutMode, Result, RunOptions, StorageLayout, WorkloadError};
use crate::schema::{FieldKind, FieldSpec, ObjectSchema};
use crate::store::{Store, Value};
use crate::tiers::TierId;

pub const COMPANY_TARGET: &str = "company-target";
pub const CITY_TARGET: &str = "city-target";

#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub nodes: u64,
    /// Undirected edges; capped at what `nodes` allows.
    pub edges: u64,
    /// String features per node, at least 2 (`company`, `city`, then `f2..`).
    pub features: usize,
    pub payload_bytes: usize,
    /// Share of nodes matching the default query.
    pub planted_fraction: f64,
    pub seed: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            nodes: 10_000,
            edges: 50_000,
            features: 4,
            payload_bytes: 10 * 1024,
            planted_fraction: 0.01,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInfo {
    pub nodes: u64,
    pub edges: u64,
    /// Ids of nodes satisfying [`default_query`], ascending.
    pub planted: Vec<i64>,
    pub checksum: u64,
}

pub fn feature_names(features: usize) -> Vec<String> {
    (0..features.max(2))
        .map(|j| match j {
            0 => "company".to_string(),
            1 => "city".to_string(),
            _ => format!("f{j}"),
        })
        .collect()
}

/// `id` and features prefer pmem; `friends` and `payload` live on disk.
pub fn graph_schema(features: usize) -> ObjectSchema {
    let mut fields = vec![FieldSpec::new("id", FieldKind::I64, &[TierId::PMEM])];
    for name in feature_names(features) {
        fields.push(FieldSpec::new(name, FieldKind::String, &[TierId::PMEM, TierId::DISK]));
    }
    fields.push(FieldSpec::new("friends", FieldKind::Bytes, &[TierId::DISK]));
    fields.push(FieldSpec::new("payload", FieldKind::Bytes, &[TierId::DISK]));
    ObjectSchema::new("node", fields).expect("generated schema is valid")
}

pub fn default_query() -> Vec<(String, String)> {
    vec![
        ("company".to_string(), COMPANY_TARGET.to_string()),
        ("city".to_string(), CITY_TARGET.to_string()),
    ]
}

fn encode_friends(ids: &BTreeSet<i64>) -> Vec<u8> {
    ids.iter().flat_map(|i| i.to_le_bytes()).collect()
}

pub fn decode_friends(bytes: &[u8]) -> Vec<i64> {
    bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Writes nodes `ids` with the given adjacency. Features are drawn from
/// small vocabularies; a `planted_fraction` of nodes match the default
/// query and as many again share only its company, so the second
/// constraint matters.
fn write_nodes(path: &Path, ids: &[i64], adjacency: &BTreeMap<i64, BTreeSet<i64>>, edges: u64, p: &GraphParams, rng: &mut ChaCha8Rng) -> Result<GraphInfo> {
    let names = feature_names(p.features);
    let schema = graph_schema(p.features);
    let n = ids.len();
    let planted_count = ((n as f64 * p.planted_fraction).round() as usize).min(n);
    let decoy_count = planted_count.min(n - planted_count);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut role = vec![0u8; n];
    for &i in &order[..planted_count] {
        role[i] = 1;
    }
    for &i in &order[planted_count..planted_count + decoy_count] {
        role[i] = 2;
    }

    let mut w = DatasetWriter::create(path, &schema, n as u64)?;
    let empty = BTreeSet::new();
    let mut payload = vec![0u8; p.payload_bytes];
    let mut planted = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        let mut values = vec![Value::I64(id)];
        for (j, _) in names.iter().enumerate() {
            let v = match (j, role[i]) {
                (0, 1 | 2) => COMPANY_TARGET.to_string(),
                (1, 1) => CITY_TARGET.to_string(),
                (0, _) => format!("company-{:03}", rng.random_range(0..200u32)),
                (1, _) => format!("city-{:03}", rng.random_range(0..200u32)),
                _ => format!("f{j}-{:03}", rng.random_range(0..100u32)),
            };
            values.push(Value::Str(v));
        }
        if role[i] == 1 {
            planted.push(id);
        }
        values.push(Value::Bytes(encode_friends(adjacency.get(&id).unwrap_or(&empty))));
        rng.fill_bytes(&mut payload);
        values.push(Value::Bytes(payload.clone()));
        w.write_record(&values)?;
    }
    planted.sort_unstable();
    Ok(GraphInfo {
        nodes: n as u64,
        edges,
        planted,
        checksum: w.finish()?,
    })
}

/// Synthetic graph with uniformly random distinct edges.
pub fn gen_graph(path: &Path, p: &GraphParams) -> Result<GraphInfo> {
    if p.nodes == 0 {
        return Err(WorkloadError::InvalidParam("graph needs at least one node".into()));
    }
    if !(0.0..=0.5).contains(&p.planted_fraction) {
        return Err(WorkloadError::InvalidParam("planted fraction must be in [0, 0.5]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.nodes;
    let max_edges = n * (n - 1) / 2;
    let target = p.edges.min(max_edges);
    let mut adjacency: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut count = 0;
    while count < target {
        let a = rng.random_range(0..n) as i64;
        let b = rng.random_range(0..n) as i64;
        if a != b && adjacency.entry(a).or_default().insert(b) {
            adjacency.entry(b).or_default().insert(a);
            count += 1;
        }
    }
    let ids: Vec<i64> = (0..n as i64).collect();
    write_nodes(path, &ids, &adjacency, count, p, &mut rng)
}

/// Builds a node dataset from a whitespace-separated edge list (SNAP
/// format: `#` comments, one `a b` pair per line). `p.nodes` and `p.edges`
/// are ignored; self-loops and repeated pairs count once.
pub fn load_snap_edges(edge_path: &Path, out: &Path, p: &GraphParams) -> Result<GraphInfo> {
    let input = BufReader::new(File::open(edge_path)?);
    let mut adjacency: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut edges = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = || WorkloadError::EdgeLine {
            line: n + 1,
            text: t.to_string(),
        };
        let mut parts = t.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let (a, b): (i64, i64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        adjacency.entry(b).or_default();
        let fresh = adjacency.entry(a).or_default().insert(b);
        if a != b {
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        if fresh {
            edges += 1;
        }
    }
    if adjacency.is_empty() {
        return Err(WorkloadError::Dataset(format!("{} has no edges", edge_path.display())));
    }
    let ids: Vec<i64> = adjacency.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    write_nodes(out, &ids, &adjacency, edges, p, &mut rng)
}

/// NO_PMEM serializes whole nodes to disk; ALL_PMEM puts every field on
/// pmem; SELECT_PMEM keeps `id` and the queried features on pmem and the
/// rest on disk.
pub fn graph_layout(mode: LayoutMode, schema: &ObjectSchema, query: &[(String, String)]) -> Result<StorageLayout> {
    match mode {
        LayoutMode::NoPmem => Ok(StorageLayout::Serialized),
        LayoutMode::AllPmem => StorageLayout::retagged(schema, |_| TierId::PMEM),
        LayoutMode::SelectPmem => StorageLayout::retagged(schema, |f| {
            if f == "id" || query.iter().any(|(q, _)| q == f) {
                TierId::PMEM
            } else {
                TierId::DISK
            }
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub report: BenchReport,
    /// Matching node ids, ascending.
    pub matches: Vec<i64>,
}

/// Loads `dataset` under `layout` and returns every node whose features
/// equal all of `query`. Constraints are checked in order and stop at the
/// first mismatch; the payload and adjacency are never read.
pub fn graph_search(store: &Store, dataset: &Path, query: &[(String, String)], layout: &StorageLayout, opts: RunOptions) -> Result<SearchResult> {
    let reader = DatasetReader::open(dataset)?;
    let schema = reader.schema().clone();
    let id = schema
        .field_index("id")
        .filter(|&i| schema.fields[i].kind == FieldKind::I64)
        .ok_or_else(|| WorkloadError::Dataset("node schema needs `id: i64`".into()))?;
    let mut constraints = Vec::with_capacity(query.len());
    for (f, v) in query {
        let i = schema.field_index(f).ok_or_else(|| WorkloadError::UnknownFeature(f.clone()))?;
        if schema.fields[i].kind != FieldKind::String {
            return Err(WorkloadError::NotAString(f.clone()));
        }
        constraints.push((i, v.as_str()));
    }

    let t0 = Instant::now();
    let loaded = load(store, reader, layout, opts.profile)?;
    let load_ns = t0.elapsed().as_nanos() as u64;
    let n = loaded.len();

    let before = store.metrics();
    let t1 = Instant::now();
    let indices: Vec<u64> = (0..n).collect();
    let parts = opts.exec.map_chunks(&indices, 256, |_, chunk| -> Result<Vec<i64>> {
        let mut hits = Vec::new();
        'node: for &i in chunk {
            let row = loaded.row(store, i, opts.profile)?;
            for &(f, want) in &constraints {
                let v = loaded.read(store, &row, &[f], opts.profile)?;
                if v[0].as_str() != Some(want) {
                    continue 'node;
                }
            }
            hits.push(loaded.read(store, &row, &[id], opts.profile)?[0].as_i64().unwrap());
        }
        Ok(hits)
    });
    let mut matches = Vec::new();
    for p in parts {
        matches.extend(p?);
    }
    matches.sort_unstable();
    let exec_ns = t1.elapsed().as_nanos() as u64;
    let delta = store.metrics().since(&before);
    let bytes: Vec<u8> = matches.iter().flat_map(|m| m.to_le_bytes()).collect();
    Ok(SearchResult {
        report: BenchReport {
            workload: "graph".into(),
            mode: mode_label(layout, &opts),
            records: n,
            load_ns,
            exec_ns,
            bytes_materialized: delta.bytes_materialized,
            serde_events: delta.serde_events(),
            checksum: super::fnv64(&bytes),
        },
        matches,
    })
}
