//! Benchmark workloads over tiered records: k-means and multi-constraint
//! graph search, each runnable with the whole record serialized on disk or
//! with fields placed individually.

pub mod dataset;
pub mod graph;
pub mod kmeans;

use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use fnv::FnvHasher;
use thiserror::Error;

use crate::collections::{CollectionError, DurableArray};
use crate::par::Exec;
use crate::profiling::ProfileSession;
use crate::schema::{compute_layout, LayoutPlan, ObjectSchema, SchemaError};
use crate::store::{ObjectRef, Store, StoreError, Value};
use crate::tiers::{Backing, Handle, TierConfig, TierId};

pub use dataset::{DatasetReader, DatasetWriter};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Collection(#[from] CollectionError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("k = {k} but the dataset has only {distinct} distinct points")]
    KTooLarge { k: usize, distinct: usize },
    #[error("schema has no feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is not a string field")]
    NotAString(String),
    #[error("edge list line {line}: expected two node ids, got `{text}`")]
    EdgeLine { line: usize, text: String },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

impl WorkloadError {
    pub fn is_capacity(&self) -> bool {
        match self {
            WorkloadError::Store(e) => e.is_capacity(),
            WorkloadError::Collection(e) => e.is_capacity(),
            _ => false,
        }
    }
}

pub type Result<T, E = WorkloadError> = std::result::Result<T, E>;

/// How a workload stores its records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    /// Whole records serialized on disk and deserialized on every touch.
    NoPmem,
    /// Every field on pmem.
    AllPmem,
    /// Fields the computation reads on pmem, the rest on disk.
    SelectPmem,
}

impl LayoutMode {
    pub const ALL: [LayoutMode; 3] = [LayoutMode::NoPmem, LayoutMode::AllPmem, LayoutMode::SelectPmem];

    pub fn as_str(self) -> &'static str {
        match self {
            LayoutMode::NoPmem => "no-pmem",
            LayoutMode::AllPmem => "all-pmem",
            LayoutMode::SelectPmem => "select-pmem",
        }
    }
}

impl fmt::Display for LayoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutMode {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<LayoutMode> {
        LayoutMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| WorkloadError::InvalidParam(format!("unknown layout mode `{s}`")))
    }
}

/// Concrete storage for one run.
#[derive(Debug, Clone)]
pub enum StorageLayout {
    /// One disk blob per record.
    Serialized,
    /// One store object per record, fields placed by the layout.
    Fielded(Arc<LayoutPlan>),
}

impl StorageLayout {
    /// Fields on their first-preference tags.
    pub fn fielded(schema: &ObjectSchema) -> Result<StorageLayout> {
        Ok(StorageLayout::Fielded(Arc::new(compute_layout(schema, &schema.preferred_assignment())?)))
    }

    /// `schema` with each field moved to the single tier `tier_of` picks.
    pub fn retagged(schema: &ObjectSchema, tier_of: impl Fn(&str) -> TierId) -> Result<StorageLayout> {
        let assignment = schema.fields.iter().map(|f| (f.name.clone(), tier_of(&f.name))).collect();
        StorageLayout::fielded(&schema.retagged(&assignment)?)
    }
}

/// Counters and timings for one run. Counters cover the execution phase only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchReport {
    pub workload: String,
    pub mode: String,
    pub records: u64,
    pub load_ns: u64,
    pub exec_ns: u64,
    pub bytes_materialized: u64,
    pub serde_events: u64,
    pub checksum: u64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "workload,mode,records,load_ns,exec_ns,bytes_materialized,serde_events,checksum";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:016x}",
            self.workload, self.mode, self.records, self.load_ns, self.exec_ns, self.bytes_materialized, self.serde_events, self.checksum
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// Knobs shared by every workload run.
#[derive(Clone, Copy)]
pub struct RunOptions<'a> {
    /// Sequential unless asked; timings are steadier that way.
    pub exec: Exec,
    /// When set, every field read and write is counted and timed.
    pub profile: Option<&'a ProfileSession>,
    /// Label for the report's mode column; defaults to the layout kind.
    pub label: Option<&'a str>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            exec: Exec::Sequential,
            profile: None,
            label: None,
        }
    }
}

/// dram (volatile), pmem (file-backed arena) and disk (blob directory) under `dir`.
pub fn standard_tiers(dir: &Path, pmem_capacity: u64, disk_capacity: u64) -> Vec<TierConfig> {
    vec![
        TierConfig::volatile("dram", 1 << 30),
        TierConfig::new("pmem", pmem_capacity, Backing::MappedFile(dir.join("pmem.arena"))),
        TierConfig::new("disk", disk_capacity, Backing::Directory(dir.join("disk"))),
    ]
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Records of one run, however they are stored.
pub(crate) enum Loaded {
    Serialized { schema: Arc<ObjectSchema>, blobs: Vec<Handle> },
    Fielded(DurableArray),
}

/// One record's view during the execution phase: either a decoded copy of
/// the whole record, or a live object read field by field.
pub(crate) enum Row {
    Decoded(Vec<Value>),
    Object(ObjectRef),
}

impl Loaded {
    pub fn len(&self) -> u64 {
        match self {
            Loaded::Serialized { blobs, .. } => blobs.len() as u64,
            Loaded::Fielded(a) => a.len(),
        }
    }

    /// Serialized records are fetched and decoded here, once per touch.
    pub fn row(&self, store: &Store, i: u64, profile: Option<&ProfileSession>) -> Result<Row> {
        Ok(match self {
            Loaded::Serialized { schema, blobs } => {
                let start = profile.map(|_| std::time::Instant::now());
                let raw = store.get_blob(blobs[i as usize])?;
                let values = dataset::decode_record(schema, &raw)?;
                if let (Some(p), Some(start)) = (profile, start) {
                    let ns = start.elapsed().as_nanos() as f64 / values.len().max(1) as f64;
                    let disk = store.tier(TierId::DISK)?.name().to_string();
                    for (f, v) in schema.fields.iter().zip(&values) {
                        p.record(&f.name, &disk, value_len(v), ns);
                    }
                }
                Row::Decoded(values)
            }
            Loaded::Fielded(a) => Row::Object(a.element(i)?),
        })
    }

    /// Reads fields `indices` of a row.
    pub fn read(&self, store: &Store, row: &Row, indices: &[usize], profile: Option<&ProfileSession>) -> Result<Vec<Value>> {
        match row {
            Row::Decoded(values) => Ok(indices.iter().map(|&i| values[i].clone()).collect()),
            Row::Object(obj) => {
                let start = profile.map(|_| std::time::Instant::now());
                let vals = store.get_fields(obj, indices)?;
                if let (Some(p), Some(start)) = (profile, start) {
                    let ns = start.elapsed().as_nanos() as f64 / indices.len().max(1) as f64;
                    for (&i, v) in indices.iter().zip(&vals) {
                        let e = &obj.layout.entries[i];
                        let bytes = v.as_ref().map_or(0, value_len);
                        p.record(&e.name, store.tier(e.tier)?.name(), bytes, ns);
                    }
                }
                vals.into_iter()
                    .zip(indices)
                    .map(|(v, &i)| v.ok_or_else(|| WorkloadError::Dataset(format!("field `{}` unset", obj.layout.entries[i].name))))
                    .collect()
            }
        }
    }
}

fn value_len(v: &Value) -> u64 {
    v.payload().map_or_else(|| v.kind().fixed_width().unwrap_or(0) as u64, |p| p.len() as u64)
}

/// Streams every record of `reader` into the store under `layout`.
pub(crate) fn load(store: &Store, mut reader: DatasetReader, layout: &StorageLayout, profile: Option<&ProfileSession>) -> Result<Loaded> {
    let schema = Arc::new(reader.schema().clone());
    let n = reader.len();
    match layout {
        StorageLayout::Serialized => {
            let mut blobs = Vec::with_capacity(n as usize);
            let disk = store.tier(TierId::DISK)?.name().to_string();
            while let Some(raw) = reader.next_raw()? {
                let start = profile.map(|_| std::time::Instant::now());
                blobs.push(store.put_blob(TierId::DISK, &raw)?);
                if let (Some(p), Some(start)) = (profile, start) {
                    let values = dataset::decode_record(&schema, &raw)?;
                    let ns = start.elapsed().as_nanos() as f64 / values.len().max(1) as f64;
                    for (f, v) in schema.fields.iter().zip(&values) {
                        p.record(&f.name, &disk, value_len(v), ns);
                    }
                }
            }
            Ok(Loaded::Serialized { schema, blobs })
        }
        StorageLayout::Fielded(plan) => {
            if plan.schema.fields.iter().map(|f| (&f.name, f.kind)).ne(schema.fields.iter().map(|f| (&f.name, f.kind))) {
                return Err(WorkloadError::Dataset(format!(
                    "layout schema `{}` does not match the dataset's fields",
                    plan.schema.name
                )));
            }
            let array = DurableArray::new(store, plan, n, plan.record_tier)?;
            let mut i = 0;
            while let Some(values) = reader.next_record()? {
                let obj = array.element(i)?;
                for (idx, v) in values.into_iter().enumerate() {
                    let start = profile.map(|_| std::time::Instant::now());
                    let bytes = value_len(&v);
                    store.set_field_at(&obj, idx, v)?;
                    if let (Some(p), Some(start)) = (profile, start) {
                        let e = &plan.entries[idx];
                        p.record(&e.name, store.tier(e.tier)?.name(), bytes, start.elapsed().as_nanos() as f64);
                    }
                }
                i += 1;
            }
            Ok(Loaded::Fielded(array))
        }
    }
}

pub(crate) fn mode_label(layout: &StorageLayout, opts: &RunOptions) -> String {
    if let Some(l) = opts.label {
        return l.to_string();
    }
    match layout {
        StorageLayout::Serialized => LayoutMode::NoPmem.to_string(),
        StorageLayout::Fielded(p) => format!("schema:{}", p.schema.name),
    }
}
