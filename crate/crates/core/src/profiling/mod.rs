//! Inputs for the placement optimizer: access counts and sizes per field,
//! capacity and failure probability per device, and the C and R matrices.

mod bench;
mod csv;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::placement::PlacementProblem;
use crate::schema::ObjectSchema;
use crate::tiers::{TierAllocator, TierError};

pub use bench::{microbench_device, DeviceLatency, LatencySample, DEFAULT_SIZES};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("no sample sizes given")]
    NoSizes,
    #[error("profile line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("profile has no C entry for field `{field}` on device `{device}`")]
    MissingCost { field: String, device: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
}

pub type Result<T, E = ProfileError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldProfile {
    pub name: String,
    /// Accesses (reads plus writes) over the run.
    pub f: f64,
    /// Stored bytes: the fixed width, or the mean payload for variable kinds.
    pub b: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    /// Capacity in bytes.
    pub s: u64,
    /// Failure probability per run.
    pub p: f64,
}

impl DeviceProfile {
    /// Durable tiers never lose data (P = 0); volatile ones get `volatile_p`.
    pub fn from_tier(tier: &dyn TierAllocator, volatile_p: f64) -> DeviceProfile {
        DeviceProfile {
            name: tier.name().to_string(),
            s: tier.usage().capacity,
            p: if tier.is_durable() { 0.0 } else { volatile_p },
        }
    }
}

/// Everything the optimizer needs, as written to and read from profile CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub fields: Vec<FieldProfile>,
    pub devices: Vec<DeviceProfile>,
    /// Access ns, fields x devices.
    pub c: Vec<Vec<f64>>,
    /// Recomputation ns, fields x devices.
    pub r: Vec<Vec<f64>>,
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.fields.len(), self.devices.len());
        let bad = |m: String| Err(ProfileError::Invalid(m));
        if self.c.len() != n || self.r.len() != n || self.c.iter().chain(&self.r).any(|row| row.len() != m) {
            return bad(format!("matrices must be {n} x {m}"));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if !(f.f.is_finite() && f.f >= 0.0) || f.b == 0 {
                return bad(format!("field `{}` needs F >= 0 and B > 0", f.name));
            }
            for (j, d) in self.devices.iter().enumerate() {
                if !(self.c[i][j].is_finite() && self.c[i][j] > 0.0) {
                    return bad(format!("C[{}][{}] must be positive", f.name, d.name));
                }
                if !(self.r[i][j].is_finite() && self.r[i][j] >= 0.0) {
                    return bad(format!("R[{}][{}] must be non-negative", f.name, d.name));
                }
            }
        }
        for d in &self.devices {
            if d.s == 0 || !(0.0..=1.0).contains(&d.p) {
                return bad(format!("device `{}` needs S > 0 and 0 <= P <= 1", d.name));
            }
        }
        Ok(())
    }

    /// The optimizer instance for `x` stored objects.
    pub fn to_problem(&self, x: u64) -> PlacementProblem {
        PlacementProblem {
            fields: self.fields.iter().map(|f| f.name.clone()).collect(),
            devices: self.devices.iter().map(|d| d.name.clone()).collect(),
            f: self.fields.iter().map(|f| f.f).collect(),
            b: self.fields.iter().map(|f| f.b).collect(),
            s: self.devices.iter().map(|d| d.s).collect(),
            p: self.devices.iter().map(|d| d.p).collect(),
            c: self.c.clone(),
            r: self.r.clone(),
            x,
        }
    }

    /// Overrides the capacity of the named device.
    pub fn set_capacity(&mut self, device: &str, s: u64) -> Result<()> {
        let d = self
            .devices
            .iter_mut()
            .find(|d| d.name == device)
            .ok_or_else(|| ProfileError::Invalid(format!("no device `{device}`")))?;
        d.s = s;
        Ok(())
    }
}

#[derive(Default)]
struct PairStats {
    count: AtomicU64,
    /// Total latency in picoseconds, so sub-ns accesses still add up.
    ps: AtomicU64,
}

struct FieldStats {
    fixed_width: Option<u64>,
    count: AtomicU64,
    bytes: AtomicU64,
    per_device: Vec<PairStats>,
}

/// Access counters for one instrumented run. Safe to update from many threads.
pub struct ProfileSession {
    fields: Vec<String>,
    devices: Vec<String>,
    field_ids: HashMap<String, usize>,
    device_ids: HashMap<String, usize>,
    stats: Vec<FieldStats>,
}

impl ProfileSession {
    /// `fields` pairs names with their fixed width, `None` for variable kinds.
    pub fn new(fields: &[(&str, Option<u64>)], devices: &[&str]) -> ProfileSession {
        ProfileSession {
            fields: fields.iter().map(|(n, _)| n.to_string()).collect(),
            devices: devices.iter().map(|d| d.to_string()).collect(),
            field_ids: fields.iter().enumerate().map(|(i, (n, _))| (n.to_string(), i)).collect(),
            device_ids: devices.iter().enumerate().map(|(j, d)| (d.to_string(), j)).collect(),
            stats: fields
                .iter()
                .map(|&(_, w)| FieldStats {
                    fixed_width: w,
                    count: AtomicU64::new(0),
                    bytes: AtomicU64::new(0),
                    per_device: devices.iter().map(|_| PairStats::default()).collect(),
                })
                .collect(),
        }
    }

    pub fn for_schema(schema: &ObjectSchema, devices: &[&str]) -> ProfileSession {
        let fields: Vec<(&str, Option<u64>)> = schema
            .fields
            .iter()
            .map(|f| (f.name.as_str(), f.kind.fixed_width().map(|w| w as u64)))
            .collect();
        ProfileSession::new(&fields, devices)
    }

    pub fn field_id(&self, name: &str) -> Option<usize> {
        self.field_ids.get(name).copied()
    }

    pub fn device_id(&self, name: &str) -> Option<usize> {
        self.device_ids.get(name).copied()
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn devices(&self) -> &[String] {
        &self.devices
    }

    /// Counts one access of `bytes` to `field` on `device` that took `ns`.
    ///
    /// Panics if either index is out of range.
    pub fn record_access(&self, field: usize, device: usize, bytes: u64, ns: f64) {
        let s = &self.stats[field];
        s.count.fetch_add(1, Ordering::Relaxed);
        s.bytes.fetch_add(bytes, Ordering::Relaxed);
        let pair = &s.per_device[device];
        pair.count.fetch_add(1, Ordering::Relaxed);
        pair.ps.fetch_add((ns.max(0.0) * 1000.0).round() as u64, Ordering::Relaxed);
    }

    /// Name-based [`record_access`](Self::record_access); unknown names are ignored.
    pub fn record(&self, field: &str, device: &str, bytes: u64, ns: f64) {
        if let (Some(i), Some(j)) = (self.field_id(field), self.device_id(device)) {
            self.record_access(i, j, bytes, ns);
        }
    }

    /// F for field `i`: the exact number of recorded accesses.
    pub fn count(&self, field: usize) -> u64 {
        self.stats[field].count.load(Ordering::Relaxed)
    }

    /// Mean observed ns per access of `field` on `device`.
    pub fn mean_ns(&self, field: usize, device: usize) -> Option<f64> {
        let p = &self.stats[field].per_device[device];
        let n = p.count.load(Ordering::Relaxed);
        (n > 0).then(|| p.ps.load(Ordering::Relaxed) as f64 / 1000.0 / n as f64)
    }

    /// F and B per field. Variable-size fields report their mean accessed
    /// payload, at least 1 byte.
    pub fn field_profiles(&self) -> Vec<FieldProfile> {
        self.fields
            .iter()
            .zip(&self.stats)
            .map(|(name, s)| {
                let count = s.count.load(Ordering::Relaxed);
                let b = s.fixed_width.unwrap_or_else(|| {
                    let bytes = s.bytes.load(Ordering::Relaxed);
                    if count == 0 { 1 } else { bytes.div_ceil(count).max(1) }
                });
                FieldProfile {
                    name: name.clone(),
                    f: count as f64,
                    b,
                }
            })
            .collect()
    }
}

/// C matrix from microbenchmarks: each field's access time on each device is
/// that device's read estimate at the field's size.
pub fn cost_matrix(fields: &[FieldProfile], latencies: &[DeviceLatency]) -> Vec<Vec<f64>> {
    fields
        .iter()
        .map(|f| latencies.iter().map(|l| l.read_ns_at(f.b).max(f64::MIN_POSITIVE)).collect())
        .collect()
}

/// Recomputation model for iterative workloads: losing field `i` on a
/// volatile device costs `iterations[i] * ns_per_iter`; durable devices
/// cost `durable_ns`.
pub fn iterative_recompute(iterations: &[f64], ns_per_iter: f64, durable: &[bool], durable_ns: f64) -> Vec<Vec<f64>> {
    iterations
        .iter()
        .map(|&it| {
            durable
                .iter()
                .map(|&d| if d { durable_ns } else { it * ns_per_iter })
                .collect()
        })
        .collect()
}
