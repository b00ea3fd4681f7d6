use std::time::Instant;

use super::{ProfileError, Result};
use crate::tiers::TierAllocator;

pub const DEFAULT_SIZES: [u64; 3] = [8, 256, 4096];

/// Accesses per timed batch.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub bytes: u64,
    /// Median ns per read access.
    pub read_ns: f64,
    /// Median ns per write access.
    pub write_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLatency {
    pub device: String,
    /// Sorted by size.
    pub samples: Vec<LatencySample>,
}

impl DeviceLatency {
    fn at(&self, bytes: u64, pick: impl Fn(&LatencySample) -> f64) -> f64 {
        let s = &self.samples;
        match s.len() {
            0 => 0.0,
            1 => pick(&s[0]),
            _ => {
                // piecewise linear, extending the end segments
                let k = s.partition_point(|x| x.bytes < bytes).clamp(1, s.len() - 1);
                let (a, b) = (&s[k - 1], &s[k]);
                let t = (bytes as f64 - a.bytes as f64) / (b.bytes as f64 - a.bytes as f64);
                (pick(a) + t * (pick(b) - pick(a))).max(0.0)
            }
        }
    }

    pub fn read_ns_at(&self, bytes: u64) -> f64 {
        self.at(bytes, |x| x.read_ns)
    }

    pub fn write_ns_at(&self, bytes: u64) -> f64 {
        self.at(bytes, |x| x.write_ns)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times batches of back-to-back reads and writes of each size and keeps
/// the median per-access time over `repetitions` batches.
pub fn microbench_device(tier: &dyn TierAllocator, sizes: &[u64], repetitions: usize) -> Result<DeviceLatency> {
    if repetitions == 0 {
        return Err(ProfileError::NoRepetitions);
    }
    if sizes.is_empty() {
        return Err(ProfileError::NoSizes);
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut samples = Vec::with_capacity(sizes.len());
    for &size in &sizes {
        let size = size.max(1);
        let handle = tier.alloc(size)?;
        let data = vec![0xA5u8; size as usize];
        let mut buf = vec![0u8; size as usize];
        let mut time = |write: bool| -> Result<f64> {
            let mut per_access = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let start = Instant::now();
                for _ in 0..BATCH {
                    if write {
                        tier.write(handle, 0, &data)?;
                    } else {
                        tier.read(handle, 0, &mut buf)?;
                    }
                }
                per_access.push(start.elapsed().as_nanos() as f64 / BATCH as f64);
            }
            Ok(median(per_access))
        };
        let measured = time(true).and_then(|w| Ok((w, time(false)?)));
        tier.release(handle, size);
        let (write_ns, read_ns) = measured?;
        samples.push(LatencySample {
            bytes: size,
            read_ns,
            write_ns,
        });
    }
    Ok(DeviceLatency {
        device: tier.name().to_string(),
        samples,
    })
}
