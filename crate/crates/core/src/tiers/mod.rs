//! Storage tiers behind one allocator interface.
//!
//! Every tier hands out [`Handle`]s from a bump-style arena and exposes byte
//! GET/SET plus length-prefixed buffers. Three backends exist:
//!
//! * [`VolatileArena`]: process memory, lost on exit.
//! * [`MappedArena`]: a memory-mapped file with a 32-byte header, standing in
//!   for persistent memory.
//! * [`DiskTier`]: a directory with one file per allocation and an
//!   append-only `index.log`. Every access is a block read or write and
//!   counts as a (de)serialization event.

mod disk;
mod handle;
mod latency;
mod mapped;
mod space;
mod volatile;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

pub use disk::DiskTier;
pub use handle::{Handle, TierId, MAX_OFFSET, OFFSET_BITS};
pub use latency::SyntheticLatency;
pub use mapped::{MappedArena, HEADER_LEN, MAGIC, VERSION};
pub use volatile::VolatileArena;

/// Width of the little-endian length prefix in front of every buffer.
pub const LEN_PREFIX: u64 = 8;

#[derive(Debug, Error)]
pub enum TierError {
    #[error("i/o error on tier {tier}: {source}")]
    Io {
        tier: String,
        #[source]
        source: std::io::Error,
    },
    #[error("tier {tier}: corrupt arena header ({reason})")]
    CorruptHeader { tier: String, reason: String },
    #[error("tier {tier}: arena has capacity {found}, config asks for {expected}")]
    CapacityMismatch { tier: String, expected: u64, found: u64 },
    #[error("tier {tier}: capacity {capacity} exceeds the 56-bit handle offset range")]
    CapacityTooLarge { tier: String, capacity: u64 },
    #[error("tier {tier}: capacity must be positive")]
    ZeroCapacity { tier: String },
    #[error("tier {tier}: capacity exhausted ({requested} bytes requested, {free} free)")]
    CapacityExhausted { tier: String, requested: u64, free: u64 },
    #[error("tier {tier}: zero-sized allocation")]
    ZeroSize { tier: String },
    #[error("tier {tier}: access {offset}+{len} outside allocated region")]
    OutOfBounds { tier: String, offset: u64, len: u64 },
    #[error("tier {tier}: handle {handle:?} belongs to another tier")]
    WrongTier { tier: String, handle: Handle },
    #[error("tier {tier}: corrupt buffer length {len} at {handle:?}")]
    CorruptBuffer { tier: String, handle: Handle, len: u64 },
}

impl TierError {
    pub fn is_capacity(&self) -> bool {
        matches!(self, TierError::CapacityExhausted { .. })
    }
}

pub type Result<T, E = TierError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backing {
    Volatile,
    MappedFile(PathBuf),
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierConfig {
    pub name: String,
    pub id: TierId,
    /// Capacity in bytes; the `S_j` of the placement model.
    pub capacity: u64,
    pub backing: Backing,
    pub latency: Option<SyntheticLatency>,
}

impl TierConfig {
    /// Config for a built-in tier name (`dram`, `pmem`, `disk`). Other names
    /// get id 3 and should be given a distinct id with [`TierConfig::with_id`].
    pub fn new(name: impl Into<String>, capacity: u64, backing: Backing) -> TierConfig {
        let name = name.into();
        let id = TierId::from_name(&name).unwrap_or(TierId(3));
        TierConfig {
            name,
            id,
            capacity,
            backing,
            latency: None,
        }
    }

    pub fn volatile(name: impl Into<String>, capacity: u64) -> TierConfig {
        TierConfig::new(name, capacity, Backing::Volatile)
    }

    pub fn with_id(mut self, id: TierId) -> TierConfig {
        self.id = id;
        self
    }

    pub fn with_latency(mut self, latency: SyntheticLatency) -> TierConfig {
        self.latency = Some(latency);
        self
    }

    pub fn is_durable(&self) -> bool {
        !matches!(self.backing, Backing::Volatile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Usage {
    pub used: u64,
    pub capacity: u64,
}

impl Usage {
    pub fn free(&self) -> u64 {
        self.capacity - self.used
    }
}

/// Monotone per-tier counters.
#[derive(Debug, Default)]
pub struct TierMetrics {
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    reads: AtomicU64,
    writes: AtomicU64,
    serde_events: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricsSnapshot {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub reads: u64,
    pub writes: u64,
    pub serde_events: u64,
}

impl TierMetrics {
    pub(crate) fn on_read(&self, bytes: u64) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    pub(crate) fn on_write(&self, bytes: u64) {
        self.writes.fetch_add(1, Ordering::Relaxed);
        self.bytes_written.fetch_add(bytes, Ordering::Relaxed);
    }

    pub(crate) fn on_serde(&self) {
        self.serde_events.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            reads: self.reads.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
            serde_events: self.serde_events.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    I16,
    I32,
    I64,
    U64,
    F32,
    F64,
}

impl ScalarKind {
    pub fn width(self) -> usize {
        match self {
            ScalarKind::I16 => 2,
            ScalarKind::I32 | ScalarKind::F32 => 4,
            ScalarKind::I64 | ScalarKind::U64 | ScalarKind::F64 => 8,
        }
    }
}

/// A fixed-width value as stored on a tier (little-endian).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    I16(i16),
    I32(i32),
    I64(i64),
    U64(u64),
    F32(f32),
    F64(f64),
}

impl Scalar {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Scalar::I16(_) => ScalarKind::I16,
            Scalar::I32(_) => ScalarKind::I32,
            Scalar::I64(_) => ScalarKind::I64,
            Scalar::U64(_) => ScalarKind::U64,
            Scalar::F32(_) => ScalarKind::F32,
            Scalar::F64(_) => ScalarKind::F64,
        }
    }

    /// Writes the little-endian encoding into `out[..width]`.
    pub fn encode(&self, out: &mut [u8]) {
        match *self {
            Scalar::I16(v) => out[..2].copy_from_slice(&v.to_le_bytes()),
            Scalar::I32(v) => out[..4].copy_from_slice(&v.to_le_bytes()),
            Scalar::I64(v) => out[..8].copy_from_slice(&v.to_le_bytes()),
            Scalar::U64(v) => out[..8].copy_from_slice(&v.to_le_bytes()),
            Scalar::F32(v) => out[..4].copy_from_slice(&v.to_le_bytes()),
            Scalar::F64(v) => out[..8].copy_from_slice(&v.to_le_bytes()),
        }
    }

    pub fn decode(kind: ScalarKind, bytes: &[u8]) -> Scalar {
        match kind {
            ScalarKind::I16 => Scalar::I16(i16::from_le_bytes(bytes[..2].try_into().unwrap())),
            ScalarKind::I32 => Scalar::I32(i32::from_le_bytes(bytes[..4].try_into().unwrap())),
            ScalarKind::I64 => Scalar::I64(i64::from_le_bytes(bytes[..8].try_into().unwrap())),
            ScalarKind::U64 => Scalar::U64(u64::from_le_bytes(bytes[..8].try_into().unwrap())),
            ScalarKind::F32 => Scalar::F32(f32::from_le_bytes(bytes[..4].try_into().unwrap())),
            ScalarKind::F64 => Scalar::F64(f64::from_le_bytes(bytes[..8].try_into().unwrap())),
        }
    }
}

/// The uniform GET/SET allocator interface every tier implements.
pub trait TierAllocator: Send + Sync {
    fn id(&self) -> TierId;

    fn name(&self) -> &str;

    /// Whether the tier survives process restarts after [`sync`](Self::sync).
    fn is_durable(&self) -> bool;

    /// Block tiers are not byte-addressable; every access (de)serializes.
    fn is_block_device(&self) -> bool {
        false
    }

    /// Reserves `size` zeroed bytes.
    fn alloc(&self, size: u64) -> Result<Handle>;

    /// Returns a region to the tier. `size` must match the original request.
    fn release(&self, handle: Handle, size: u64);

    /// Whether an allocation of `size` bytes would currently succeed.
    fn can_fit(&self, size: u64) -> bool;

    fn write(&self, handle: Handle, offset: u64, data: &[u8]) -> Result<()>;

    fn read(&self, handle: Handle, offset: u64, buf: &mut [u8]) -> Result<()>;

    /// Allocates `8 + payload.len()` bytes holding the length prefix and payload.
    fn create_buffer(&self, payload: &[u8]) -> Result<Handle> {
        let handle = self.alloc(LEN_PREFIX + payload.len() as u64)?;
        let mut bytes = Vec::with_capacity(payload.len() + LEN_PREFIX as usize);
        bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        bytes.extend_from_slice(payload);
        self.write(handle, 0, &bytes)?;
        Ok(handle)
    }

    fn retrieve_buffer(&self, handle: Handle) -> Result<Vec<u8>> {
        let len = self.buffer_len(handle)?;
        let mut out = vec![0; len as usize];
        self.read(handle, LEN_PREFIX, &mut out)?;
        Ok(out)
    }

    /// Payload length of the buffer at `handle`.
    fn buffer_len(&self, handle: Handle) -> Result<u64> {
        let mut prefix = [0u8; 8];
        self.read(handle, 0, &mut prefix)?;
        let len = u64::from_le_bytes(prefix);
        if len > self.usage().capacity {
            return Err(TierError::CorruptBuffer {
                tier: self.name().to_string(),
                handle,
                len,
            });
        }
        Ok(len)
    }

    /// Makes every preceding write durable. No-op on volatile tiers.
    fn sync(&self) -> Result<()>;

    fn usage(&self) -> Usage;

    fn metrics(&self) -> &TierMetrics;

    /// Persistent root slot for locating top-level structures after reopen.
    fn root(&self) -> Handle;

    fn set_root(&self, handle: Handle) -> Result<()>;
}

impl dyn TierAllocator + '_ {
    pub fn set_val(&self, handle: Handle, offset: u64, value: Scalar) -> Result<()> {
        let mut buf = [0u8; 8];
        value.encode(&mut buf);
        self.write(handle, offset, &buf[..value.kind().width()])
    }

    pub fn get_val(&self, handle: Handle, offset: u64, kind: ScalarKind) -> Result<Scalar> {
        let mut buf = [0u8; 8];
        self.read(handle, offset, &mut buf[..kind.width()])?;
        Ok(Scalar::decode(kind, &buf))
    }

    pub fn set_handle(&self, handle: Handle, offset: u64, value: Handle) -> Result<()> {
        self.set_val(handle, offset, Scalar::U64(value.raw()))
    }

    pub fn get_handle(&self, handle: Handle, offset: u64) -> Result<Handle> {
        match self.get_val(handle, offset, ScalarKind::U64)? {
            Scalar::U64(raw) => Ok(Handle::from_raw(raw)),
            _ => unreachable!(),
        }
    }
}

/// Opens (or creates) the tier described by `config`.
pub fn open_tier(config: &TierConfig) -> Result<Arc<dyn TierAllocator>> {
    Ok(match &config.backing {
        Backing::Volatile => Arc::new(VolatileArena::new(config)?),
        Backing::MappedFile(path) => Arc::new(MappedArena::open(config, path)?),
        Backing::Directory(path) => Arc::new(DiskTier::open(config, path)?),
    })
}

pub(crate) fn check_capacity(config: &TierConfig) -> Result<()> {
    if config.capacity == 0 {
        return Err(TierError::ZeroCapacity {
            tier: config.name.clone(),
        });
    }
    // leave room for the null-guard word of tier 0
    if config.capacity > MAX_OFFSET - space::GUARD {
        return Err(TierError::CapacityTooLarge {
            tier: config.name.clone(),
            capacity: config.capacity,
        });
    }
    Ok(())
}
