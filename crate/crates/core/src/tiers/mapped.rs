use std::fs::OpenOptions;
use std::path::Path;

use memmap2::MmapMut;
use parking_lot::{Mutex, RwLock};

use super::latency::Throttle;
use super::space::ArenaSpace;
use super::{check_capacity, Handle, Result, TierAllocator, TierConfig, TierError, TierId, TierMetrics, Usage};

pub const MAGIC: &[u8; 4] = b"TIER";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;

const CAPACITY_AT: usize = 8;
const CURSOR_AT: usize = 16;
const ROOT_AT: usize = 24;

/// Persistent-memory stand-in: a file mapped into the address space.
///
/// Layout: `"TIER"`, version `u32`, capacity `u64`, allocation cursor `u64`,
/// root handle `u64`, then the payload region. All little-endian. Handle
/// offsets are relative to the payload region.
pub struct MappedArena {
    id: TierId,
    name: String,
    space: Mutex<ArenaSpace>,
    map: RwLock<MmapMut>,
    throttle: Option<Throttle>,
    metrics: TierMetrics,
}

fn io_err(tier: &str) -> impl Fn(std::io::Error) -> TierError + '_ {
    move |source| TierError::Io {
        tier: tier.to_string(),
        source,
    }
}

fn read_u64(map: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(map[at..at + 8].try_into().unwrap())
}

impl MappedArena {
    pub fn open(config: &TierConfig, path: &Path) -> Result<MappedArena> {
        check_capacity(config)?;
        let name = config.name.as_str();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(name))?;
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(io_err(name))?;
        let existing = file.metadata().map_err(io_err(name))?.len();
        let fresh = ArenaSpace::new(config.id, config.capacity);
        let total = HEADER_LEN + fresh.base() + config.capacity;

        let space = if existing == 0 {
            file.set_len(total).map_err(io_err(name))?;
            let mut map = unsafe { MmapMut::map_mut(&file) }.map_err(io_err(name))?;
            map[0..4].copy_from_slice(MAGIC);
            map[4..8].copy_from_slice(&VERSION.to_le_bytes());
            map[CAPACITY_AT..CAPACITY_AT + 8].copy_from_slice(&config.capacity.to_le_bytes());
            map[CURSOR_AT..CURSOR_AT + 8].copy_from_slice(&fresh.cursor().to_le_bytes());
            map.flush().map_err(io_err(name))?;
            fresh
        } else {
            let corrupt = |reason: &str| TierError::CorruptHeader {
                tier: name.to_string(),
                reason: reason.to_string(),
            };
            if existing < HEADER_LEN {
                return Err(corrupt("file shorter than header"));
            }
            let map = unsafe { MmapMut::map_mut(&file) }.map_err(io_err(name))?;
            if &map[0..4] != MAGIC {
                return Err(corrupt("bad magic"));
            }
            let version = u32::from_le_bytes(map[4..8].try_into().unwrap());
            if version != VERSION {
                return Err(corrupt(&format!("unsupported version {version}")));
            }
            let capacity = read_u64(&map, CAPACITY_AT);
            if capacity != config.capacity {
                return Err(TierError::CapacityMismatch {
                    tier: name.to_string(),
                    expected: config.capacity,
                    found: capacity,
                });
            }
            if existing < total {
                return Err(corrupt("file shorter than capacity"));
            }
            let cursor = read_u64(&map, CURSOR_AT);
            if cursor < fresh.base() || cursor - fresh.base() > capacity {
                return Err(corrupt("cursor beyond capacity"));
            }
            ArenaSpace::with_cursor(config.id, capacity, cursor)
        };
        let map = unsafe { MmapMut::map_mut(&file) }.map_err(io_err(name))?;
        Ok(MappedArena {
            id: config.id,
            name: config.name.clone(),
            space: Mutex::new(space),
            map: RwLock::new(map),
            throttle: config.latency.map(Throttle::new),
            metrics: TierMetrics::default(),
        })
    }

    fn locate(&self, handle: Handle, offset: u64, len: u64) -> Result<usize> {
        if handle.tier() != self.id {
            return Err(TierError::WrongTier {
                tier: self.name.clone(),
                handle,
            });
        }
        let start = handle.offset() + offset;
        if !self.space.lock().in_bounds(start, len) {
            return Err(TierError::OutOfBounds {
                tier: self.name.clone(),
                offset: start,
                len,
            });
        }
        Ok((HEADER_LEN + start) as usize)
    }
}

impl TierAllocator for MappedArena {
    fn id(&self) -> TierId {
        self.id
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn is_durable(&self) -> bool {
        true
    }

    fn alloc(&self, size: u64) -> Result<Handle> {
        if size == 0 {
            return Err(TierError::ZeroSize {
                tier: self.name.clone(),
            });
        }
        let mut space = self.space.lock();
        let off = space.alloc(size).ok_or_else(|| TierError::CapacityExhausted {
            tier: self.name.clone(),
            requested: size,
            free: space.free_bytes(),
        })?;
        let mut map = self.map.write();
        let start = (HEADER_LEN + off) as usize;
        map[start..start + size as usize].fill(0);
        map[CURSOR_AT..CURSOR_AT + 8].copy_from_slice(&space.cursor().to_le_bytes());
        Ok(Handle::new(self.id, off))
    }

    fn release(&self, handle: Handle, size: u64) {
        let mut space = self.space.lock();
        space.release(handle.offset(), size);
        self.map.write()[CURSOR_AT..CURSOR_AT + 8].copy_from_slice(&space.cursor().to_le_bytes());
    }

    fn can_fit(&self, size: u64) -> bool {
        self.space.lock().can_fit(size)
    }

    fn write(&self, handle: Handle, offset: u64, bytes: &[u8]) -> Result<()> {
        let start = self.locate(handle, offset, bytes.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(bytes.len() as u64, true);
        }
        self.map.write()[start..start + bytes.len()].copy_from_slice(bytes);
        self.metrics.on_write(bytes.len() as u64);
        Ok(())
    }

    fn read(&self, handle: Handle, offset: u64, buf: &mut [u8]) -> Result<()> {
        let start = self.locate(handle, offset, buf.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(buf.len() as u64, false);
        }
        buf.copy_from_slice(&self.map.read()[start..start + buf.len()]);
        self.metrics.on_read(buf.len() as u64);
        Ok(())
    }

    fn sync(&self) -> Result<()> {
        self.map.read().flush().map_err(io_err(&self.name))
    }

    fn usage(&self) -> Usage {
        let s = self.space.lock();
        Usage {
            used: s.used(),
            capacity: s.capacity(),
        }
    }

    fn metrics(&self) -> &TierMetrics {
        &self.metrics
    }

    fn root(&self) -> Handle {
        Handle::from_raw(read_u64(&self.map.read(), ROOT_AT))
    }

    fn set_root(&self, handle: Handle) -> Result<()> {
        self.map.write()[ROOT_AT..ROOT_AT + 8].copy_from_slice(&handle.raw().to_le_bytes());
        Ok(())
    }
}
