use parking_lot::{Mutex, RwLock};

use super::latency::Throttle;
use super::space::ArenaSpace;
use super::{check_capacity, Handle, Result, TierAllocator, TierConfig, TierError, TierId, TierMetrics, Usage};

/// Arena in process memory. The backing vector grows with the cursor, so a
/// large capacity costs nothing until it is used.
pub struct VolatileArena {
    id: TierId,
    name: String,
    space: Mutex<ArenaSpace>,
    data: RwLock<Vec<u8>>,
    root: Mutex<Handle>,
    throttle: Option<Throttle>,
    metrics: TierMetrics,
}

impl VolatileArena {
    pub fn new(config: &TierConfig) -> Result<VolatileArena> {
        check_capacity(config)?;
        Ok(VolatileArena {
            id: config.id,
            name: config.name.clone(),
            space: Mutex::new(ArenaSpace::new(config.id, config.capacity)),
            data: RwLock::new(Vec::new()),
            root: Mutex::new(Handle::NULL),
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
        Ok(start as usize)
    }
}

impl TierAllocator for VolatileArena {
    fn id(&self) -> TierId {
        self.id
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn is_durable(&self) -> bool {
        false
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
        let end = (off + size) as usize;
        let mut data = self.data.write();
        if data.len() < end {
            data.resize(end, 0);
        }
        data[off as usize..end].fill(0);
        Ok(Handle::new(self.id, off))
    }

    fn release(&self, handle: Handle, size: u64) {
        self.space.lock().release(handle.offset(), size);
    }

    fn can_fit(&self, size: u64) -> bool {
        self.space.lock().can_fit(size)
    }

    fn write(&self, handle: Handle, offset: u64, bytes: &[u8]) -> Result<()> {
        let start = self.locate(handle, offset, bytes.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(bytes.len() as u64, true);
        }
        self.data.write()[start..start + bytes.len()].copy_from_slice(bytes);
        self.metrics.on_write(bytes.len() as u64);
        Ok(())
    }

    fn read(&self, handle: Handle, offset: u64, buf: &mut [u8]) -> Result<()> {
        let start = self.locate(handle, offset, buf.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(buf.len() as u64, false);
        }
        buf.copy_from_slice(&self.data.read()[start..start + buf.len()]);
        self.metrics.on_read(buf.len() as u64);
        Ok(())
    }

    fn sync(&self) -> Result<()> {
        Ok(())
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
        *self.root.lock()
    }

    fn set_root(&self, handle: Handle) -> Result<()> {
        *self.root.lock() = handle;
        Ok(())
    }
}
