use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use super::latency::Throttle;
use super::space::ArenaSpace;
use super::{
    check_capacity, Handle, Result, TierAllocator, TierConfig, TierError, TierId, TierMetrics, Usage, LEN_PREFIX,
};

const INDEX: &str = "index.log";
const ROOT: &str = "root";

/// Block tier: one file per allocation, named by its offset, plus an
/// append-only `index.log` of `offset,size` lines (`size` 0 marks a release).
pub struct DiskTier {
    id: TierId,
    name: String,
    dir: PathBuf,
    state: Mutex<DiskState>,
    throttle: Option<Throttle>,
    metrics: TierMetrics,
}

struct DiskState {
    space: ArenaSpace,
    live: BTreeMap<u64, u64>,
    index: BufWriter<File>,
    dirty: HashSet<u64>,
}

impl DiskTier {
    pub fn open(config: &TierConfig, dir: &Path) -> Result<DiskTier> {
        check_capacity(config)?;
        let io = |source| TierError::Io {
            tier: config.name.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let index_path = dir.join(INDEX);
        let mut live = BTreeMap::new();
        if index_path.exists() {
            let reader = BufReader::new(File::open(&index_path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.is_empty() {
                    continue;
                }
                let parsed = line
                    .split_once(',')
                    .and_then(|(o, s)| Some((o.parse::<u64>().ok()?, s.parse::<u64>().ok()?)));
                match parsed {
                    Some((off, 0)) => {
                        live.remove(&off);
                    }
                    Some((off, size)) => {
                        live.insert(off, size);
                    }
                    None => {
                        return Err(TierError::CorruptHeader {
                            tier: config.name.clone(),
                            reason: format!("index line {}: `{line}`", n + 1),
                        })
                    }
                }
            }
        }
        let space = ArenaSpace::from_live(config.id, config.capacity, &live);
        if space.used() > config.capacity {
            return Err(TierError::CapacityMismatch {
                tier: config.name.clone(),
                expected: config.capacity,
                found: space.used(),
            });
        }
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(io)?;
        Ok(DiskTier {
            id: config.id,
            name: config.name.clone(),
            dir: dir.to_path_buf(),
            state: Mutex::new(DiskState {
                space,
                live,
                index: BufWriter::new(index),
                dirty: HashSet::new(),
            }),
            throttle: config.latency.map(Throttle::new),
            metrics: TierMetrics::default(),
        })
    }

    fn io(&self, source: std::io::Error) -> TierError {
        TierError::Io {
            tier: self.name.clone(),
            source,
        }
    }

    fn blob_path(&self, offset: u64) -> PathBuf {
        self.dir.join(format!("{offset:016x}.blob"))
    }

    /// Reserves space and writes the blob file, zero-filled unless `content`
    /// is given.
    fn alloc_blob(&self, size: u64, content: Option<&[u8]>) -> Result<Handle> {
        if size == 0 {
            return Err(TierError::ZeroSize {
                tier: self.name.clone(),
            });
        }
        let mut st = self.state.lock();
        let off = st.space.alloc(size).ok_or_else(|| TierError::CapacityExhausted {
            tier: self.name.clone(),
            requested: size,
            free: st.space.free_bytes(),
        })?;
        let path = self.blob_path(off);
        let written = match content {
            Some(bytes) => fs::write(&path, bytes),
            None => File::create(&path).and_then(|f| f.set_len(size)),
        };
        if let Err(e) = written {
            st.space.release(off, size);
            return Err(self.io(e));
        }
        writeln!(st.index, "{off},{size}").map_err(|e| self.io(e))?;
        st.live.insert(off, size);
        st.dirty.insert(off);
        Ok(Handle::new(self.id, off))
    }

    /// Size of the blob at `handle` after checking `[offset, offset+len)` fits.
    fn check(&self, handle: Handle, offset: u64, len: u64) -> Result<u64> {
        if handle.tier() != self.id {
            return Err(TierError::WrongTier {
                tier: self.name.clone(),
                handle,
            });
        }
        let st = self.state.lock();
        match st.live.get(&handle.offset()) {
            Some(&size) if offset + len <= size => Ok(size),
            _ => Err(TierError::OutOfBounds {
                tier: self.name.clone(),
                offset: handle.offset() + offset,
                len,
            }),
        }
    }
}

impl TierAllocator for DiskTier {
    fn id(&self) -> TierId {
        self.id
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn is_durable(&self) -> bool {
        true
    }

    fn is_block_device(&self) -> bool {
        true
    }

    fn alloc(&self, size: u64) -> Result<Handle> {
        self.alloc_blob(size, None)
    }

    fn release(&self, handle: Handle, size: u64) {
        let mut st = self.state.lock();
        if st.live.remove(&handle.offset()).is_none() {
            return;
        }
        st.space.release(handle.offset(), size);
        st.dirty.remove(&handle.offset());
        let _ = writeln!(st.index, "{},0", handle.offset());
        let _ = fs::remove_file(self.blob_path(handle.offset()));
    }

    fn can_fit(&self, size: u64) -> bool {
        self.state.lock().space.can_fit(size)
    }

    fn write(&self, handle: Handle, offset: u64, bytes: &[u8]) -> Result<()> {
        self.check(handle, offset, bytes.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(bytes.len() as u64, true);
        }
        let file = OpenOptions::new()
            .write(true)
            .open(self.blob_path(handle.offset()))
            .map_err(|e| self.io(e))?;
        file.write_all_at(bytes, offset).map_err(|e| self.io(e))?;
        self.state.lock().dirty.insert(handle.offset());
        self.metrics.on_write(bytes.len() as u64);
        self.metrics.on_serde();
        Ok(())
    }

    fn read(&self, handle: Handle, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.check(handle, offset, buf.len() as u64)?;
        if let Some(t) = &self.throttle {
            t.charge(buf.len() as u64, false);
        }
        let file = File::open(self.blob_path(handle.offset())).map_err(|e| self.io(e))?;
        file.read_exact_at(buf, offset).map_err(|e| self.io(e))?;
        self.metrics.on_read(buf.len() as u64);
        self.metrics.on_serde();
        Ok(())
    }

    fn create_buffer(&self, payload: &[u8]) -> Result<Handle> {
        let mut bytes = Vec::with_capacity(payload.len() + LEN_PREFIX as usize);
        bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        bytes.extend_from_slice(payload);
        if let Some(t) = &self.throttle {
            t.charge(bytes.len() as u64, true);
        }
        let handle = self.alloc_blob(bytes.len() as u64, Some(&bytes))?;
        self.metrics.on_write(bytes.len() as u64);
        self.metrics.on_serde();
        Ok(handle)
    }

    /// Reads the whole blob and decodes it in one deserialization step.
    fn retrieve_buffer(&self, handle: Handle) -> Result<Vec<u8>> {
        let size = self.check(handle, 0, LEN_PREFIX)?;
        if let Some(t) = &self.throttle {
            t.charge(size, false);
        }
        let mut bytes = fs::read(self.blob_path(handle.offset())).map_err(|e| self.io(e))?;
        self.metrics.on_read(bytes.len() as u64);
        self.metrics.on_serde();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if len + LEN_PREFIX != bytes.len() as u64 {
            return Err(TierError::CorruptBuffer {
                tier: self.name.clone(),
                handle,
                len,
            });
        }
        bytes.drain(..LEN_PREFIX as usize);
        Ok(bytes)
    }

    fn sync(&self) -> Result<()> {
        let mut st = self.state.lock();
        st.index.flush().map_err(|e| self.io(e))?;
        st.index.get_ref().sync_all().map_err(|e| self.io(e))?;
        for off in std::mem::take(&mut st.dirty) {
            File::open(self.blob_path(off))
                .and_then(|f| f.sync_all())
                .map_err(|e| self.io(e))?;
        }
        let root = self.dir.join(ROOT);
        if root.exists() {
            File::open(root).and_then(|f| f.sync_all()).map_err(|e| self.io(e))?;
        }
        File::open(&self.dir).and_then(|d| d.sync_all()).map_err(|e| self.io(e))
    }

    fn usage(&self) -> Usage {
        let st = self.state.lock();
        Usage {
            used: st.space.used(),
            capacity: st.space.capacity(),
        }
    }

    fn metrics(&self) -> &TierMetrics {
        &self.metrics
    }

    fn root(&self) -> Handle {
        fs::read_to_string(self.dir.join(ROOT))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .map(Handle::from_raw)
            .unwrap_or(Handle::NULL)
    }

    fn set_root(&self, handle: Handle) -> Result<()> {
        fs::write(self.dir.join(ROOT), handle.raw().to_string()).map_err(|e| self.io(e))
    }
}
