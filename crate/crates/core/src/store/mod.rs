//! Durable objects whose fields live on the tiers picked by their tags.
//!
//! An object is a fixed-size record on one tier. Fixed-width fields sit
//! inline; variable fields hold a [`Handle`] to a length-prefixed buffer on
//! whichever tagged tier had room when the value was written. Fields tagged
//! with more than one tier can later be demoted or promoted, and are the
//! victims when a single-tagged field needs room on a full tier.

mod manifest;
mod metrics;
mod value;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::schema::{FieldKind, LayoutPlan, SchemaError};
use crate::tiers::{open_tier, Handle, TierAllocator, TierConfig, TierError, TierId, Usage, LEN_PREFIX};

pub use manifest::{parse_tier_config, parse_tier_configs, Manifest};
pub use metrics::StoreMetrics;
pub use value::Value;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("no tier with id {0}")]
    UnknownTier(TierId),
    #[error("no tier named `{0}`")]
    UnknownTierName(String),
    #[error("duplicate tier id {0}")]
    DuplicateTier(TierId),
    #[error("schema `{schema}` has no field `{field}`")]
    UnknownField { schema: String, field: String },
    #[error("field `{field}` is {expected}, got {found}")]
    KindMismatch {
        field: String,
        expected: FieldKind,
        found: FieldKind,
    },
    #[error("field `{field}`: every tagged tier is full ({needed} bytes needed)")]
    AllTiersFull { field: String, needed: u64 },
    #[error("tier {tier}: cannot reclaim {needed} bytes (only {reclaimable} reclaimable)")]
    InsufficientSpace { tier: String, needed: u64, reclaimable: u64 },
    #[error("field `{0}` is stored inline and only moves with its record")]
    InlineField(String),
    #[error("field `{field}` is not tagged for tier {tier}")]
    TierNotTagged { field: String, tier: TierId },
    #[error("field `{0}` holds invalid UTF-8")]
    InvalidUtf8(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn is_capacity(&self) -> bool {
        match self {
            StoreError::Tier(e) => e.is_capacity(),
            StoreError::AllTiersFull { .. } | StoreError::InsufficientSpace { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// A live object: its record location plus the layout it was written with.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRef {
    pub root: Handle,
    pub layout: Arc<LayoutPlan>,
}

impl ObjectRef {
    pub fn schema_name(&self) -> &str {
        &self.layout.schema.name
    }
}

/// One payload move performed to make room on a tier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demotion {
    pub object: Handle,
    pub field: String,
    pub from: TierId,
    pub to: TierId,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
struct Resident {
    seq: u64,
    payload: Handle,
    size: u64,
    layout: Arc<LayoutPlan>,
}

/// Multi-tagged payloads by placement order, the eviction candidates.
#[derive(Default)]
struct Residents {
    next_seq: u64,
    by_key: HashMap<(Handle, usize), Resident>,
    order: BTreeMap<u64, (Handle, usize)>,
}

impl Residents {
    fn insert(&mut self, root: Handle, field: usize, payload: Handle, size: u64, layout: &Arc<LayoutPlan>) {
        self.remove(root, field);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.order.insert(seq, (root, field));
        self.by_key.insert(
            (root, field),
            Resident {
                seq,
                payload,
                size,
                layout: layout.clone(),
            },
        );
    }

    fn remove(&mut self, root: Handle, field: usize) {
        if let Some(r) = self.by_key.remove(&(root, field)) {
            self.order.remove(&r.seq);
        }
    }

    fn on_tier(&self, tier: TierId) -> Vec<(Handle, usize, Resident)> {
        self.order
            .values()
            .filter_map(|key| {
                let r = &self.by_key[key];
                (r.payload.tier() == tier).then(|| (key.0, key.1, r.clone()))
            })
            .collect()
    }
}

const STRIPES: usize = 64;

pub struct Store {
    tiers: Vec<Option<Arc<dyn TierAllocator>>>,
    bytes_materialized: AtomicU64,
    residents: Mutex<Residents>,
    demotions: Mutex<Vec<Demotion>>,
    stripes: Vec<RwLock<()>>,
}

impl Store {
    /// Opens every configured tier. Durable tiers resume their prior state.
    pub fn open(configs: &[TierConfig]) -> Result<Store> {
        let tiers = configs
            .iter()
            .map(|c| open_tier(c).map_err(StoreError::from))
            .collect::<Result<Vec<_>>>()?;
        Store::from_tiers(tiers)
    }

    pub fn from_tiers(list: Vec<Arc<dyn TierAllocator>>) -> Result<Store> {
        let mut tiers: Vec<Option<Arc<dyn TierAllocator>>> = Vec::new();
        for tier in list {
            let idx = tier.id().index();
            if tiers.len() <= idx {
                tiers.resize_with(idx + 1, || None);
            }
            if tiers[idx].is_some() {
                return Err(StoreError::DuplicateTier(tier.id()));
            }
            tiers[idx] = Some(tier);
        }
        Ok(Store {
            tiers,
            bytes_materialized: AtomicU64::new(0),
            residents: Mutex::new(Residents::default()),
            demotions: Mutex::new(Vec::new()),
            stripes: (0..STRIPES).map(|_| RwLock::new(())).collect(),
        })
    }

    pub fn tier(&self, id: TierId) -> Result<&Arc<dyn TierAllocator>> {
        self.tiers
            .get(id.index())
            .and_then(|t| t.as_ref())
            .ok_or(StoreError::UnknownTier(id))
    }

    pub fn tier_by_name(&self, name: &str) -> Result<&Arc<dyn TierAllocator>> {
        self.tiers()
            .find(|t| t.name() == name)
            .ok_or_else(|| StoreError::UnknownTierName(name.to_string()))
    }

    pub fn tiers(&self) -> impl Iterator<Item = &Arc<dyn TierAllocator>> {
        self.tiers.iter().flatten()
    }

    pub fn usage(&self, id: TierId) -> Result<Usage> {
        Ok(self.tier(id)?.usage())
    }

    /// Flushes every tier.
    pub fn sync(&self) -> Result<()> {
        for tier in self.tiers() {
            tier.sync()?;
        }
        Ok(())
    }

    pub fn metrics(&self) -> StoreMetrics {
        StoreMetrics {
            bytes_materialized: self.bytes_materialized.load(Ordering::Relaxed),
            tiers: self
                .tiers()
                .map(|t| (t.name().to_string(), t.metrics().snapshot()))
                .collect(),
        }
    }

    /// Every demotion performed by eviction since the store was opened.
    pub fn demotion_log(&self) -> Vec<Demotion> {
        self.demotions.lock().clone()
    }

    pub fn set_root(&self, tier: TierId, handle: Handle) -> Result<()> {
        Ok(self.tier(tier)?.set_root(handle)?)
    }

    pub fn root(&self, tier: TierId) -> Result<Handle> {
        Ok(self.tier(tier)?.root())
    }

    fn stripe(&self, root: Handle) -> &RwLock<()> {
        let h = root.raw().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        &self.stripes[(h >> 58) as usize % STRIPES]
    }

    fn materialized(&self, bytes: u64) {
        self.bytes_materialized.fetch_add(bytes, Ordering::Relaxed);
    }

    /// Allocates a zeroed record; variable fields start unset.
    pub fn create_object(&self, layout: &Arc<LayoutPlan>) -> Result<ObjectRef> {
        let tier = self.tier(layout.record_tier)?;
        let root = tier.alloc(layout.record_size.max(1) as u64)?;
        Ok(ObjectRef {
            root,
            layout: layout.clone(),
        })
    }

    /// Rebinds a record written earlier (e.g. before a restart).
    pub fn open_object(&self, root: Handle, layout: &Arc<LayoutPlan>) -> ObjectRef {
        ObjectRef {
            root,
            layout: layout.clone(),
        }
    }

    fn index_of(&self, obj: &ObjectRef, field: &str) -> Result<usize> {
        obj.layout
            .schema
            .field_index(field)
            .ok_or_else(|| StoreError::UnknownField {
                schema: obj.layout.schema.name.clone(),
                field: field.to_string(),
            })
    }

    fn record_tier(&self, obj: &ObjectRef) -> Result<&Arc<dyn TierAllocator>> {
        self.tier(obj.root.tier())
    }

    fn inline_handle(&self, obj: &ObjectRef, idx: usize) -> Result<Handle> {
        let offset = obj.layout.entries[idx].offset as u64;
        Ok(self.record_tier(obj)?.get_handle(obj.root, offset)?)
    }

    pub fn set_field(&self, obj: &ObjectRef, field: &str, value: impl Into<Value>) -> Result<()> {
        let idx = self.index_of(obj, field)?;
        self.set_field_at(obj, idx, value.into())
    }

    pub fn set_field_at(&self, obj: &ObjectRef, idx: usize, value: Value) -> Result<()> {
        let entry = &obj.layout.entries[idx];
        if value.kind() != entry.kind {
            return Err(StoreError::KindMismatch {
                field: entry.name.clone(),
                expected: entry.kind,
                found: value.kind(),
            });
        }
        let Some(payload) = value.payload() else {
            let _guard = self.stripe(obj.root).write();
            let tier = self.record_tier(obj)?;
            tier.set_val(obj.root, entry.offset as u64, value.to_scalar().unwrap())?;
            return Ok(());
        };

        let spec = &obj.layout.schema.fields[idx];
        let needed = LEN_PREFIX + payload.len() as u64;
        let mut guard = self.stripe(obj.root).write();
        let target = match self.place_tier(spec.tags.as_slice(), needed) {
            Some(t) => t,
            None if spec.tags.len() == 1 => {
                drop(guard);
                self.evict_for(spec.tags[0], needed)?;
                guard = self.stripe(obj.root).write();
                self.place_tier(&spec.tags, needed).ok_or_else(|| StoreError::AllTiersFull {
                    field: spec.name.clone(),
                    needed,
                })?
            }
            None => {
                return Err(StoreError::AllTiersFull {
                    field: spec.name.clone(),
                    needed,
                })
            }
        };
        let old = self.inline_handle(obj, idx)?;
        let new = self.tier(target)?.create_buffer(payload)?;
        self.record_tier(obj)?.set_handle(obj.root, entry.offset as u64, new)?;
        if !old.is_null() {
            self.free_buffer(old)?;
        }
        let mut residents = self.residents.lock();
        if spec.is_multi_tag() {
            residents.insert(obj.root, idx, new, needed, &obj.layout);
        } else {
            residents.remove(obj.root, idx);
        }
        drop(residents);
        drop(guard);
        Ok(())
    }

    fn free_buffer(&self, handle: Handle) -> Result<()> {
        let tier = self.tier(handle.tier())?;
        let len = tier.buffer_len(handle)?;
        tier.release(handle, LEN_PREFIX + len);
        Ok(())
    }

    /// Returns `None` for a variable field that was never set.
    pub fn get_field(&self, obj: &ObjectRef, field: &str) -> Result<Option<Value>> {
        let idx = self.index_of(obj, field)?;
        self.get_field_at(obj, idx)
    }

    pub fn get_field_at(&self, obj: &ObjectRef, idx: usize) -> Result<Option<Value>> {
        let entry = &obj.layout.entries[idx];
        let _guard = self.stripe(obj.root).read();
        let record = self.record_tier(obj)?;
        if let Some(kind) = value::scalar_kind(entry.kind) {
            let v = record.get_val(obj.root, entry.offset as u64, kind)?;
            self.materialized(entry.width as u64);
            return Ok(Some(Value::from_scalar(v)));
        }
        let handle = record.get_handle(obj.root, entry.offset as u64)?;
        if handle.is_null() {
            return Ok(None);
        }
        let bytes = self.tier(handle.tier())?.retrieve_buffer(handle)?;
        self.materialized(bytes.len() as u64);
        decode_payload(entry.kind, &entry.name, bytes).map(Some)
    }

    /// Reads several fields; fixed fields are fetched with one record read.
    pub fn get_fields(&self, obj: &ObjectRef, indices: &[usize]) -> Result<Vec<Option<Value>>> {
        let entries = &obj.layout.entries;
        let _guard = self.stripe(obj.root).read();
        let record = self.record_tier(obj)?;
        let span = indices
            .iter()
            .map(|&i| &entries[i])
            .fold(None, |acc: Option<(usize, usize)>, e| {
                let (lo, hi) = acc.unwrap_or((e.offset, e.offset + e.width));
                Some((lo.min(e.offset), hi.max(e.offset + e.width)))
            });
        let Some((lo, hi)) = span else {
            return Ok(Vec::new());
        };
        let mut inline = vec![0u8; hi - lo];
        record.read(obj.root, lo as u64, &mut inline)?;
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let e = &entries[i];
            let raw = &inline[e.offset - lo..e.offset - lo + e.width];
            if let Some(kind) = value::scalar_kind(e.kind) {
                self.materialized(e.width as u64);
                out.push(Some(Value::from_scalar(crate::tiers::Scalar::decode(kind, raw))));
                continue;
            }
            let handle = Handle::from_raw(u64::from_le_bytes(raw.try_into().unwrap()));
            if handle.is_null() {
                out.push(None);
                continue;
            }
            let bytes = self.tier(handle.tier())?.retrieve_buffer(handle)?;
            self.materialized(bytes.len() as u64);
            out.push(Some(decode_payload(e.kind, &e.name, bytes)?));
        }
        Ok(out)
    }

    /// Stores an opaque byte string (such as a whole serialized record) on `tier`.
    pub fn put_blob(&self, tier: TierId, bytes: &[u8]) -> Result<Handle> {
        Ok(self.tier(tier)?.create_buffer(bytes)?)
    }

    /// Reads back a blob; its length counts as materialized.
    pub fn get_blob(&self, handle: Handle) -> Result<Vec<u8>> {
        let bytes = self.tier(handle.tier())?.retrieve_buffer(handle)?;
        self.materialized(bytes.len() as u64);
        Ok(bytes)
    }

    pub fn free_blob(&self, handle: Handle) -> Result<()> {
        self.free_buffer(handle)
    }

    /// Tier currently holding a variable field's payload, `None` if unset.
    pub fn payload_tier(&self, obj: &ObjectRef, field: &str) -> Result<Option<TierId>> {
        let idx = self.index_of(obj, field)?;
        if !obj.layout.entries[idx].kind.is_variable() {
            return Err(StoreError::InlineField(field.to_string()));
        }
        let _guard = self.stripe(obj.root).read();
        let h = self.inline_handle(obj, idx)?;
        Ok((!h.is_null()).then(|| h.tier()))
    }

    fn place_tier(&self, tags: &[TierId], needed: u64) -> Option<TierId> {
        tags.iter()
            .copied()
            .find(|&t| self.tier(t).map(|tier| tier.can_fit(needed)).unwrap_or(false))
    }

    /// First tagged tier with room for a payload of `payload_len` bytes.
    pub fn place_field(&self, obj: &ObjectRef, field: &str, payload_len: u64) -> Result<TierId> {
        let idx = self.index_of(obj, field)?;
        let spec = &obj.layout.schema.fields[idx];
        let needed = LEN_PREFIX + payload_len;
        self.place_tier(&spec.tags, needed).ok_or_else(|| StoreError::AllTiersFull {
            field: spec.name.clone(),
            needed,
        })
    }

    pub fn demote_field(&self, obj: &ObjectRef, field: &str, to: TierId) -> Result<()> {
        self.move_field(obj, field, to)
    }

    pub fn promote_field(&self, obj: &ObjectRef, field: &str, to: TierId) -> Result<()> {
        self.move_field(obj, field, to)
    }

    fn move_field(&self, obj: &ObjectRef, field: &str, to: TierId) -> Result<()> {
        let idx = self.index_of(obj, field)?;
        let spec = &obj.layout.schema.fields[idx];
        if !spec.kind.is_variable() {
            return Err(StoreError::InlineField(field.to_string()));
        }
        if !spec.tags.contains(&to) {
            return Err(StoreError::TierNotTagged {
                field: field.to_string(),
                tier: to,
            });
        }
        let _guard = self.stripe(obj.root).write();
        let current = self.inline_handle(obj, idx)?;
        if current.is_null() || current.tier() == to {
            return Ok(());
        }
        self.relocate(obj.root, &obj.layout, idx, current, to)?;
        Ok(())
    }

    /// Copies a payload to `to`, swings the inline handle, frees the old
    /// region. Caller holds the object's write stripe.
    fn relocate(&self, root: Handle, layout: &Arc<LayoutPlan>, idx: usize, current: Handle, to: TierId) -> Result<u64> {
        let from = self.tier(current.tier())?;
        let bytes = from.retrieve_buffer(current)?;
        let new = self.tier(to)?.create_buffer(&bytes)?;
        let offset = layout.entries[idx].offset as u64;
        self.tier(root.tier())?.set_handle(root, offset, new)?;
        let size = LEN_PREFIX + bytes.len() as u64;
        from.release(current, size);
        let mut residents = self.residents.lock();
        if layout.schema.fields[idx].is_multi_tag() {
            residents.insert(root, idx, new, size, layout);
        }
        Ok(size)
    }

    /// Demotes multi-tagged payloads off `tier`, oldest placement first, until
    /// `needed` bytes fit. Each victim moves to the next tag after `tier` in
    /// its own preference list that has room.
    pub fn evict_for(&self, tier: TierId, needed: u64) -> Result<Vec<Demotion>> {
        let target = self.tier(tier)?.clone();
        if target.can_fit(needed) {
            return Ok(Vec::new());
        }
        let candidates = self.residents.lock().on_tier(tier);
        let reclaimable: u64 = candidates.iter().map(|c| c.2.size).sum();
        if target.usage().free() + reclaimable < needed {
            return Err(StoreError::InsufficientSpace {
                tier: target.name().to_string(),
                needed,
                reclaimable,
            });
        }
        let mut done = Vec::new();
        for (root, idx, resident) in candidates {
            if target.can_fit(needed) {
                break;
            }
            let spec = &resident.layout.schema.fields[idx];
            let Some(pos) = spec.tags.iter().position(|&t| t == tier) else {
                continue;
            };
            let Some(dest) = self.place_tier(&spec.tags[pos + 1..], resident.size) else {
                continue;
            };
            let _guard = self.stripe(root).write();
            // skip if the payload moved since we listed it
            let live = self.tier(root.tier())?.get_handle(root, resident.layout.entries[idx].offset as u64)?;
            if live != resident.payload {
                continue;
            }
            let bytes = self.relocate(root, &resident.layout, idx, live, dest)?;
            let d = Demotion {
                object: root,
                field: spec.name.clone(),
                from: tier,
                to: dest,
                bytes,
            };
            self.demotions.lock().push(d.clone());
            done.push(d);
        }
        if !target.can_fit(needed) {
            return Err(StoreError::InsufficientSpace {
                tier: target.name().to_string(),
                needed,
                reclaimable,
            });
        }
        Ok(done)
    }
}

fn decode_payload(kind: FieldKind, field: &str, bytes: Vec<u8>) -> Result<Value> {
    match kind {
        FieldKind::String => String::from_utf8(bytes)
            .map(Value::Str)
            .map_err(|_| StoreError::InvalidUtf8(field.to_string())),
        _ => Ok(Value::Bytes(bytes)),
    }
}

#[cfg(test)]
mod tests;
