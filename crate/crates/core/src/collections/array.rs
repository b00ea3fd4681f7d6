use std::sync::Arc;

use super::{CollectionError, Result};
use crate::schema::LayoutPlan;
use crate::store::{ObjectRef, Store, Value};
use crate::tiers::{Handle, TierId};

const HEADER: u64 = 16;

/// Fixed-length array of records stored back to back on one tier.
///
/// Header: `len: u64`, `data: Handle`. Element `i` is the record at
/// `data + i * record_size`; its variable payloads are placed by the store.
#[derive(Debug, Clone)]
pub struct DurableArray {
    header: Handle,
    data: Handle,
    len: u64,
    layout: Arc<LayoutPlan>,
}

impl DurableArray {
    pub fn new(store: &Store, layout: &Arc<LayoutPlan>, len: u64, tier: TierId) -> Result<DurableArray> {
        let t = store.tier(tier)?;
        let bytes = len
            .checked_mul(layout.record_size as u64)
            .ok_or_else(|| CollectionError::IndexOutOfBounds { index: len, len: u64::MAX })?;
        let data = if bytes == 0 { Handle::NULL } else { t.alloc(bytes)? };
        let header = match t.alloc(HEADER) {
            Ok(h) => h,
            Err(e) => {
                if !data.is_null() {
                    t.release(data, bytes);
                }
                return Err(e.into());
            }
        };
        let mut raw = [0u8; HEADER as usize];
        raw[..8].copy_from_slice(&len.to_le_bytes());
        raw[8..].copy_from_slice(&data.raw().to_le_bytes());
        t.write(header, 0, &raw)?;
        Ok(DurableArray {
            header,
            data,
            len,
            layout: layout.clone(),
        })
    }

    /// Reattaches to an array created earlier, typically after a reopen.
    pub fn open(store: &Store, header: Handle, layout: &Arc<LayoutPlan>) -> Result<DurableArray> {
        let mut raw = [0u8; HEADER as usize];
        store.tier(header.tier())?.read(header, 0, &mut raw)?;
        let len = u64::from_le_bytes(raw[..8].try_into().unwrap());
        let data = Handle::from_raw(u64::from_le_bytes(raw[8..].try_into().unwrap()));
        if data.is_null() != (len == 0 || layout.record_size == 0) {
            return Err(CollectionError::CorruptHeader {
                handle: header,
                message: format!("length {len} with data handle {data:?}"),
            });
        }
        Ok(DurableArray {
            header,
            data,
            len,
            layout: layout.clone(),
        })
    }

    pub fn header(&self) -> Handle {
        self.header
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layout(&self) -> &Arc<LayoutPlan> {
        &self.layout
    }

    pub fn element(&self, index: u64) -> Result<ObjectRef> {
        if index >= self.len {
            return Err(CollectionError::IndexOutOfBounds { index, len: self.len });
        }
        Ok(ObjectRef {
            root: self.data.add(index * self.layout.record_size as u64),
            layout: self.layout.clone(),
        })
    }

    pub fn get(&self, store: &Store, index: u64, field: &str) -> Result<Option<Value>> {
        Ok(store.get_field(&self.element(index)?, field)?)
    }

    pub fn set(&self, store: &Store, index: u64, field: &str, value: impl Into<Value>) -> Result<()> {
        Ok(store.set_field(&self.element(index)?, field, value)?)
    }
}
