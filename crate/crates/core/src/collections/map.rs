use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;

use super::{CollectionError, Result};
use crate::schema::LayoutPlan;
use crate::store::{ObjectRef, Store};
use crate::tiers::{Handle, TierAllocator, TierId};

pub const INITIAL_BUCKETS: u64 = 16;

const HEADER: u64 = 24;
const ENTRY: u64 = 24;
const KEY: u64 = 0;
const VALUE: u64 = 8;
const NEXT: u64 = 16;

fn hash(key: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(key);
    h.finish()
}

/// Chained hash map from byte keys to object records.
///
/// Header: `bucket_count: u64`, `len: u64`, `buckets: Handle`. Each bucket
/// heads a chain of 24-byte entries `key buffer, value root, next`. Keys,
/// entries and buckets live on the map's tier; values stay wherever the
/// caller created them.
#[derive(Debug, Clone)]
pub struct DurableMap {
    header: Handle,
    buckets: Handle,
    bucket_count: u64,
    len: u64,
    layout: Arc<LayoutPlan>,
}

impl DurableMap {
    pub fn new(store: &Store, layout: &Arc<LayoutPlan>, tier: TierId) -> Result<DurableMap> {
        let t = store.tier(tier)?;
        let buckets = t.alloc(INITIAL_BUCKETS * 8)?;
        let header = match t.alloc(HEADER) {
            Ok(h) => h,
            Err(e) => {
                t.release(buckets, INITIAL_BUCKETS * 8);
                return Err(e.into());
            }
        };
        let map = DurableMap {
            header,
            buckets,
            bucket_count: INITIAL_BUCKETS,
            len: 0,
            layout: layout.clone(),
        };
        map.write_header(&**t)?;
        Ok(map)
    }

    pub fn open(store: &Store, header: Handle, layout: &Arc<LayoutPlan>) -> Result<DurableMap> {
        let t = store.tier(header.tier())?;
        let mut raw = [0u8; HEADER as usize];
        t.read(header, 0, &mut raw)?;
        let word = |i: usize| u64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap());
        let (bucket_count, len, buckets) = (word(0), word(1), Handle::from_raw(word(2)));
        if bucket_count == 0 || buckets.is_null() || buckets.tier() != header.tier() {
            return Err(CollectionError::CorruptHeader {
                handle: header,
                message: format!("{bucket_count} buckets at {buckets:?}"),
            });
        }
        Ok(DurableMap {
            header,
            buckets,
            bucket_count,
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

    pub fn bucket_count(&self) -> u64 {
        self.bucket_count
    }

    fn tier<'s>(&self, store: &'s Store) -> Result<&'s Arc<dyn TierAllocator>> {
        Ok(store.tier(self.header.tier())?)
    }

    fn write_header(&self, t: &dyn TierAllocator) -> Result<()> {
        let mut raw = [0u8; HEADER as usize];
        raw[..8].copy_from_slice(&self.bucket_count.to_le_bytes());
        raw[8..16].copy_from_slice(&self.len.to_le_bytes());
        raw[16..].copy_from_slice(&self.buckets.raw().to_le_bytes());
        t.write(self.header, 0, &raw)?;
        Ok(())
    }

    fn slot(&self, key: &[u8]) -> u64 {
        (hash(key) % self.bucket_count) * 8
    }

    /// Finds the entry holding `key` and the entry that links to it (null if
    /// it is the bucket head).
    fn find(&self, t: &dyn TierAllocator, key: &[u8]) -> Result<Option<(Handle, Handle)>> {
        let mut prev = Handle::NULL;
        let mut cur = t.get_handle(self.buckets, self.slot(key))?;
        while !cur.is_null() {
            let k = t.get_handle(cur, KEY)?;
            if t.buffer_len(k)? == key.len() as u64 && t.retrieve_buffer(k)? == key {
                return Ok(Some((prev, cur)));
            }
            prev = cur;
            cur = t.get_handle(cur, NEXT)?;
        }
        Ok(None)
    }

    pub fn get(&self, store: &Store, key: &[u8]) -> Result<Option<ObjectRef>> {
        let t = self.tier(store)?;
        Ok(match self.find(&**t, key)? {
            Some((_, entry)) => Some(ObjectRef {
                root: t.get_handle(entry, VALUE)?,
                layout: self.layout.clone(),
            }),
            None => None,
        })
    }

    pub fn contains_key(&self, store: &Store, key: &[u8]) -> Result<bool> {
        Ok(self.find(&**self.tier(store)?, key)?.is_some())
    }

    /// Binds `key` to `value`, returning the root it replaced.
    pub fn put(&mut self, store: &Store, key: &[u8], value: &ObjectRef) -> Result<Option<Handle>> {
        let t = self.tier(store)?.clone();
        if let Some((_, entry)) = self.find(&*t, key)? {
            let old = t.get_handle(entry, VALUE)?;
            t.set_handle(entry, VALUE, value.root)?;
            return Ok(Some(old));
        }
        if (self.len + 1) * 4 > self.bucket_count * 3 {
            self.grow(&*t)?;
        }
        let key_buf = t.create_buffer(key)?;
        let entry = match t.alloc(ENTRY) {
            Ok(h) => h,
            Err(e) => {
                t.release(key_buf, 8 + key.len() as u64);
                return Err(e.into());
            }
        };
        let slot = self.slot(key);
        let head = t.get_handle(self.buckets, slot)?;
        let mut raw = [0u8; ENTRY as usize];
        raw[..8].copy_from_slice(&key_buf.raw().to_le_bytes());
        raw[8..16].copy_from_slice(&value.root.raw().to_le_bytes());
        raw[16..].copy_from_slice(&head.raw().to_le_bytes());
        t.write(entry, 0, &raw)?;
        t.set_handle(self.buckets, slot, entry)?;
        self.len += 1;
        self.write_header(&*t)?;
        Ok(None)
    }

    /// Unlinks `key`. The value record itself is left to its owner.
    pub fn delete(&mut self, store: &Store, key: &[u8]) -> Result<bool> {
        let t = self.tier(store)?.clone();
        let Some((prev, entry)) = self.find(&*t, key)? else {
            return Ok(false);
        };
        let next = t.get_handle(entry, NEXT)?;
        if prev.is_null() {
            t.set_handle(self.buckets, self.slot(key), next)?;
        } else {
            t.set_handle(prev, NEXT, next)?;
        }
        self.len -= 1;
        self.write_header(&*t)?;
        let key_buf = t.get_handle(entry, KEY)?;
        t.release(key_buf, 8 + key.len() as u64);
        t.release(entry, ENTRY);
        Ok(true)
    }

    /// Every `(key, value root)` pair, in bucket order.
    pub fn entries(&self, store: &Store) -> Result<Vec<(Vec<u8>, Handle)>> {
        let t = self.tier(store)?;
        let mut out = Vec::with_capacity(self.len as usize);
        for b in 0..self.bucket_count {
            let mut cur = t.get_handle(self.buckets, b * 8)?;
            while !cur.is_null() {
                out.push((t.retrieve_buffer(t.get_handle(cur, KEY)?)?, t.get_handle(cur, VALUE)?));
                cur = t.get_handle(cur, NEXT)?;
            }
        }
        Ok(out)
    }

    fn grow(&mut self, t: &dyn TierAllocator) -> Result<()> {
        let count = self.bucket_count * 2;
        let buckets = t.alloc(count * 8)?;
        for b in 0..self.bucket_count {
            let mut cur = t.get_handle(self.buckets, b * 8)?;
            while !cur.is_null() {
                let next = t.get_handle(cur, NEXT)?;
                let key = t.retrieve_buffer(t.get_handle(cur, KEY)?)?;
                let slot = (hash(&key) % count) * 8;
                t.set_handle(cur, NEXT, t.get_handle(buckets, slot)?)?;
                t.set_handle(buckets, slot, cur)?;
                cur = next;
            }
        }
        let old = (self.buckets, self.bucket_count);
        self.buckets = buckets;
        self.bucket_count = count;
        self.write_header(t)?;
        t.release(old.0, old.1 * 8);
        Ok(())
    }
}
