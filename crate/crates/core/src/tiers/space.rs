use std::collections::BTreeMap;

use super::TierId;

/// Bytes skipped at the start of tier 0 so that no live handle packs to the
/// reserved null value.
pub const GUARD: u64 = 8;

/// Offset bookkeeping shared by all arena backends: a bump cursor plus a list
/// of released extents that are reused first-fit and coalesced on release.
#[derive(Debug, Clone)]
pub struct ArenaSpace {
    base: u64,
    cursor: u64,
    capacity: u64,
    used: u64,
    free: BTreeMap<u64, u64>,
}

impl ArenaSpace {
    pub fn new(tier: TierId, capacity: u64) -> ArenaSpace {
        let base = if tier.0 == 0 { GUARD } else { 0 };
        ArenaSpace {
            base,
            cursor: base,
            capacity,
            used: 0,
            free: BTreeMap::new(),
        }
    }

    /// Restores a space whose allocations are all live up to `cursor`.
    pub fn with_cursor(tier: TierId, capacity: u64, cursor: u64) -> ArenaSpace {
        let mut s = ArenaSpace::new(tier, capacity);
        s.cursor = cursor.max(s.base);
        s.used = s.cursor - s.base;
        s
    }

    /// Rebuilds a space from a set of live `(offset, size)` regions.
    pub fn from_live(tier: TierId, capacity: u64, live: &BTreeMap<u64, u64>) -> ArenaSpace {
        let mut s = ArenaSpace::new(tier, capacity);
        let mut at = s.base;
        for (&off, &size) in live {
            if off > at {
                s.free.insert(at, off - at);
            }
            at = at.max(off + size);
            s.used += size;
        }
        s.cursor = at;
        s
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - self.used
    }

    pub fn can_fit(&self, size: u64) -> bool {
        self.free.values().any(|&len| len >= size) || self.cursor - self.base + size <= self.capacity
    }

    /// Offset of a new `size`-byte region, or `None` if nothing fits.
    pub fn alloc(&mut self, size: u64) -> Option<u64> {
        if let Some((&off, &len)) = self.free.iter().find(|(_, &len)| len >= size) {
            self.free.remove(&off);
            if len > size {
                self.free.insert(off + size, len - size);
            }
            self.used += size;
            return Some(off);
        }
        if self.cursor - self.base + size > self.capacity {
            return None;
        }
        let off = self.cursor;
        self.cursor += size;
        self.used += size;
        Some(off)
    }

    pub fn release(&mut self, offset: u64, size: u64) {
        debug_assert!(offset >= self.base && offset + size <= self.cursor);
        self.used -= size;
        let mut start = offset;
        let mut len = size;
        if let Some((&prev, &plen)) = self.free.range(..offset).next_back() {
            if prev + plen == offset {
                self.free.remove(&prev);
                start = prev;
                len += plen;
            }
        }
        if let Some(&nlen) = self.free.get(&(offset + size)) {
            self.free.remove(&(offset + size));
            len += nlen;
        }
        if start + len == self.cursor {
            self.cursor = start;
        } else {
            self.free.insert(start, len);
        }
    }

    /// Whether `[offset, offset + len)` lies inside the allocated extent.
    pub fn in_bounds(&self, offset: u64, len: u64) -> bool {
        offset >= self.base && offset.checked_add(len).is_some_and(|end| end <= self.cursor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_then_reuse() {
        let mut s = ArenaSpace::new(TierId::PMEM, 64);
        assert_eq!(s.alloc(8), Some(0));
        assert_eq!(s.alloc(8), Some(8));
        assert_eq!(s.alloc(16), Some(16));
        assert_eq!(s.used(), 32);
        s.release(0, 8);
        s.release(8, 8);
        assert_eq!(s.used(), 16);
        // coalesced into one 16-byte hole
        assert_eq!(s.alloc(16), Some(0));
        s.release(16, 16);
        assert_eq!(s.cursor(), 16);
    }

    #[test]
    fn fills_exactly() {
        let mut s = ArenaSpace::new(TierId::DISK, 10);
        assert_eq!(s.alloc(10), Some(0));
        assert!(!s.can_fit(1));
        assert_eq!(s.alloc(1), None);
    }

    #[test]
    fn tier_zero_guard() {
        let mut s = ArenaSpace::new(TierId::DRAM, 16);
        assert_eq!(s.alloc(16), Some(GUARD));
        assert_eq!(s.used(), 16);
    }

    #[test]
    fn rebuild_from_live() {
        let live = BTreeMap::from([(0, 4), (10, 6)]);
        let mut s = ArenaSpace::from_live(TierId::DISK, 100, &live);
        assert_eq!(s.used(), 10);
        assert_eq!(s.cursor(), 16);
        assert_eq!(s.alloc(6), Some(4));
    }
}
