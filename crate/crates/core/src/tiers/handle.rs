use std::fmt;

/// Number of low bits of a [`Handle`] that carry the arena offset.
pub const OFFSET_BITS: u32 = 56;

/// Largest offset (exclusive) a handle can address.
pub const MAX_OFFSET: u64 = 1 << OFFSET_BITS;

/// Identifier of one storage tier. The three built-in tiers have fixed ids;
/// additional tiers get ids from 3 upward when a store is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TierId(pub u8);

impl TierId {
    pub const DRAM: TierId = TierId(0);
    pub const PMEM: TierId = TierId(1);
    pub const DISK: TierId = TierId(2);

    /// Resolves one of the built-in tier names.
    pub fn from_name(name: &str) -> Option<TierId> {
        match name {
            "dram" => Some(TierId::DRAM),
            "pmem" => Some(TierId::PMEM),
            "disk" => Some(TierId::DISK),
            _ => None,
        }
    }

    /// Name of a built-in tier, `None` for extension ids.
    pub fn builtin_name(self) -> Option<&'static str> {
        match self.0 {
            0 => Some("dram"),
            1 => Some("pmem"),
            2 => Some("disk"),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.builtin_name() {
            Some(name) => f.write_str(name),
            None => write!(f, "tier{}", self.0),
        }
    }
}

/// Packed 64-bit reference: the top 8 bits name the tier, the low 56 bits are
/// a byte offset into that tier's arena. The all-zero value is null.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Handle(u64);

impl Handle {
    pub const NULL: Handle = Handle(0);

    /// Packs a tier id and offset. Panics if `offset` does not fit in 56 bits.
    pub fn new(tier: TierId, offset: u64) -> Handle {
        assert!(offset < MAX_OFFSET, "offset {offset:#x} exceeds handle range");
        Handle(((tier.0 as u64) << OFFSET_BITS) | offset)
    }

    pub fn from_raw(raw: u64) -> Handle {
        Handle(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn tier(self) -> TierId {
        TierId((self.0 >> OFFSET_BITS) as u8)
    }

    pub fn offset(self) -> u64 {
        self.0 & (MAX_OFFSET - 1)
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    /// Handle `delta` bytes further into the same tier.
    pub fn add(self, delta: u64) -> Handle {
        Handle::new(self.tier(), self.offset() + delta)
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_null() {
            f.write_str("Handle(null)")
        } else {
            write!(f, "Handle({}:{:#x})", self.tier(), self.offset())
        }
    }
}
