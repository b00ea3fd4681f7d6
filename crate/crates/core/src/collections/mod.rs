//! Durable collections whose headers and element records live on store tiers.

mod array;
mod map;

use thiserror::Error;

use crate::store::StoreError;
use crate::tiers::{Handle, TierError};

pub use array::DurableArray;
pub use map::{DurableMap, INITIAL_BUCKETS};

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: u64, len: u64 },
    #[error("corrupt collection header at {handle:?}: {message}")]
    CorruptHeader { handle: Handle, message: String },
}

impl From<TierError> for CollectionError {
    fn from(e: TierError) -> Self {
        CollectionError::Store(e.into())
    }
}

impl CollectionError {
    pub fn is_capacity(&self) -> bool {
        matches!(self, CollectionError::Store(e) if e.is_capacity())
    }
}

pub type Result<T, E = CollectionError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
