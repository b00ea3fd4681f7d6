pub mod collections;
pub mod par;
pub mod placement;
pub mod profiling;
pub mod schema;
pub mod store;
pub mod tiers;
pub mod workloads;
