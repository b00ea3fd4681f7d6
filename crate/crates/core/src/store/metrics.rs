use std::fmt::Write;

use crate::tiers::MetricsSnapshot;

/// Point-in-time copy of the store counters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StoreMetrics {
    /// Bytes copied from any tier into caller memory by field reads.
    pub bytes_materialized: u64,
    pub tiers: Vec<(String, MetricsSnapshot)>,
}

impl StoreMetrics {
    /// (De)serialization events summed over all tiers.
    pub fn serde_events(&self) -> u64 {
        self.tiers.iter().map(|(_, m)| m.serde_events).sum()
    }

    pub fn tier(&self, name: &str) -> Option<&MetricsSnapshot> {
        self.tiers.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &StoreMetrics) -> StoreMetrics {
        let tiers = self
            .tiers
            .iter()
            .map(|(name, now)| {
                let before = earlier.tier(name).copied().unwrap_or_default();
                (
                    name.clone(),
                    MetricsSnapshot {
                        bytes_read: now.bytes_read - before.bytes_read,
                        bytes_written: now.bytes_written - before.bytes_written,
                        reads: now.reads - before.reads,
                        writes: now.writes - before.writes,
                        serde_events: now.serde_events - before.serde_events,
                    },
                )
            })
            .collect();
        StoreMetrics {
            bytes_materialized: self.bytes_materialized - earlier.bytes_materialized,
            tiers,
        }
    }

    /// `counter,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("counter,value\n");
        writeln!(out, "bytes_materialized,{}", self.bytes_materialized).unwrap();
        writeln!(out, "serde_events,{}", self.serde_events()).unwrap();
        for (name, m) in &self.tiers {
            writeln!(out, "{name}.bytes_read,{}", m.bytes_read).unwrap();
            writeln!(out, "{name}.bytes_written,{}", m.bytes_written).unwrap();
            writeln!(out, "{name}.reads,{}", m.reads).unwrap();
            writeln!(out, "{name}.writes,{}", m.writes).unwrap();
            writeln!(out, "{name}.serde_events,{}", m.serde_events).unwrap();
        }
        out
    }
}
