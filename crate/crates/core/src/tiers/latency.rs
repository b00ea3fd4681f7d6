use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Injected access cost: `per_access_ns + bytes * ns_per_byte`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SyntheticLatency {
    pub per_access_ns: f64,
    pub read_ns_per_byte: f64,
    pub write_ns_per_byte: f64,
}

impl SyntheticLatency {
    pub fn per_access(ns: f64) -> SyntheticLatency {
        SyntheticLatency {
            per_access_ns: ns,
            ..Default::default()
        }
    }

    pub fn per_byte(read: f64, write: f64) -> SyntheticLatency {
        SyntheticLatency {
            per_access_ns: 0.0,
            read_ns_per_byte: read,
            write_ns_per_byte: write,
        }
    }

    pub fn cost_ns(&self, bytes: u64, write: bool) -> f64 {
        let per_byte = if write {
            self.write_ns_per_byte
        } else {
            self.read_ns_per_byte
        };
        self.per_access_ns + per_byte * bytes as f64
    }
}

/// Models the tier as a single device queue. Each access is scheduled one
/// service time after the previous one finishes and the caller spins until
/// its slot ends. An access that arrives more than one service time after its
/// slot would have ended finds the device idle and starts when it arrives.
/// Back-to-back accesses therefore take their summed cost, provided the
/// host's own per-access overhead stays below the cost.
#[derive(Debug)]
pub(crate) struct Throttle {
    latency: SyntheticLatency,
    epoch: Instant,
    /// End of the last reserved slot, in ns since `epoch`.
    next_free: AtomicU64,
}

impl Throttle {
    pub fn new(latency: SyntheticLatency) -> Throttle {
        Throttle {
            latency,
            epoch: Instant::now(),
            next_free: AtomicU64::new(0),
        }
    }

    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    pub fn charge(&self, bytes: u64, write: bool) {
        let cost = self.latency.cost_ns(bytes, write).round() as u64;
        if cost == 0 {
            return;
        }
        let mut done = self.next_free.fetch_add(cost, Ordering::AcqRel) + cost;
        let mut now = self.now_ns();
        if now > done + cost {
            done = now + cost;
            self.next_free.fetch_max(done, Ordering::AcqRel);
        }
        while now < done {
            std::hint::spin_loop();
            now = self.now_ns();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_to_back_cost_sums() {
        let t = Throttle::new(SyntheticLatency::per_access(2_000.0));
        // median of short batches, so a preempted batch does not count
        let mut per: Vec<f64> = (0..21)
            .map(|_| {
                let start = Instant::now();
                for _ in 0..25 {
                    t.charge(8, false);
                }
                start.elapsed().as_nanos() as f64 / 25.0
            })
            .collect();
        per.sort_by(f64::total_cmp);
        assert!((1_900.0..2_300.0).contains(&per[10]), "{per:?}");
    }

    #[test]
    fn idle_gap_is_not_credited() {
        let t = Throttle::new(SyntheticLatency::per_access(50_000.0));
        t.charge(0, false);
        std::thread::sleep(std::time::Duration::from_millis(2));
        let start = Instant::now();
        t.charge(0, false);
        assert!(start.elapsed().as_nanos() >= 50_000);
    }

    #[test]
    fn zero_cost_is_free() {
        let t = Throttle::new(SyntheticLatency::default());
        t.charge(1 << 20, true);
        assert_eq!(t.next_free.load(Ordering::Relaxed), 0);
    }
}
