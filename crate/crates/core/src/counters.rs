//! Process-wide operation counters used to audit the offline/online split.
//!
//! The online stage must not trigger spectral solves or fine-grid assembly;
//! tests take a [`Snapshot`] before and after a phase and diff the counts.

use std::sync::atomic::{AtomicU64, Ordering};

static EIGENSOLVES: AtomicU64 = AtomicU64::new(0);
static FINE_ASSEMBLIES: AtomicU64 = AtomicU64::new(0);
static FINE_SOLVES: AtomicU64 = AtomicU64::new(0);
static LOCAL_SOLVES: AtomicU64 = AtomicU64::new(0);

pub(crate) fn record_eigensolve() {
    EIGENSOLVES.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn record_fine_assembly() {
    FINE_ASSEMBLIES.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn record_fine_solve() {
    FINE_SOLVES.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn record_local_solve() {
    LOCAL_SOLVES.fetch_add(1, Ordering::Relaxed);
}

/// Point-in-time view of all counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub eigensolves: u64,
    pub fine_assemblies: u64,
    pub fine_solves: u64,
    pub local_solves: u64,
}

impl Snapshot {
    /// Counts accumulated since an earlier snapshot.
    pub fn delta_since(&self, earlier: &Snapshot) -> Snapshot {
        Snapshot {
            eigensolves: self.eigensolves - earlier.eigensolves,
            fine_assemblies: self.fine_assemblies - earlier.fine_assemblies,
            fine_solves: self.fine_solves - earlier.fine_solves,
            local_solves: self.local_solves - earlier.local_solves,
        }
    }
}

/// Current counter values.
pub fn snapshot() -> Snapshot {
    Snapshot {
        eigensolves: EIGENSOLVES.load(Ordering::Relaxed),
        fine_assemblies: FINE_ASSEMBLIES.load(Ordering::Relaxed),
        fine_solves: FINE_SOLVES.load(Ordering::Relaxed),
        local_solves: LOCAL_SOLVES.load(Ordering::Relaxed),
    }
}
