//! Process-wide counters of FEM assemblies and factorizations.
//!
//! The online coupling phase must never assemble or factorize anything; run
//! reports include a snapshot of these counters taken around the online
//! solve as evidence.

use std::sync::atomic::{AtomicU64, Ordering};

static ASSEMBLIES: AtomicU64 = AtomicU64::new(0);
static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub assemblies: u64,
    pub factorizations: u64,
}

impl CounterSnapshot {
    /// Work recorded since `earlier`.
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            assemblies: self.assemblies - earlier.assemblies,
            factorizations: self.factorizations - earlier.factorizations,
        }
    }

    pub fn total(&self) -> u64 {
        self.assemblies + self.factorizations
    }
}

pub fn record_assembly() {
    ASSEMBLIES.fetch_add(1, Ordering::Relaxed);
}

pub fn record_factorization() {
    FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
}

pub fn snapshot() -> CounterSnapshot {
    CounterSnapshot {
        assemblies: ASSEMBLIES.load(Ordering::Relaxed),
        factorizations: FACTORIZATIONS.load(Ordering::Relaxed),
    }
}
