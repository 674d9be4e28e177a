//! Opt-in post-hoc verification of every optimal SDP solve.
//!
//! When enabled, [`solve`](super::solve) re-checks each `Optimal` solution
//! with [`verify`](super::verify) and folds the residuals into process-wide
//! maxima. Intended for test suites that must vouch for all solves made
//! indirectly through synthesis routines.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};

use super::Verification;
use crate::scalar::{to_f64, Real};

static ENABLED: AtomicBool = AtomicBool::new(false);
static SOLVES: AtomicUsize = AtomicUsize::new(0);
static WORST_PRIMAL: AtomicU64 = AtomicU64::new(0);
static WORST_DUAL: AtomicU64 = AtomicU64::new(0);
static WORST_GAP: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSummary {
    /// Optimal solves re-verified since the last reset.
    pub solves: usize,
    pub worst_primal_residual: f64,
    pub worst_dual_residual: f64,
    pub worst_gap: f64,
}

pub fn enable() {
    ENABLED.store(true, Ordering::SeqCst);
}

pub fn disable() {
    ENABLED.store(false, Ordering::SeqCst);
}

pub fn is_enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

pub fn reset() {
    SOLVES.store(0, Ordering::SeqCst);
    for a in [&WORST_PRIMAL, &WORST_DUAL, &WORST_GAP] {
        a.store(0, Ordering::SeqCst);
    }
}

pub fn summary() -> AuditSummary {
    let get = |a: &AtomicU64| f64::from_bits(a.load(Ordering::SeqCst));
    AuditSummary {
        solves: SOLVES.load(Ordering::SeqCst),
        worst_primal_residual: get(&WORST_PRIMAL),
        worst_dual_residual: get(&WORST_DUAL),
        worst_gap: get(&WORST_GAP),
    }
}

// Bit patterns of nonnegative floats order like the floats themselves; NaN
// maps to +inf so it cannot hide.
fn fold_max(slot: &AtomicU64, v: f64) {
    let v = if v.is_nan() { f64::INFINITY } else { v.max(0.0) };
    slot.fetch_max(v.to_bits(), Ordering::SeqCst);
}

pub(crate) fn record<T: Real>(v: &Verification<T>) {
    SOLVES.fetch_add(1, Ordering::SeqCst);
    fold_max(&WORST_PRIMAL, to_f64(v.primal_residual));
    fold_max(&WORST_DUAL, to_f64(v.dual_residual));
    fold_max(&WORST_GAP, to_f64(v.gap));
}
