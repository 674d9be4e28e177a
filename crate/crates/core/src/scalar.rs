//! Scalar abstraction shared by every numerical routine in the crate.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar type the solvers are generic over.
///
/// Implemented for `f32` and `f64`. Every tolerance in the crate is written as
/// an `f64` literal and converted with [`lit`], so `f32` instantiations work but
/// need correspondingly looser tolerances.
pub trait Real: RealField + Copy + ToPrimitive + fmt::Display + fmt::LowerExp + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Lossy conversion back to `f64`, used for logging and reports.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// A cost that is either finite or `+∞` (destabilizing policy).
///
/// Ordering puts `Infinite` after every finite value, which is the convention
/// used for medians in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Cost<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    /// `f64` view with `Infinite` mapped to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        match *self {
            Cost::Finite(v) => to_f64(v),
            Cost::Infinite => f64::INFINITY,
        }
    }

    /// Total order with `Infinite` last. NaN finite values compare equal.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
            (Cost::Finite(_), Cost::Infinite) => Ordering::Less,
            (Cost::Infinite, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infinite, Cost::Infinite) => Ordering::Equal,
        }
    }

    /// Ratio `self / other`, infinite when the numerator is infinite.
    pub fn ratio(&self, denom: T) -> Cost<T> {
        match *self {
            Cost::Finite(v) => Cost::Finite(v / denom),
            Cost::Infinite => Cost::Infinite,
        }
    }
}

impl<T: Real> fmt::Display for Cost<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

impl From<f64> for Cost<f64> {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Cost::Finite(v)
        } else {
            Cost::Infinite
        }
    }
}

/// Median of a list of costs with `Infinite` sorted last. `None` when empty.
///
/// Even-length lists average the two middle entries; if either is infinite
/// the median is infinite.
pub fn median_cost<T: Real>(values: &[Cost<T>]) -> Option<Cost<T>> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        return Some(v[n / 2]);
    }
    match (v[n / 2 - 1], v[n / 2]) {
        (Cost::Finite(a), Cost::Finite(b)) => Some(Cost::Finite((a + b) * lit(0.5))),
        _ => Some(Cost::Infinite),
    }
}
