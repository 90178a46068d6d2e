//! Scalar abstraction shared by every scoring routine.
//!
//! Retrieval scores, normalized fusion scores and metric values are all
//! computed through [`Score`], so the whole pipeline can run in `f64`
//! (the default everywhere) or `f32` when memory matters more than the
//! last few digits.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable as a ranking score.
///
/// `Display` must produce a representation that `FromStr` parses back to
/// the identical value; both `f32` and `f64` satisfy this with Rust's
/// shortest round-trip formatting.
pub trait Score:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only for values the type cannot hold at all.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in score type")
    }

    /// Converts a count.
    fn from_count(count: usize) -> Self {
        Self::from_usize(count).expect("count representable in score type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Score for f32 {}
impl Score for f64 {}

/// Arithmetic mean of a non-empty slice; `None` when empty.
pub fn mean<S: Score>(values: &[S]) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(S::zero(), |acc, &v| acc + v);
    Some(sum / S::from_count(values.len()))
}
