//! Fixed-point synaptic permanence.
//!
//! Permanences live in [0, 1] and are stored as `u32` counts of 1e-9.
//! All plasticity arithmetic is done on these integers, which keeps
//! learning bit-exact across platforms and checkpoint round trips.

use serde::{Deserialize, Serialize};

/// Raw units per 1.0.
pub const SCALE: u32 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Permanence(u32);

impl Permanence {
    pub const ZERO: Permanence = Permanence(0);
    pub const ONE: Permanence = Permanence(SCALE);
    /// Connection threshold (0.5).
    pub const THRESHOLD: Permanence = Permanence(SCALE / 2);
    /// Permanence of a newly grown distal synapse (0.51), connected at birth.
    pub const NASCENT: Permanence = Permanence(510_000_000);

    pub fn from_raw(raw: u32) -> Self {
        Permanence(raw.min(SCALE))
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    /// Nearest representable value, clamped to [0, 1].
    pub fn from_f64(v: f64) -> Self {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Permanence((v * SCALE as f64).round() as u32)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_connected(self) -> bool {
        self >= Self::THRESHOLD
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Add a signed delta, clamping to [0, 1].
    pub fn apply(self, delta: Delta) -> Self {
        let v = self.0 as i64 + delta.0;
        Permanence(v.clamp(0, SCALE as i64) as u32)
    }
}

/// Signed permanence change in raw units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta(pub i64);

impl Delta {
    pub fn from_f64(v: f64) -> Self {
        Delta((v * SCALE as f64).round() as i64)
    }

    pub fn neg(self) -> Self {
        Delta(-self.0)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constants() {
        assert_eq!(Permanence::THRESHOLD.to_f64(), 0.5);
        assert_eq!(Permanence::NASCENT.to_f64(), 0.51);
        assert!(Permanence::NASCENT.is_connected());
        assert!(!Permanence::from_f64(0.499_999_999).is_connected());
    }

    #[test]
    fn small_rates_are_representable() {
        // base distal rate and a 10% depression fraction of it
        assert_eq!(Delta::from_f64(1e-5).0, 10_000);
        assert_eq!(Delta::from_f64(1e-6).0, 1_000);
    }

    #[test]
    fn clamps() {
        assert_eq!(Permanence::from_f64(0.95).apply(Delta::from_f64(0.1)), Permanence::ONE);
        assert_eq!(Permanence::from_f64(0.005).apply(Delta::from_f64(-0.01)), Permanence::ZERO);
    }

    proptest! {
        #[test]
        fn apply_stays_in_range(raw in 0u32..=SCALE, d in -2_000_000_000i64..2_000_000_000) {
            let p = Permanence::from_raw(raw).apply(Delta(d));
            prop_assert!(p.raw() <= SCALE);
        }

        #[test]
        fn f64_round_trip(raw in 0u32..=SCALE) {
            let p = Permanence::from_raw(raw);
            prop_assert_eq!(Permanence::from_f64(p.to_f64()), p);
        }
    }
}
