//! Novelty tracking: anomaly score, its moving average, the Known/Unknown
//! hysteresis and the learning probability derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::sdr::Sdr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KnowledgeState {
    Known,
    Unknown,
}

impl KnowledgeState {
    pub fn is_known(self) -> bool {
        self == KnowledgeState::Known
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HysteresisParams {
    pub alpha: f64,
    pub up: f64,
    pub down: f64,
    /// Logistic steepness before modulation.
    pub k_steepness: f64,
    /// Base distal permanence increment.
    pub ltp_delta_base: f64,
    /// Depression applied to non-reinforced synapses, as a fraction of the increment.
    pub ltd_ratio: f64,
}

impl HysteresisParams {
    pub fn new(alpha: f64, down: f64, up: f64, ltd_ratio: f64) -> Self {
        HysteresisParams { alpha, up, down, k_steepness: 1000.0, ltp_delta_base: 1e-5, ltd_ratio }
    }

    /// Fast-tracking boundary detector.
    pub fn l6b() -> Self {
        Self::new(0.9, 0.1, 0.5, 0.7)
    }

    pub fn l23() -> Self {
        Self::new(0.1, 0.05, 0.4, 0.1)
    }

    pub fn l6a() -> Self {
        Self::new(0.1, 0.05, 0.4, 0.1)
    }

    pub fn l5() -> Self {
        Self::new(0.5, 0.05, 0.5, 0.5)
    }

    /// Hippocampal filter: slow average, learning rate 100 times the cortical one.
    pub fn ca3() -> Self {
        HysteresisParams { ltp_delta_base: 1e-3, ..Self::new(0.01, 0.05, 0.3, 0.1) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HerError::invalid(format!("alpha {} outside (0,1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.down) || !(0.0..=1.0).contains(&self.up) || self.down >= self.up {
            return Err(HerError::invalid(format!("need 0 <= down < up <= 1, got down={} up={}", self.down, self.up)));
        }
        if !(0.0..=1.0).contains(&self.ltd_ratio) {
            return Err(HerError::invalid(format!("ltd_ratio {} outside [0,1]", self.ltd_ratio)));
        }
        if !(self.k_steepness > 0.0) || !(self.ltp_delta_base >= 0.0) {
            return Err(HerError::invalid("k_steepness must be > 0 and ltp_delta_base >= 0"));
        }
        Ok(())
    }
}

/// Fraction of active bits that were not predicted. High means novel.
pub fn anomaly_score(active: &Sdr, predicted_prev: &Sdr) -> Result<f64> {
    let hit = active.overlap(predicted_prev)?;
    if active.is_empty() {
        return Ok(0.0);
    }
    Ok(1.0 - hit as f64 / active.len() as f64)
}

pub fn ema_update(prev: f64, sample: f64, alpha: f64) -> f64 {
    alpha * sample + (1.0 - alpha) * prev
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Steepness after modulation: K = (1 - m) k.
pub fn effective_steepness(k: f64, m: f64) -> f64 {
    (1.0 - m) * k
}

/// Permanence increment under modulation: d = d0 (1 + 100 m).
pub fn learning_rate(d0: f64, m: f64) -> f64 {
    d0 * (1.0 + m * 100.0)
}

pub fn learning_probability(state: KnowledgeState, ema_as: f64, params: &HysteresisParams, m: f64) -> f64 {
    let k = effective_steepness(params.k_steepness, m);
    let centre = match state {
        KnowledgeState::Known => params.up,
        KnowledgeState::Unknown => params.down,
    };
    logistic(k * (ema_as - centre))
}

/// Returns the new state and whether a Known to Unknown transition happened.
pub fn hysteresis_step(state: KnowledgeState, ema_as: f64, params: &HysteresisParams) -> (KnowledgeState, bool) {
    match state {
        KnowledgeState::Known if ema_as >= params.up => (KnowledgeState::Unknown, true),
        KnowledgeState::Unknown if ema_as <= params.down => (KnowledgeState::Known, false),
        s => (s, false),
    }
}

/// Long-term modulation driven by a memory's novelty average:
/// logistic(k (ema - down)) while Unknown, logistic(k (ema - up)) while Known.
pub fn modulation(state: KnowledgeState, ema_as: f64, params: &HysteresisParams) -> f64 {
    let centre = match state {
        KnowledgeState::Known => params.up,
        KnowledgeState::Unknown => params.down,
    };
    logistic(params.k_steepness * (ema_as - centre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sdr(idx: &[usize]) -> Sdr {
        Sdr::new(121, idx.iter().copied()).unwrap()
    }

    #[test]
    fn anomaly_examples() {
        let a = sdr(&[1, 2, 3, 4]);
        assert_eq!(anomaly_score(&a, &sdr(&[1, 2, 3, 4, 50])).unwrap(), 0.0);
        assert_eq!(anomaly_score(&a, &sdr(&[10, 11])).unwrap(), 1.0);
        assert_eq!(anomaly_score(&a, &sdr(&[1, 9])).unwrap(), 0.75);
        assert_eq!(anomaly_score(&sdr(&[]), &sdr(&[1])).unwrap(), 0.0);
        assert!(anomaly_score(&a, &Sdr::empty(8).unwrap()).is_err());
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_update(0.3, 0.8, 1.0), 0.8);
        assert_eq!(ema_update(0.0, 1.0, 0.1), 0.1);
        let mut e = 0.0;
        for _ in 0..10 {
            e = ema_update(e, 1.0, 0.1);
        }
        // closed form of the recurrence
        assert!((e - (1.0 - 0.9f64.powi(10))).abs() < 1e-12);
        assert!((e - 0.6513).abs() < 1e-4);
    }

    #[test]
    fn probability_examples() {
        let p = HysteresisParams::l6b();
        assert!((learning_probability(KnowledgeState::Known, p.up, &p, 0.0) - 0.5).abs() < 1e-12);
        let v = learning_probability(KnowledgeState::Known, p.up - 0.01, &p, 0.0);
        assert!((v - 1.0 / (1.0 + 10f64.exp())).abs() < 1e-12);
        assert!((v - 4.54e-5).abs() < 1e-7);
        let v = learning_probability(KnowledgeState::Unknown, p.down + 0.01, &p, 0.0);
        assert!((v - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn hysteresis_examples() {
        let p = HysteresisParams::l6b();
        assert_eq!(hysteresis_step(KnowledgeState::Known, 0.6, &p), (KnowledgeState::Unknown, true));
        let q = HysteresisParams::l23();
        assert_eq!(hysteresis_step(KnowledgeState::Unknown, 0.04, &q), (KnowledgeState::Known, false));
        assert_eq!(hysteresis_step(KnowledgeState::Known, 0.3, &p), (KnowledgeState::Known, false));
        assert_eq!(hysteresis_step(KnowledgeState::Unknown, 0.9, &p), (KnowledgeState::Unknown, false));
    }

    #[test]
    fn modulation_scales_rate_and_steepness() {
        assert_eq!(effective_steepness(1000.0, 0.0), 1000.0);
        assert_eq!(effective_steepness(1000.0, 0.5), 500.0);
        assert_eq!(effective_steepness(1000.0, 1.0), 0.0);
        assert!((learning_rate(1e-5, 1.0) / learning_rate(1e-5, 0.0) - 101.0).abs() < 1e-12);
    }

    #[test]
    fn presets_validate() {
        for p in [HysteresisParams::l6b(), HysteresisParams::l23(), HysteresisParams::l5(), HysteresisParams::ca3()] {
            p.validate().unwrap();
        }
        assert!(HysteresisParams::new(0.1, 0.5, 0.4, 0.1).validate().is_err());
        assert!(HysteresisParams::new(0.0, 0.1, 0.4, 0.1).validate().is_err());
    }

    proptest! {
        #[test]
        fn boundary_only_on_known_to_unknown(
            known in any::<bool>(), ema in 0.0f64..=1.0, down in 0.0f64..0.5, gap in 0.01f64..0.5
        ) {
            let p = HysteresisParams::new(0.5, down, down + gap, 0.1);
            let s = if known { KnowledgeState::Known } else { KnowledgeState::Unknown };
            let (n, b) = hysteresis_step(s, ema, &p);
            if b {
                prop_assert!(s == KnowledgeState::Known && n == KnowledgeState::Unknown);
            }
            if s == KnowledgeState::Known && n == KnowledgeState::Unknown {
                prop_assert!(b);
            }
        }

        #[test]
        fn probability_in_unit_interval(ema in 0.0f64..=1.0, m in 0.0f64..=1.0, known in any::<bool>()) {
            let p = HysteresisParams::l23();
            let s = if known { KnowledgeState::Known } else { KnowledgeState::Unknown };
            let v = learning_probability(s, ema, &p, m);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn ema_stays_in_unit_interval(prev in 0.0f64..=1.0, x in 0.0f64..=1.0, a in 0.001f64..=1.0) {
            let e = ema_update(prev, x, a);
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
