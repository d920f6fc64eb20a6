//! Slow automatic gain control and dual-rate binary coding of band energies.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::rng::RngStream;
use crate::sdr::Sdr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MocrConfig {
    /// Relative threshold step per update at 100% activity error.
    pub k_step: f64,
    pub act_tup: f64,
    pub act_tdown: f64,
    /// EMA coefficient of emitted activity (one update per millisecond).
    pub alpha_act: f64,
}

impl Default for MocrConfig {
    fn default() -> Self {
        MocrConfig { k_step: 4e-5, act_tup: 14.0, act_tdown: 13.0, alpha_act: 1.0 / 25_000.0 }
    }
}

impl MocrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.act_tdown > 0.0 && self.act_tdown < self.act_tup) {
            return Err(HerError::Config("need 0 < act_tdown < act_tup".into()));
        }
        if !(self.k_step > 0.0 && self.alpha_act > 0.0 && self.alpha_act <= 1.0) {
            return Err(HerError::Config("k_step and alpha_act must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MocrState {
    pub thr: f64,
    pub act_ema: f64,
}

impl MocrState {
    pub fn new(thr: f64, act_ema: f64) -> Result<Self> {
        if !(thr > 0.0) || !(act_ema >= 0.0) {
            return Err(HerError::invalid("MOCR needs thr > 0 and act_ema >= 0"));
        }
        Ok(MocrState { thr, act_ema })
    }
}

/// Folds the emitted activity into the EMA and nudges the threshold toward
/// the target band: up when too active, down when too quiet.
pub fn mocr_update(state: &mut MocrState, cfg: &MocrConfig, act_now: f64) -> Result<f64> {
    if !(act_now >= 0.0) {
        return Err(HerError::invalid("activity must be non-negative"));
    }
    state.act_ema = cfg.alpha_act * act_now + (1.0 - cfg.alpha_act) * state.act_ema;
    if state.act_ema > cfg.act_tup {
        state.thr *= 1.0 + (state.act_ema - cfg.act_tup) / cfg.act_tup * cfg.k_step;
    } else if state.act_ema < cfg.act_tdown {
        state.thr *= 1.0 - (cfg.act_tdown - state.act_ema) / cfg.act_tdown * cfg.k_step;
    }
    Ok(state.thr)
}

/// Codewords of one band: '1' sets `ones`, '0' sets the nested `zeros`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrCode {
    pub ones: Sdr,
    pub zeros: Sdr,
}

pub const DR_WIDTH: usize = 121;
pub const DR_ONES: usize = 40;
pub const DR_ZEROS: usize = 10;

impl DrCode {
    pub fn generate(rng: &mut RngStream) -> Result<Self> {
        let mut ones = rng.sample_indices(DR_WIDTH, DR_ONES);
        rng.shuffle(&mut ones);
        let zeros = ones[..DR_ZEROS].to_vec();
        Ok(DrCode { ones: Sdr::new(DR_WIDTH, ones)?, zeros: Sdr::new(DR_WIDTH, zeros)? })
    }
}

/// Binarizes each band against its threshold (energy >= thr is '1'), emits
/// the codeword and feeds its size back into that band's gain control.
pub fn binarize_and_encode(energies: &[f64], states: &mut [MocrState], codes: &[DrCode], cfg: &MocrConfig) -> Result<Vec<Sdr>> {
    if energies.len() != states.len() || energies.len() != codes.len() {
        return Err(HerError::WidthMismatch { expected: states.len(), got: energies.len() });
    }
    let mut out = Vec::with_capacity(energies.len());
    for ((&e, st), code) in energies.iter().zip(states.iter_mut()).zip(codes) {
        let word = if e >= st.thr { &code.ones } else { &code.zeros };
        mocr_update(st, cfg, word.len() as f64)?;
        out.push(word.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn over_target_raises_threshold() {
        let cfg = MocrConfig::default();
        // act_ema is exactly 1.1 * act_tup after folding in a sample equal to it
        let mut st = MocrState::new(0.5, 15.4).unwrap();
        mocr_update(&mut st, &cfg, 15.4).unwrap();
        assert!((st.thr - 0.5 * (1.0 + 0.1 * 4e-5)).abs() < 1e-15);
        assert!((st.thr - 0.500002).abs() < 1e-12);
    }

    #[test]
    fn band_holds_threshold() {
        let cfg = MocrConfig::default();
        let mut st = MocrState::new(0.7, 13.5).unwrap();
        mocr_update(&mut st, &cfg, 13.5).unwrap();
        assert_eq!(st.thr, 0.7);
    }

    #[test]
    fn under_target_lowers_threshold() {
        let cfg = MocrConfig::default();
        let mut st = MocrState::new(1.0, 11.7).unwrap();
        mocr_update(&mut st, &cfg, 11.7).unwrap();
        assert!((st.thr - (1.0 - 0.1 * 4e-5)).abs() < 1e-15);
        assert!(mocr_update(&mut st, &cfg, -1.0).is_err());
        assert!(MocrState::new(0.0, 1.0).is_err());
    }

    #[test]
    fn codewords_nested_and_sized() {
        let mut rng = RngStream::derive(1, "dr");
        for _ in 0..20 {
            let c = DrCode::generate(&mut rng).unwrap();
            assert_eq!((c.ones.len(), c.zeros.len()), (40, 10));
            assert_eq!(c.zeros.overlap(&c.ones).unwrap(), 10);
        }
    }

    #[test]
    fn encoding_boundary_and_activity() {
        let cfg = MocrConfig::default();
        let mut rng = RngStream::derive(2, "dr");
        let codes = vec![DrCode::generate(&mut rng).unwrap(), DrCode::generate(&mut rng).unwrap()];
        let mut st = vec![MocrState::new(1.0, 13.5).unwrap(); 2];
        let out = binarize_and_encode(&[1.0, 0.99], &mut st, &codes, &cfg).unwrap();
        assert_eq!(out[0], codes[0].ones);
        assert_eq!(out[1], codes[1].zeros);
        assert!(binarize_and_encode(&[1.0], &mut st, &codes, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        // Stationary narrow-band input: the loop settles inside the band and
        // the threshold stops moving.
        #[test]
        fn settles_into_band(seed in 0u64..1000, p0 in 0.15f64..0.35) {
            let cfg = MocrConfig::default();
            let mut rng = RngStream::derive(seed, "energy");
            let thr0 = 1.1 - 0.2 * p0;
            let mut st = MocrState::new(thr0, 10.0 + 30.0 * p0).unwrap();
            let mut last_rel = f64::MAX;
            for _ in 0..600_000 {
                let e = 0.9 + 0.2 * rng.unit();
                let old = st.thr;
                let act = if e >= st.thr { 40.0 } else { 10.0 };
                mocr_update(&mut st, &cfg, act).unwrap();
                last_rel = (st.thr - old).abs() / old;
            }
            prop_assert!(st.act_ema >= cfg.act_tdown && st.act_ema <= cfg.act_tup, "ema {}", st.act_ema);
            prop_assert!(last_rel < cfg.k_step);
        }
    }
}
