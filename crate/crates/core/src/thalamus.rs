//! Corticothalamic loop and input gating.
//!
//! A column whose L5 prediction of its next symbol agrees with what every
//! successor's L6a expects may forward that symbol early and mute its own
//! L4. Attention generators decide where forwarding is allowed. The MGN
//! stage drops stale or unexpected input bits before the first rung.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::hippocampus::{FilteringSlice, SliceEvent};
use crate::sdr::{PredictionMultiset, Sdr, TaggedSdr};
use crate::sequence_memory::KnowledgeState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLimits {
    pub min_bits: usize,
    pub max_bits: usize,
}

impl MatchLimits {
    pub fn exact(bits: usize) -> Self {
        MatchLimits { min_bits: bits, max_bits: bits }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_bits == 0 || self.min_bits > self.max_bits {
            return Err(HerError::Config(format!("bad match limits {}..{}", self.min_bits, self.max_bits)));
        }
        Ok(())
    }

    pub fn admits(&self, n: usize) -> bool {
        (self.min_bits..=self.max_bits).contains(&n)
    }
}

/// L5's prediction intersected with every successor's expectation; kept
/// only when its size is within limits.
pub fn ctloop_match(l5_pred: &Sdr, successors: &[&PredictionMultiset], limits: MatchLimits) -> Result<Option<Sdr>> {
    if successors.is_empty() {
        return Ok(None);
    }
    let mut m = l5_pred.clone();
    for s in successors {
        if s.width() != l5_pred.width() {
            return Err(HerError::WidthMismatch { expected: l5_pred.width(), got: s.width() });
        }
        m = m.intersection(&s.support())?;
    }
    Ok(limits.admits(m.len()).then_some(m))
}

/// A column may forward when attention is on and, below the rung under the
/// top, every successor is itself forwarding.
pub fn forwarding_eligibility(successors_forwarding: &[bool], attention_on: bool) -> bool {
    attention_on && successors_forwarding.iter().all(|&f| f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Off,
    /// Attention follows the generator slice: on while it is deallocated.
    Generated,
    Forced,
}

/// Filtering slice over a top-rung column's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionGenerator {
    slice: FilteringSlice,
    mode: AttentionMode,
}

impl AttentionGenerator {
    pub fn new(slice: FilteringSlice, mode: AttentionMode) -> Self {
        AttentionGenerator { slice, mode }
    }

    pub fn slice(&self) -> &FilteringSlice {
        &self.slice
    }

    pub fn slice_mut(&mut self) -> &mut FilteringSlice {
        &mut self.slice
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: AttentionMode) {
        self.mode = mode;
    }

    pub fn attention_on(&self) -> bool {
        match self.mode {
            AttentionMode::Off => false,
            AttentionMode::Forced => true,
            AttentionMode::Generated => !self.slice.is_allocated(),
        }
    }

    /// Keeps the slice allocated until both it and the top column are familiar.
    pub fn update(&mut self, top_l6a: KnowledgeState) -> Option<SliceEvent> {
        let want = !top_l6a.is_known() || !self.slice.state().is_known();
        self.slice.set_allocated(want)
    }

    /// Steps on the top column's symbol; forgets while deallocated.
    pub fn observe(&mut self, symbol: Option<&Sdr>) -> Result<()> {
        if self.slice.is_allocated() {
            self.slice.step(&[symbol])?;
        } else {
            self.slice.decay();
        }
        Ok(())
    }
}

/// Forwarding bookkeeping for one column.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardState {
    /// Forwarded symbols not yet overtaken by real boundaries.
    pub credit: u32,
    last: Option<Sdr>,
    repeats: u32,
    /// A successor closed a sequence on forwarded input; no further
    /// forwards until the real input catches up.
    #[serde(default)]
    halted: bool,
    pub forwarded_total: u64,
}

impl ForwardState {
    pub fn is_forwarding(&self) -> bool {
        self.credit > 0
    }

    /// Records a forward unless it would exceed `limit` identical symbols in
    /// a row.
    pub fn try_forward(&mut self, s: &Sdr, limit: u32) -> bool {
        if self.halted {
            return false;
        }
        let same = self.last.as_ref() == Some(s);
        if same && self.repeats >= limit {
            return false;
        }
        self.repeats = if same { self.repeats + 1 } else { 1 };
        self.last = Some(s.clone());
        self.credit += 1;
        self.forwarded_total += 1;
        true
    }

    /// A real boundary has caught up with one forwarded symbol. Returns true
    /// when nothing is outstanding any more.
    pub fn consume(&mut self) -> bool {
        self.credit = self.credit.saturating_sub(1);
        if self.credit == 0 {
            self.reset();
            return true;
        }
        false
    }

    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn reset(&mut self) {
        self.halted = false;
        self.credit = 0;
        self.last = None;
        self.repeats = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgnConfig {
    /// Identical consecutive values allowed through before suppression.
    pub t_rep: usize,
    /// Keep only predicted bits when no slice is allocated above.
    pub prediction_filter: bool,
}

impl Default for MgnConfig {
    fn default() -> Self {
        MgnConfig { t_rep: 2, prediction_filter: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MgnState {
    last: Option<Sdr>,
    repeats: usize,
    pub passed: u64,
    pub suppressed: u64,
}

impl MgnState {
    pub fn repeats(&self) -> usize {
        self.repeats
    }
}

pub fn mgn_filter(
    state: &mut MgnState,
    cfg: &MgnConfig,
    flow: &TaggedSdr,
    prediction: Option<&PredictionMultiset>,
    ca3_above_present: bool,
) -> Result<Option<TaggedSdr>> {
    if state.last.as_ref() == Some(&flow.sdr) {
        state.repeats += 1;
    } else {
        state.repeats = 1;
        state.last = Some(flow.sdr.clone());
    }
    if state.repeats > cfg.t_rep {
        state.suppressed += 1;
        return Ok(None);
    }
    let mut out = flow.clone();
    if cfg.prediction_filter && !ca3_above_present {
        if let Some(p) = prediction.filter(|p| !p.is_empty()) {
            out.sdr = flow.sdr.intersection(&p.support())?;
        }
    }
    if out.sdr.is_empty() {
        state.suppressed += 1;
        return Ok(None);
    }
    state.passed += 1;
    Ok(Some(out))
}
