//! Recurrent recall: drive memories with their own predictions, no learning.

use crate::error::{HerError, Result};
use crate::sdr::{PredictionMultiset, Sdr};

use super::{BranchId, SequenceMemory};

/// Private activation context for replaying a memory without touching its
/// own tracking state.
#[derive(Clone, Debug)]
pub struct RecallCursor {
    active: Vec<bool>,
    active_list: Vec<BranchId>,
    predictive: Vec<bool>,
    predictive_list: Vec<BranchId>,
}

impl RecallCursor {
    pub fn new(sm: &SequenceMemory) -> Self {
        let n = sm.width() * sm.branches_per_cell();
        RecallCursor { active: vec![false; n], active_list: Vec::new(), predictive: vec![false; n], predictive_list: Vec::new() }
    }

    /// Presents `input` and returns the prediction for the step after it.
    pub fn feed(&mut self, sm: &SequenceMemory, input: &Sdr) -> Result<PredictionMultiset> {
        if input.width() != sm.width() {
            return Err(HerError::WidthMismatch { expected: sm.width(), got: input.width() });
        }
        let act = sm.activate(input, &self.predictive);
        for &b in &self.active_list {
            self.active[b as usize] = false;
        }
        for &b in &act.active {
            self.active[b as usize] = true;
        }
        self.active_list = act.active;
        for &b in &self.predictive_list {
            self.predictive[b as usize] = false;
        }
        let (branches, _) = sm.compute_prediction(&self.active, !self.active_list.is_empty());
        for &b in &branches {
            self.predictive[b as usize] = true;
        }
        let out = sm.multiset_of(&branches);
        self.predictive_list = branches;
        Ok(out)
    }
}

/// Replays `replicas` from `seed`, feeding the voted prediction back as the
/// next input. A bit survives the vote when at least `agreement_threshold`
/// replicas predict it. Stops when the prediction repeats its input, has
/// fewer than `min_active` bits, more than `width_cap` bits, or after
/// `max_len` items.
pub fn recall_burst(
    replicas: &[&SequenceMemory],
    seed: &Sdr,
    agreement_threshold: usize,
    min_active: usize,
    width_cap: usize,
    max_len: usize,
) -> Result<Vec<Sdr>> {
    if replicas.is_empty() {
        return Err(HerError::EmptyInput("recall needs at least one memory".into()));
    }
    let mut cursors: Vec<RecallCursor> = replicas.iter().map(|m| RecallCursor::new(m)).collect();
    let mut input = seed.clone();
    let mut out = Vec::new();
    while out.len() < max_len {
        let mut merged = PredictionMultiset::empty(seed.width());
        for (c, m) in cursors.iter_mut().zip(replicas) {
            let p = c.feed(m, &input)?;
            merged = merged.add(&PredictionMultiset::from_sdr(&p.support()))?;
        }
        let voted = Sdr::new(
            seed.width(),
            merged
                .counts()
                .iter()
                .filter(|&&(_, n)| n as usize >= agreement_threshold.max(1))
                .map(|&(i, _)| i as usize),
        )?;
        if voted == input || voted.len() < min_active || voted.len() > width_cap {
            break;
        }
        out.push(voted.clone());
        input = voted;
    }
    Ok(out)
}
