//! Sequence memory: one cell per input bit, each cell split into context
//! branches that own distal segments. Used for every temporal layer of a
//! column and for the hippocampal filter.
//!
//! A step activates the branches that were predicted for set bits (or
//! bursts the cell), scores the anomaly against the previous prediction,
//! runs the hysteresis, optionally learns, and predicts the next input.

mod hysteresis;
mod recall;

pub use hysteresis::*;
pub use recall::{recall_burst, RecallCursor};

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::permanence::{Delta, Permanence};
use crate::rng::RngStream;
use crate::sdr::{PredictionMultiset, Sdr};

pub type BranchId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub width: usize,
    pub branches_per_cell: usize,
    /// Connected synapses onto active branches needed to make a branch predictive.
    pub activation_threshold: usize,
    pub max_synapses_per_segment: usize,
    pub hysteresis: HysteresisParams,
}

impl SequenceParams {
    /// Threshold is half the expected number of active input bits, rounded up.
    pub fn new(width: usize, branches_per_cell: usize, symbol_active: usize, hysteresis: HysteresisParams) -> Self {
        SequenceParams {
            width,
            branches_per_cell,
            activation_threshold: symbol_active.div_ceil(2).max(1),
            max_synapses_per_segment: 128,
            hysteresis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hysteresis.validate()?;
        if self.width == 0 || self.width > crate::sdr::MAX_WIDTH {
            return Err(HerError::UnsupportedWidth(self.width));
        }
        if self.branches_per_cell == 0 || self.activation_threshold == 0 || self.max_synapses_per_segment == 0 {
            return Err(HerError::invalid("branches, activation threshold and segment capacity must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synapse {
    pub presyn: BranchId,
    pub permanence: Permanence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub owner: BranchId,
    /// Sorted by presynaptic branch, one synapse per branch.
    pub synapses: Vec<Synapse>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub predicted_next: PredictionMultiset,
    pub correctly_predicted_branches: Vec<BranchId>,
    /// One learning branch per active cell: the predicted branches, or the
    /// chosen winner of a bursting cell.
    pub winner_branches: Vec<BranchId>,
    pub anomaly: f64,
    pub boundary_event: bool,
    /// Whether this step changed any synapse.
    pub learned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMemory {
    params: SequenceParams,
    segments: Vec<Segment>,
    branch_segments: Vec<Vec<u32>>,
    state: KnowledgeState,
    ema_as: f64,
    modulation_m: f64,
    rng: RngStream,
    forced_probability: Option<f64>,
    // dynamic state
    active: Vec<bool>,
    active_list: Vec<BranchId>,
    winners: Vec<BranchId>,
    predictive: Vec<bool>,
    predictive_list: Vec<BranchId>,
    active_segments: Vec<u32>,
    predicted: PredictionMultiset,
    // plasticity accounting
    plastic_steps: u64,
    expected_plastic_steps: f64,
}

/// Activation outcome before it is committed.
struct Activation {
    active: Vec<BranchId>,
    winners: Vec<BranchId>,
    correct: Vec<BranchId>,
    bursting_winners: Vec<BranchId>,
}

impl SequenceMemory {
    /// Blank memory. It starts Unknown with a saturated novelty average.
    pub fn new(params: SequenceParams, rng: RngStream) -> Result<Self> {
        params.validate()?;
        let n = params.width * params.branches_per_cell;
        Ok(SequenceMemory {
            segments: Vec::new(),
            branch_segments: vec![Vec::new(); n],
            state: KnowledgeState::Unknown,
            ema_as: 1.0,
            modulation_m: 0.0,
            rng,
            forced_probability: None,
            active: vec![false; n],
            active_list: Vec::new(),
            winners: Vec::new(),
            predictive: vec![false; n],
            predictive_list: Vec::new(),
            active_segments: Vec::new(),
            predicted: PredictionMultiset::empty(params.width),
            plastic_steps: 0,
            expected_plastic_steps: 0.0,
            params,
        })
    }

    pub fn params(&self) -> &SequenceParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn branches_per_cell(&self) -> usize {
        self.params.branches_per_cell
    }

    pub fn state(&self) -> KnowledgeState {
        self.state
    }

    pub fn ema_as(&self) -> f64 {
        self.ema_as
    }

    pub fn modulation(&self) -> f64 {
        self.modulation_m
    }

    pub fn set_modulation(&mut self, m: f64) {
        self.modulation_m = m.clamp(0.0, 1.0);
    }

    /// Overrides the learning probability (tests and controlled experiments).
    pub fn force_learning_probability(&mut self, p: Option<f64>) {
        self.forced_probability = p;
    }

    /// Overwrites the novelty state, e.g. to start an experiment in a known regime.
    pub fn set_novelty(&mut self, state: KnowledgeState, ema_as: f64) {
        self.state = state;
        self.ema_as = ema_as.clamp(0.0, 1.0);
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn synaptic_load(&self) -> usize {
        self.segments.iter().map(|s| s.synapses.len()).sum()
    }

    /// Current prediction for the next input.
    pub fn prediction(&self) -> &PredictionMultiset {
        &self.predicted
    }

    pub fn active_branches(&self) -> &[BranchId] {
        &self.active_list
    }

    pub fn plastic_steps(&self) -> u64 {
        self.plastic_steps
    }

    /// Sum over learning-enabled steps of the learning probability.
    pub fn expected_plastic_steps(&self) -> f64 {
        self.expected_plastic_steps
    }

    /// Restarts both plasticity counters, so that tiny probabilities are
    /// not swamped by a long history.
    pub fn clear_plastic_stats(&mut self) {
        self.plastic_steps = 0;
        self.expected_plastic_steps = 0.0;
    }

    /// Clears active and predictive flags; synapses are untouched.
    pub fn reset_context(&mut self) {
        for &b in &self.active_list {
            self.active[b as usize] = false;
        }
        for &b in &self.predictive_list {
            self.predictive[b as usize] = false;
        }
        self.active_list.clear();
        self.winners.clear();
        self.predictive_list.clear();
        self.active_segments.clear();
        self.predicted = PredictionMultiset::empty(self.params.width);
    }

    pub fn step(&mut self, input: &Sdr, learn_enabled: bool) -> Result<StepResult> {
        if input.width() != self.params.width {
            return Err(HerError::WidthMismatch { expected: self.params.width, got: input.width() });
        }
        let hp = self.params.hysteresis.clone();
        let anomaly = anomaly_score(input, &self.predicted.support())?;
        self.ema_as = ema_update(self.ema_as, anomaly, hp.alpha).clamp(0.0, 1.0);
        let (state, boundary) = hysteresis_step(self.state, self.ema_as, &hp);
        self.state = state;
        if boundary {
            // The offending input opens a new sequence: no context carries over.
            self.reset_context();
        }

        let act = self.activate(input, &self.predictive);

        let mut learned = false;
        if learn_enabled {
            let p = self
                .forced_probability
                .unwrap_or_else(|| learning_probability(state, self.ema_as, &hp, self.modulation_m));
            self.expected_plastic_steps += p;
            if self.rng.bernoulli(p) {
                learned = self.learn(input, &act);
                if learned {
                    self.plastic_steps += 1;
                }
            }
        }

        for &b in &self.active_list {
            self.active[b as usize] = false;
        }
        for &b in &act.active {
            self.active[b as usize] = true;
        }
        self.active_list = act.active;
        self.winners = act.winners;
        self.refresh_prediction();

        Ok(StepResult {
            predicted_next: self.predicted.clone(),
            correctly_predicted_branches: act.correct,
            winner_branches: self.winners.clone(),
            anomaly,
            boundary_event: boundary,
            learned,
        })
    }

    fn activate(&self, input: &Sdr, predictive: &[bool]) -> Activation {
        let nb = self.params.branches_per_cell as u32;
        let mut a = Activation { active: Vec::new(), winners: Vec::new(), correct: Vec::new(), bursting_winners: Vec::new() };
        for &c in input.active() {
            let base = c * nb;
            let before = a.active.len();
            for b in base..base + nb {
                if predictive[b as usize] {
                    a.active.push(b);
                    a.winners.push(b);
                    a.correct.push(b);
                }
            }
            if a.active.len() == before {
                a.active.extend(base..base + nb);
                let w = self.burst_winner(c);
                a.winners.push(w);
                a.bursting_winners.push(w);
            }
        }
        a
    }

    /// Fewest segments, then lowest index.
    fn burst_winner(&self, cell: u32) -> BranchId {
        let nb = self.params.branches_per_cell as u32;
        (cell * nb..(cell + 1) * nb)
            .min_by_key(|&b| (self.branch_segments[b as usize].len(), b))
            .expect("branches_per_cell > 0")
    }

    /// Predictive branches (sorted) and the segments that made them so.
    fn compute_prediction(&self, active: &[bool], any_active: bool) -> (Vec<BranchId>, Vec<u32>) {
        let mut branches = Vec::new();
        let mut segs = Vec::new();
        if !any_active {
            return (branches, segs);
        }
        let thr = self.params.activation_threshold;
        for (sid, seg) in self.segments.iter().enumerate() {
            if seg.synapses.len() < thr {
                continue;
            }
            let n = seg
                .synapses
                .iter()
                .filter(|s| s.permanence.is_connected() && active[s.presyn as usize])
                .count();
            if n >= thr {
                segs.push(sid as u32);
                branches.push(seg.owner);
            }
        }
        branches.sort_unstable();
        branches.dedup();
        (branches, segs)
    }

    fn multiset_of(&self, branches: &[BranchId]) -> PredictionMultiset {
        let nb = self.params.branches_per_cell as u32;
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for &b in branches {
            let cell = b / nb;
            match counts.last_mut() {
                Some((c, n)) if *c == cell => *n += 1,
                _ => counts.push((cell, 1)),
            }
        }
        PredictionMultiset::from_counts(self.params.width, counts.into_iter().map(|(c, n)| (c as usize, n)))
            .expect("cells are within width")
    }

    fn refresh_prediction(&mut self) {
        for &b in &self.predictive_list {
            self.predictive[b as usize] = false;
        }
        let (branches, segs) = self.compute_prediction(&self.active, !self.active_list.is_empty());
        for &b in &branches {
            self.predictive[b as usize] = true;
        }
        self.predicted = self.multiset_of(&branches);
        self.predictive_list = branches;
        self.active_segments = segs;
    }

    /// Applies plasticity for the transition from the previous step to `input`.
    /// `self.active`, `self.winners` and `self.active_segments` still describe
    /// the previous step.
    fn learn(&mut self, input: &Sdr, act: &Activation) -> bool {
        let hp = &self.params.hysteresis;
        let d = learning_rate(hp.ltp_delta_base, self.modulation_m);
        let ltp = Delta::from_f64(d);
        let ltd = Delta::from_f64(d * hp.ltd_ratio).neg();
        let nb = self.params.branches_per_cell as u32;
        let mut changed = false;
        let mut emptied = false;

        for &sid in &self.active_segments {
            let seg = &mut self.segments[sid as usize];
            if !input.contains((seg.owner / nb) as usize) {
                continue;
            }
            for syn in seg.synapses.iter_mut() {
                let delta = if self.active[syn.presyn as usize] { ltp } else { ltd };
                let next = syn.permanence.apply(delta);
                changed |= next != syn.permanence;
                syn.permanence = next;
            }
            let before = seg.synapses.len();
            seg.synapses.retain(|s| !s.permanence.is_zero());
            emptied |= seg.synapses.is_empty() && before > 0;
        }

        if !self.winners.is_empty() {
            let cap = self.params.max_synapses_per_segment;
            for &w in &act.bursting_winners {
                let mut presyn: Vec<BranchId> = if self.winners.len() <= cap {
                    self.winners.clone()
                } else {
                    self.rng
                        .sample_indices(self.winners.len(), cap)
                        .into_iter()
                        .map(|i| self.winners[i])
                        .collect()
                };
                presyn.sort_unstable();
                presyn.dedup();
                let synapses = presyn.into_iter().map(|p| Synapse { presyn: p, permanence: Permanence::NASCENT }).collect();
                self.branch_segments[w as usize].push(self.segments.len() as u32);
                self.segments.push(Segment { owner: w, synapses });
                changed = true;
            }
        }

        if emptied {
            self.drop_empty_segments();
        }
        changed
    }

    fn drop_empty_segments(&mut self) {
        self.segments.retain(|s| !s.synapses.is_empty());
        for v in &mut self.branch_segments {
            v.clear();
        }
        for (i, s) in self.segments.iter().enumerate() {
            self.branch_segments[s.owner as usize].push(i as u32);
        }
        // segment ids shifted; the cached active set is recomputed on next refresh
        self.active_segments.clear();
    }

    /// Uniform depression of every synapse by `amount`, removing those that
    /// reach zero. Returns the number of synapses removed.
    pub fn decay_all(&mut self, amount: Delta) -> usize {
        let before = self.synaptic_load();
        for seg in &mut self.segments {
            for syn in seg.synapses.iter_mut() {
                syn.permanence = syn.permanence.apply(amount.neg());
            }
            seg.synapses.retain(|s| !s.permanence.is_zero());
        }
        let removed = before - self.synaptic_load();
        if removed > 0 {
            self.drop_empty_segments();
            self.refresh_prediction();
        }
        removed
    }

    /// Order-sensitive digest of the synapse table, for equality checks in
    /// tests and traces.
    pub fn synapse_digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in &self.segments {
            s.owner.hash(&mut h);
            for y in &s.synapses {
                y.presyn.hash(&mut h);
                y.permanence.raw().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests;
