//! Filtering slices between rungs.
//!
//! A slice is a replicated sequence memory over the concatenated output of a
//! group of columns. It is allocated while some column fed by the group is
//! unfamiliar with its input, and its own familiarity decides which layers
//! may learn on either side. A familiar slice can replay the rest of a
//! sequence from its own predictions to speed up the columns above.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::permanence::Delta;
use crate::rng::RngStream;
use crate::sdr::Sdr;
use crate::sequence_memory::{recall_burst, HysteresisParams, KnowledgeState, SequenceMemory, SequenceParams};

/// Learning permissions produced by one slice for the columns above it and
/// the group below it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnGates {
    pub l1_above: bool,
    pub l23_above: bool,
    pub l4_above: bool,
    pub l6a_above: bool,
    pub l6b_above: bool,
    pub l5_below: bool,
    pub prune_allowed_below: bool,
}

/// The gating table. `ca3_state` is ignored when the slice is absent and
/// `l23_above` only matters for a familiar slice.
pub fn gating_rules(ca3_present: bool, ca3_state: KnowledgeState, l23_above: KnowledgeState) -> LearnGates {
    let off = LearnGates {
        l1_above: false,
        l23_above: false,
        l4_above: false,
        l6a_above: false,
        l6b_above: false,
        l5_below: false,
        prune_allowed_below: !ca3_present,
    };
    if !ca3_present {
        return LearnGates { l23_above: true, l6a_above: true, l5_below: true, ..off };
    }
    if !ca3_state.is_known() {
        return off;
    }
    let l6 = l23_above.is_known();
    LearnGates { l1_above: true, l23_above: true, l4_above: true, l6a_above: l6, l6b_above: l6, l5_below: l6, ..off }
}

/// Allocated while any consumer L6a is unfamiliar.
pub fn allocate_policy(consumer_l6a: &[KnowledgeState]) -> Result<bool> {
    if consumer_l6a.is_empty() {
        return Err(HerError::EmptyInput("allocation needs at least one consumer".into()));
    }
    Ok(consumer_l6a.iter().any(|s| !s.is_known()))
}

/// A replay item reaches L4 only if it is non-empty and at most 150% of a
/// regular symbol.
pub fn replay_deliverable(item: &Sdr, symbol_bits: usize) -> bool {
    !item.is_empty() && 2 * item.len() <= 3 * symbol_bits
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub replicas: usize,
    pub branches_per_cell: usize,
    pub hysteresis: HysteresisParams,
    /// Longest ripple, in items.
    pub max_replay: usize,
    /// Permanence removed from every synapse per cycle while deallocated.
    pub decay_per_cycle: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            replicas: 3,
            branches_per_cell: 4,
            hysteresis: HysteresisParams::ca3(),
            max_replay: 10,
            decay_per_cycle: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceEvent {
    Allocated,
    Deallocated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteringSlice {
    cfg: SliceConfig,
    memories: Vec<SequenceMemory>,
    member_width: usize,
    members: usize,
    member_bits: usize,
    allocated: bool,
    last_input: Option<Sdr>,
}

impl FilteringSlice {
    /// A slice over `members` concatenated flows of `member_width` bits,
    /// each carrying about `member_bits` active bits.
    pub fn new(cfg: SliceConfig, members: usize, member_width: usize, member_bits: usize, master_seed: u64, path: &str) -> Result<Self> {
        if cfg.replicas == 0 || members == 0 {
            return Err(HerError::Config("slice needs replicas and members".into()));
        }
        let width = members * member_width;
        let memories = (0..cfg.replicas)
            .map(|r| {
                SequenceMemory::new(
                    SequenceParams::new(width, cfg.branches_per_cell, member_bits, cfg.hysteresis.clone()),
                    RngStream::derive(master_seed, &format!("{path}/ca3.{r}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilteringSlice { cfg, memories, member_width, members, member_bits, allocated: false, last_input: None })
    }

    pub fn config(&self) -> &SliceConfig {
        &self.cfg
    }

    pub fn memories(&self) -> &[SequenceMemory] {
        &self.memories
    }

    pub fn memories_mut(&mut self) -> &mut [SequenceMemory] {
        &mut self.memories
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn member_width(&self) -> usize {
        self.member_width
    }

    pub fn member_bits(&self) -> usize {
        self.member_bits
    }

    pub fn vote_threshold(&self) -> usize {
        self.memories.len() / 2 + 1
    }

    pub fn is_allocated(&self) -> bool {
        self.allocated
    }

    /// Majority vote over replica states.
    pub fn state(&self) -> KnowledgeState {
        let known = self.memories.iter().filter(|m| m.state().is_known()).count();
        if 2 * known > self.memories.len() {
            KnowledgeState::Known
        } else {
            KnowledgeState::Unknown
        }
    }

    pub fn synaptic_load(&self) -> usize {
        self.memories.iter().map(|m| m.synaptic_load()).sum()
    }

    pub fn last_input(&self) -> Option<&Sdr> {
        self.last_input.as_ref()
    }

    /// Applies the allocation decision; reports a transition if any.
    pub fn set_allocated(&mut self, on: bool) -> Option<SliceEvent> {
        if on == self.allocated {
            return None;
        }
        self.allocated = on;
        if on {
            Some(SliceEvent::Allocated)
        } else {
            for m in &mut self.memories {
                m.reset_context();
            }
            self.last_input = None;
            Some(SliceEvent::Deallocated)
        }
    }

    /// Concatenates the members' outputs of this cycle (absent members
    /// contribute nothing).
    pub fn concat(&self, parts: &[Option<&Sdr>]) -> Result<Sdr> {
        if parts.len() != self.members {
            return Err(HerError::WidthMismatch { expected: self.members, got: parts.len() });
        }
        let mut bits = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if let Some(p) = p {
                if p.width() != self.member_width {
                    return Err(HerError::WidthMismatch { expected: self.member_width, got: p.width() });
                }
                bits.extend(p.active().iter().map(|&b| i * self.member_width + b as usize));
            }
        }
        Sdr::new(self.members * self.member_width, bits)
    }

    /// Steps every replica on the group output. No-op when deallocated or
    /// when no member emitted; returns whether the slice stepped.
    pub fn step(&mut self, parts: &[Option<&Sdr>]) -> Result<bool> {
        if !self.allocated || parts.iter().all(|p| p.is_none()) {
            return Ok(false);
        }
        let input = self.concat(parts)?;
        for m in &mut self.memories {
            m.step(&input, true)?;
        }
        self.last_input = Some(input);
        Ok(true)
    }

    /// Recurrent recall from `seed` with per-bit replica voting. Stops on a
    /// repeated item, an item narrower than one member symbol, or the length
    /// cap. Synapses are untouched.
    pub fn swr_replay(&self, seed: &Sdr) -> Result<Vec<Sdr>> {
        if !self.state().is_known() {
            return Ok(Vec::new());
        }
        let refs: Vec<&SequenceMemory> = self.memories.iter().collect();
        recall_burst(&refs, seed, self.vote_threshold(), self.member_bits, usize::MAX, self.cfg.max_replay)
    }

    /// Member `i`'s share of a replayed item.
    pub fn member_part(&self, item: &Sdr, i: usize) -> Result<Sdr> {
        item.slice(i * self.member_width, self.member_width)
    }

    /// One cycle of forgetting while deallocated. Returns synapses removed.
    pub fn decay(&mut self) -> usize {
        if self.allocated {
            return 0;
        }
        let d = Delta::from_f64(self.cfg.decay_per_cycle);
        self.memories.iter_mut().map(|m| m.decay_all(d)).sum()
    }
}
