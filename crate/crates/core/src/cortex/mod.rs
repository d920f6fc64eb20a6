//! Topology and global scheduling.
//!
//! Rungs of columns joined by filtering slices. Each cycle the first rung
//! steps on the encoded input; a higher column steps only when one of its
//! source columns published a symbol. Slices, attention generators,
//! feedback and the corticothalamic loop run after the rungs.

mod config;
mod wiring;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{CortexConfig, MatchPartner};
pub use wiring::{ColumnWiring, SliceWiring, Source, Wiring};

use crate::column::{Column, ColumnGates, ColumnOutput, FlowShape};
use crate::error::{HerError, Result};
use crate::hippocampus::{allocate_policy, gating_rules, replay_deliverable, FilteringSlice, SliceEvent};
use crate::sdr::{PredictionMultiset, Sdr, Tag, TaggedSdr};
use crate::sequence_memory::KnowledgeState;
use crate::thalamus::{ctloop_match, forwarding_eligibility, mgn_filter, AttentionGenerator, AttentionMode, ForwardState, MatchLimits, MgnState};

/// Symbol published by a column in one cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Published {
    pub sdr: Sdr,
    pub tag: Tag,
    /// Forwarded by the corticothalamic loop rather than built at a boundary.
    pub speculative: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CortexEvent {
    Eos { rung: usize, column: usize, tag: Tag, speculative: bool },
    Boundary { rung: usize, column: usize },
    /// `boundary` is the rung below the slice.
    Slice { boundary: usize, slice: usize, allocated: bool },
    Swr { boundary: usize, slice: usize, items: usize },
    ReplayDelivered { rung: usize, column: usize },
    Forward { rung: usize, column: usize, bits: usize },
    Mute { rung: usize, column: usize, muted: bool },
    Attention { column: usize, on: bool },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub events: Vec<CortexEvent>,
    /// Per rung, per column.
    pub outputs: Vec<Vec<Option<Published>>>,
    pub stepped: Vec<Vec<bool>>,
    pub mgn_suppressed: usize,
}

impl CycleReport {
    pub fn eos_count(&self, rung: usize) -> usize {
        self.outputs[rung].iter().filter(|p| p.as_ref().is_some_and(|p| !p.speculative)).count()
    }
}

/// Per-rung running totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RungCounters {
    pub real_symbols: u64,
    pub forwarded_symbols: u64,
    pub swr_items: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cortex {
    cfg: CortexConfig,
    wiring: Wiring,
    rungs: Vec<Vec<Column>>,
    slices: Vec<Vec<FilteringSlice>>,
    replay: Vec<Vec<VecDeque<Sdr>>>,
    ags: Vec<AttentionGenerator>,
    forward: Vec<Vec<ForwardState>>,
    forward_out: Vec<Vec<Option<Sdr>>>,
    last_stream: Vec<Vec<Option<u32>>>,
    mgn: Vec<MgnState>,
    counters: Vec<RungCounters>,
    cycle: u64,
}

fn shape(cfg: &CortexConfig, r: usize) -> FlowShape {
    if r == 0 {
        FlowShape { width: cfg.input_width, active: cfg.input_active }
    } else {
        let c = cfg.column_for(r - 1);
        FlowShape { width: c.symbol_width(), active: c.symbol_bits() }
    }
}

impl Cortex {
    pub fn new(cfg: CortexConfig) -> Result<Self> {
        cfg.validate()?;
        let wiring = Wiring::build(&cfg);
        let seed = cfg.master_seed;
        let n = cfg.rungs();
        let mut rungs = Vec::with_capacity(n);
        for r in 0..n {
            let cc = cfg.column_for(r);
            let flows = vec![shape(&cfg, r); cc.n_modules];
            let rung = (0..cfg.rung_widths[r])
                .map(|j| Column::new(cc.clone(), &flows, seed, &format!("r{r}/c{j}")))
                .collect::<Result<Vec<_>>>()?;
            rungs.push(rung);
        }
        let mut slices = Vec::new();
        for (b, boundary) in wiring.slices.iter().enumerate() {
            let f = shape(&cfg, b + 1);
            let s = boundary
                .iter()
                .enumerate()
                .map(|(k, sw)| FilteringSlice::new(cfg.slice.clone(), sw.group.len(), f.width, f.active, seed, &format!("s{b}/{k}")))
                .collect::<Result<Vec<_>>>()?;
            slices.push(s);
        }
        let top = shape(&cfg, n);
        let ags = (0..cfg.rung_widths[n - 1])
            .map(|j| {
                FilteringSlice::new(cfg.slice.clone(), 1, top.width, top.active, seed, &format!("ag{j}"))
                    .map(|s| AttentionGenerator::new(s, cfg.attention))
            })
            .collect::<Result<Vec<_>>>()?;
        let per_rung = |v| cfg.rung_widths.iter().map(|&w| vec![v; w]).collect::<Vec<_>>();
        Ok(Cortex {
            replay: wiring.slices.iter().map(|b| vec![VecDeque::new(); b.len()]).collect(),
            forward: cfg.rung_widths.iter().map(|&w| vec![ForwardState::default(); w]).collect(),
            forward_out: cfg.rung_widths.iter().map(|&w| vec![None; w]).collect(),
            last_stream: per_rung(None),
            mgn: vec![MgnState::default(); cfg.rung_widths[0]],
            counters: vec![RungCounters::default(); n],
            cycle: 0,
            cfg,
            wiring,
            rungs,
            slices,
            ags,
        })
    }

    pub fn config(&self) -> &CortexConfig {
        &self.cfg
    }

    pub fn wiring(&self) -> &Wiring {
        &self.wiring
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn rungs(&self) -> &[Vec<Column>] {
        &self.rungs
    }

    pub fn column(&self, r: usize, j: usize) -> &Column {
        &self.rungs[r][j]
    }

    pub fn column_mut(&mut self, r: usize, j: usize) -> &mut Column {
        &mut self.rungs[r][j]
    }

    pub fn slices(&self) -> &[Vec<FilteringSlice>] {
        &self.slices
    }

    pub fn attention_generators(&self) -> &[AttentionGenerator] {
        &self.ags
    }

    pub fn counters(&self) -> &[RungCounters] {
        &self.counters
    }

    pub fn mgn_states(&self) -> &[MgnState] {
        &self.mgn
    }

    pub fn forward_states(&self) -> &[Vec<ForwardState>] {
        &self.forward
    }

    pub fn set_attention_mode(&mut self, mode: AttentionMode) {
        self.cfg.attention = mode;
        for ag in &mut self.ags {
            ag.set_mode(mode);
            if mode != AttentionMode::Generated {
                ag.slice_mut().set_allocated(false);
            }
        }
    }

    /// Restarts the plasticity counters of every sequence memory.
    pub fn clear_plastic_stats(&mut self) {
        for c in self.rungs.iter_mut().flatten() {
            c.memories_mut().for_each(|m| m.clear_plastic_stats());
        }
        let slices = self.slices.iter_mut().flatten().chain(self.ags.iter_mut().map(|a| a.slice_mut()));
        for s in slices {
            s.memories_mut().iter_mut().for_each(|m| m.clear_plastic_stats());
        }
    }

    pub fn set_swr(&mut self, on: bool) {
        self.cfg.swr = on;
    }

    /// Distal synapses per rung (columns only).
    pub fn rung_load(&self, r: usize) -> usize {
        self.rungs[r].iter().map(|c| c.load().distal()).sum()
    }

    pub fn slice_load(&self) -> usize {
        self.slices.iter().flatten().map(|s| s.synaptic_load()).sum::<usize>()
            + self.ags.iter().map(|a| a.slice().synaptic_load()).sum::<usize>()
    }

    pub fn total_synapses(&self) -> usize {
        (0..self.rungs.len()).map(|r| self.rung_load(r)).sum::<usize>() + self.slice_load()
    }

    pub fn any_slice_allocated(&self) -> bool {
        self.slices.iter().flatten().any(|s| s.is_allocated()) || self.ags.iter().any(|a| a.slice().is_allocated())
    }

    /// Whether column (r, j) has an allocated slice above or below it.
    pub fn column_has_slice(&self, r: usize, j: usize) -> bool {
        let cw = &self.wiring.columns[r][j];
        let below = cw.slice_below.is_some_and(|k| self.slices[r - 1][k].is_allocated());
        let above = if r + 1 == self.rungs.len() {
            self.ags[j].slice().is_allocated()
        } else {
            cw.slices_above.iter().any(|&k| self.slices[r][k].is_allocated())
        };
        below || above
    }

    /// Learning permissions for every column, from the current state.
    pub fn compute_gates(&self) -> Vec<Vec<ColumnGates>> {
        let top = self.rungs.len() - 1;
        (0..self.rungs.len())
            .map(|r| {
                (0..self.rungs[r].len())
                    .map(|j| {
                        let col = &self.rungs[r][j];
                        let cw = &self.wiring.columns[r][j];
                        let (present, state) = match cw.slice_below {
                            Some(k) => (self.slices[r - 1][k].is_allocated(), self.slices[r - 1][k].state()),
                            None => (false, KnowledgeState::Unknown),
                        };
                        let g = gating_rules(present, state, col.l23_state());
                        let above: Vec<(bool, crate::hippocampus::LearnGates)> = if r == top {
                            let s = self.ags[j].slice();
                            vec![(s.is_allocated(), gating_rules(s.is_allocated(), s.state(), KnowledgeState::Known))]
                        } else {
                            cw.slices_above
                                .iter()
                                .map(|&k| {
                                    let s = &self.slices[r][k];
                                    let l23 = if self.wiring.slices[r][k].consumers.iter().all(|&c| self.rungs[r + 1][c].l23_state().is_known()) {
                                        KnowledgeState::Known
                                    } else {
                                        KnowledgeState::Unknown
                                    };
                                    (s.is_allocated(), gating_rules(s.is_allocated(), s.state(), l23))
                                })
                                .collect()
                        };
                        let any_above = above.iter().any(|(a, _)| *a);
                        let blocked = present && !state.is_known();
                        let ovr = self.cfg.l6b_above_override && any_above && !blocked;
                        ColumnGates {
                            l1: g.l1_above || ovr,
                            l23: g.l23_above,
                            l4: g.l4_above || ovr,
                            l6a: g.l6a_above,
                            l6b: g.l6b_above || ovr,
                            // L5 only serves the corticothalamic loop
                            l5: self.cfg.attention != AttentionMode::Off && above.iter().all(|(_, a)| a.l5_below),
                            prune: above.iter().all(|(_, a)| a.prune_allowed_below),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// One global cycle. `inputs[i]` feeds rung-1 column i; `None` means the
    /// flow delivers nothing this cycle.
    pub fn step(&mut self, inputs: &[Option<TaggedSdr>]) -> Result<CycleReport> {
        let w0 = self.rungs[0].len();
        if inputs.len() != w0 {
            return Err(HerError::WidthMismatch { expected: w0, got: inputs.len() });
        }
        let gates = self.compute_gates();
        let mut report = CycleReport { cycle: self.cycle, ..CycleReport::default() };

        let mut filtered = Vec::with_capacity(w0);
        for (i, x) in inputs.iter().enumerate() {
            let Some(x) = x else {
                filtered.push(None);
                continue;
            };
            let ca3_above = self.wiring.columns[0][i].slices_above.iter().any(|&k| self.slices[0][k].is_allocated());
            let pred = self.cfg.mgn.prediction_filter.then(|| self.rungs[0][i].l6a_prediction());
            let out = mgn_filter(&mut self.mgn[i], &self.cfg.mgn, x, pred, ca3_above)?;
            if out.is_none() {
                report.mgn_suppressed += 1;
            }
            filtered.push(out);
        }

        for r in 0..self.rungs.len() {
            let col_inputs: Vec<Vec<Option<TaggedSdr>>> = self.wiring.columns[r]
                .iter()
                .map(|cw| {
                    cw.sources
                        .iter()
                        .map(|s| match *s {
                            Source::Input(i) => filtered[i].clone(),
                            Source::Column(p) => report.outputs[r - 1][p].as_ref().map(|p| TaggedSdr::new(p.sdr.clone(), p.tag)),
                        })
                        .collect()
                })
                .collect();
            let mut inject = vec![false; col_inputs.len()];
            for (j, ins) in col_inputs.iter().enumerate() {
                if let Some(v) = &ins[0] {
                    let prev = self.last_stream[r][j].replace(v.tag.stream_id);
                    inject[j] = self.cfg.supervised_eos && gates[r][j].l6b && prev.is_some_and(|p| p != v.tag.stream_id);
                }
            }
            let results: Vec<Result<Option<ColumnOutput>>> = self.rungs[r]
                .par_iter_mut()
                .zip(col_inputs.par_iter())
                .zip(gates[r].par_iter())
                .zip(inject.par_iter())
                .map(|(((c, ins), g), &inj)| {
                    if ins.iter().all(|x| x.is_none()) {
                        Ok(None)
                    } else {
                        c.step(ins, g, inj).map(Some)
                    }
                })
                .collect();
            let mut published = Vec::with_capacity(results.len());
            let mut stepped = Vec::with_capacity(results.len());
            for (j, res) in results.into_iter().enumerate() {
                let out = res?;
                stepped.push(out.is_some());
                let mut p = None;
                if let Some(o) = out {
                    if o.boundary {
                        report.events.push(CortexEvent::Boundary { rung: r, column: j });
                        // the burst ends with the successor's sequence
                        if let Some(&Source::Column(p)) = self.wiring.columns[r][j].sources.first() {
                            if self.forward[r - 1][p].is_forwarding() {
                                self.forward[r - 1][p].halt();
                            }
                        }
                        if self.forward[r][j].is_forwarding() && self.forward[r][j].consume() {
                            self.reattach(r, j, &mut report.events);
                        }
                    }
                    if self.rungs[r][j].is_muted() && !self.rungs[r][j].l6b_state().is_known() {
                        self.reattach(r, j, &mut report.events);
                    }
                    if let Some(s) = o.symbol {
                        p = Some(Published { sdr: s.sdr, tag: s.tag, speculative: false });
                    }
                }
                if let Some(f) = self.forward_out[r][j].take() {
                    if p.is_none() {
                        let tag = self.rungs[r][j].last_vertical_tag().unwrap_or(Tag { stream_id: 0, offset: 0 });
                        p = Some(Published { sdr: f, tag, speculative: true });
                    }
                }
                if let Some(p) = &p {
                    report.events.push(CortexEvent::Eos { rung: r, column: j, tag: p.tag, speculative: p.speculative });
                    if p.speculative {
                        self.counters[r].forwarded_symbols += 1;
                    } else {
                        self.counters[r].real_symbols += 1;
                    }
                }
                published.push(p);
            }
            report.outputs.push(published);
            report.stepped.push(stepped);
        }

        self.step_slices(&gates, &mut report)?;
        self.update_allocation(&mut report.events);
        self.route_modulation();
        self.route_feedback()?;
        if self.cfg.attention != AttentionMode::Off {
            self.ctloop(&mut report.events)?;
        }
        self.cycle += 1;
        Ok(report)
    }

    fn reattach(&mut self, r: usize, j: usize, events: &mut Vec<CortexEvent>) {
        self.forward[r][j].reset();
        self.forward_out[r][j] = None;
        if self.rungs[r][j].is_muted() {
            self.rungs[r][j].reattach();
            events.push(CortexEvent::Mute { rung: r, column: j, muted: false });
        }
    }

    fn step_slices(&mut self, gates: &[Vec<ColumnGates>], report: &mut CycleReport) -> Result<()> {
        for b in 0..self.slices.len() {
            for k in 0..self.slices[b].len() {
                let sw = &self.wiring.slices[b][k];
                let parts: Vec<Option<&Sdr>> = sw.group.iter().map(|&c| report.outputs[b][c].as_ref().map(|p| &p.sdr)).collect();
                let slice = &mut self.slices[b][k];
                if slice.step(&parts)? {
                    self.replay[b][k].clear();
                    let unfamiliar = sw.consumers.iter().any(|&j| !self.rungs[b + 1][j].l6a_state().is_known());
                    if self.cfg.swr && slice.state().is_known() && unfamiliar {
                        let seed = slice.last_input().cloned().expect("stepped slice has an input");
                        let items = slice.swr_replay(&seed)?;
                        report.events.push(CortexEvent::Swr { boundary: b, slice: k, items: items.len() });
                        self.counters[b + 1].swr_items += items.len() as u64;
                        self.replay[b][k].extend(items);
                    }
                } else if !slice.is_allocated() {
                    slice.decay();
                }
            }
        }
        let top = self.rungs.len() - 1;
        for (j, ag) in self.ags.iter_mut().enumerate() {
            ag.observe(report.outputs[top][j].as_ref().map(|p| &p.sdr))?;
        }
        // Replay goes to L4 of consumers that received no real input.
        for b in 0..self.slices.len() {
            let bits = shape(&self.cfg, b + 1).active;
            for k in 0..self.slices[b].len() {
                let Some(item) = self.replay[b][k].pop_front() else { continue };
                let sw = &self.wiring.slices[b][k];
                for &j in &sw.consumers {
                    if report.stepped[b + 1][j] {
                        continue;
                    }
                    let mut delivered = false;
                    for (m, src) in self.wiring.columns[b + 1][j].sources.iter().enumerate() {
                        let Source::Column(p) = *src else { continue };
                        let Some(i) = sw.group.iter().position(|&g| g == p) else { continue };
                        let part = self.slices[b][k].member_part(&item, i)?;
                        if replay_deliverable(&part, bits) {
                            self.rungs[b + 1][j].replay_l4(m, &part, gates[b + 1][j].l4)?;
                            delivered = true;
                        }
                    }
                    if delivered {
                        report.events.push(CortexEvent::ReplayDelivered { rung: b + 1, column: j });
                    }
                }
            }
        }
        Ok(())
    }

    fn update_allocation(&mut self, events: &mut Vec<CortexEvent>) {
        for b in 0..self.slices.len() {
            for k in 0..self.slices[b].len() {
                let states: Vec<KnowledgeState> = self.wiring.slices[b][k].consumers.iter().map(|&j| self.rungs[b + 1][j].l6a_state()).collect();
                let want = allocate_policy(&states).unwrap_or(false);
                if let Some(e) = self.slices[b][k].set_allocated(want) {
                    events.push(CortexEvent::Slice { boundary: b, slice: k, allocated: e == SliceEvent::Allocated });
                    if e == SliceEvent::Deallocated {
                        self.replay[b][k].clear();
                    }
                }
            }
        }
        if self.cfg.attention == AttentionMode::Generated {
            let top = self.rungs.len() - 1;
            for (j, ag) in self.ags.iter_mut().enumerate() {
                let before = ag.attention_on();
                ag.update(self.rungs[top][j].l6a_state());
                if ag.attention_on() != before {
                    events.push(CortexEvent::Attention { column: j, on: ag.attention_on() });
                }
            }
        }
    }

    /// L5 learning pace follows the most novel successor.
    fn route_modulation(&mut self) {
        for r in 0..self.rungs.len() - 1 {
            for p in 0..self.rungs[r].len() {
                let m = self.wiring.columns[r][p]
                    .successors
                    .iter()
                    .map(|&s| self.rungs[r + 1][s].modulation())
                    .fold(0.0f64, f64::max);
                self.rungs[r][p].set_l5_modulation(m);
            }
        }
    }

    /// Successors' L6a predictions reach the predecessor's L1 and every L4
    /// module fed by that predecessor.
    fn route_feedback(&mut self) -> Result<()> {
        for r in 1..self.rungs.len() {
            for p in 0..self.rungs[r - 1].len() {
                let cw = &self.wiring.columns[r - 1][p];
                if cw.successors.is_empty() {
                    continue;
                }
                let mut merged = PredictionMultiset::empty(self.rungs[r][cw.successors[0]].vertical_width());
                for &s in &cw.successors {
                    merged = merged.add(self.rungs[r][s].l6a_prediction())?;
                }
                for &(j, m) in &cw.consumers {
                    self.rungs[r][j].latch_module_feedback(m, merged.clone())?;
                }
                self.rungs[r - 1][p].latch_l1_feedback(merged)?;
            }
        }
        Ok(())
    }

    fn ctloop(&mut self, events: &mut Vec<CortexEvent>) -> Result<()> {
        let n = self.rungs.len();
        if n < 2 {
            return Ok(());
        }
        let top = n - 1;
        let mut att: Vec<Vec<bool>> = vec![Vec::new(); n];
        att[top] = self.ags.iter().map(|a| a.attention_on()).collect();
        for r in (0..top).rev() {
            att[r] = self.wiring.columns[r]
                .iter()
                .map(|cw| !cw.successors.is_empty() && cw.successors.iter().all(|&s| att[r + 1][s]))
                .collect();
        }
        let max_credit = self.cfg.max_lookahead;
        for r in (0..top).rev() {
            let bits = self.cfg.column_for(r).symbol_bits();
            for p in 0..self.rungs[r].len() {
                let succ = self.wiring.columns[r][p].successors.clone();
                let succ_fwd: Vec<bool> = if r + 1 == top { Vec::new() } else { succ.iter().map(|&s| self.forward[r + 1][s].is_forwarding()).collect() };
                if !forwarding_eligibility(&succ_fwd, att[r][p]) || self.forward[r][p].credit >= max_credit {
                    continue;
                }
                let Some(pred) = self.rungs[r][p].l5_forward_prediction().cloned() else { continue };
                let partners: Vec<PredictionMultiset> = succ
                    .iter()
                    .map(|&s| match self.cfg.match_partner {
                        MatchPartner::L6a => self.rungs[r + 1][s].l6a_prediction().clone(),
                        MatchPartner::L6b => self.rungs[r + 1][s].l6b().prediction().clone(),
                    })
                    .collect();
                let refs: Vec<&PredictionMultiset> = partners.iter().collect();
                let Some(m) = ctloop_match(&pred, &refs, MatchLimits::exact(bits))? else { continue };
                if !self.forward[r][p].try_forward(&m, self.cfg.forward_limit) {
                    continue;
                }
                if !self.rungs[r][p].is_muted() {
                    self.rungs[r][p].set_muted(true);
                    events.push(CortexEvent::Mute { rung: r, column: p, muted: true });
                }
                events.push(CortexEvent::Forward { rung: r, column: p, bits: m.len() });
                self.rungs[r][p].feed_l5(&m, false)?;
                self.forward_out[r][p] = Some(m);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
