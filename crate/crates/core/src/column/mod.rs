//! Cortical column.
//!
//! Per module: L4 projector replicas feeding L23 trackers. Shared: L6a
//! replicas and one L6b over the vertical input, L1 symbol builders and L5
//! forward predictors. L6b boundaries mark the end of a sequence; at that
//! point L1 pools the branches L23 predicted correctly into a symbol.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::projector::{Projector, ProjectorConfig};
use crate::rng::RngStream;
use crate::sdr::{multiset_merge, PredictionMultiset, Sdr, Tag, TaggedSdr};
use crate::sequence_memory::{modulation, HysteresisParams, KnowledgeState, SequenceMemory, SequenceParams};

/// Plasticity constants shared by the column's projectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximalParams {
    pub potential_fraction: f64,
    pub connected_fraction: f64,
    pub ltp_delta: f64,
    pub ltd_delta: f64,
    pub hetero_delta: f64,
    pub prune_rate: f64,
}

impl Default for ProximalParams {
    fn default() -> Self {
        ProximalParams {
            potential_fraction: 0.70,
            connected_fraction: 0.20,
            ltp_delta: 0.10,
            ltd_delta: 0.01,
            hetero_delta: 0.01,
            prune_rate: 0.0,
        }
    }
}

impl ProximalParams {
    fn projector(&self, in_width: usize, out_width: usize, k: usize) -> ProjectorConfig {
        ProjectorConfig {
            potential_fraction: self.potential_fraction,
            connected_fraction: self.connected_fraction,
            ltp_delta: self.ltp_delta,
            ltd_delta: self.ltd_delta,
            hetero_delta: self.hetero_delta,
            prune_rate: self.prune_rate,
            ..ProjectorConfig::new(in_width, out_width, k)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnConfig {
    /// One vertical module plus the lateral ones.
    pub n_modules: usize,
    pub replicas_l23_l4: usize,
    pub replicas_l6: usize,
    pub replicas_l5: usize,
    pub module_width: usize,
    pub symbol_active: usize,
    pub branches_per_cell: usize,
    pub l23: HysteresisParams,
    pub l6a: HysteresisParams,
    pub l6b: HysteresisParams,
    pub l5: HysteresisParams,
    pub proximal: ProximalParams,
    /// 0: build symbols from the L23 state of the boundary cycle; 1: from the step before.
    pub eos_offset: usize,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        ColumnConfig {
            n_modules: 1,
            replicas_l23_l4: 1,
            replicas_l6: 1,
            replicas_l5: 1,
            module_width: 121,
            symbol_active: 4,
            branches_per_cell: 4,
            l23: HysteresisParams::l23(),
            l6a: HysteresisParams::l6a(),
            l6b: HysteresisParams::l6b(),
            l5: HysteresisParams::l5(),
            proximal: ProximalParams::default(),
            eos_offset: 0,
        }
    }
}

impl ColumnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modules == 0 || self.replicas_l23_l4 == 0 || self.replicas_l6 == 0 || self.replicas_l5 == 0 {
            return Err(HerError::Config("module and replica counts must be >= 1".into()));
        }
        if self.module_width <= self.symbol_active || self.symbol_active == 0 {
            return Err(HerError::Config("need 0 < symbol_active < module_width".into()));
        }
        if self.eos_offset > 1 {
            return Err(HerError::Config("eos_offset must be 0 or 1".into()));
        }
        for h in [&self.l23, &self.l6a, &self.l6b, &self.l5] {
            h.validate().map_err(|e| HerError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Width of an emitted symbol: one module-wide block per L1 replica.
    pub fn symbol_width(&self) -> usize {
        self.n_modules * self.module_width
    }

    pub fn symbol_bits(&self) -> usize {
        self.n_modules * self.symbol_active
    }
}

/// Per-layer learning permissions for one column and one cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnGates {
    pub l1: bool,
    pub l23: bool,
    pub l4: bool,
    pub l6a: bool,
    pub l6b: bool,
    pub l5: bool,
    pub prune: bool,
}

impl ColumnGates {
    pub fn all() -> Self {
        ColumnGates { l1: true, l23: true, l4: true, l6a: true, l6b: true, l5: true, prune: false }
    }

    pub fn none() -> Self {
        ColumnGates::default()
    }
}

/// Shape of one input flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowShape {
    pub width: usize,
    /// Typical number of active bits, used to size distal thresholds.
    pub active: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct L23Trace {
    correct: Vec<u32>,
    winners: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Module {
    flow: FlowShape,
    l4: Vec<Projector>,
    l23: Vec<SequenceMemory>,
    /// Input waiting one step before L4 sees it, with the feedback that was
    /// latched when it arrived (the prediction of that very input).
    pending: Option<(Sdr, PredictionMultiset)>,
    /// Latched prediction of this module's input flow.
    feedback: PredictionMultiset,
    /// Last two L23 steps per replica, newest last.
    trace: Vec<Vec<L23Trace>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLoad {
    pub l23: usize,
    pub l6a: usize,
    pub l6b: usize,
    pub l5: usize,
    pub l4_proximal: usize,
    pub l1_proximal: usize,
}

impl LayerLoad {
    /// Distal synapses: the plastic, growing population.
    pub fn distal(&self) -> usize {
        self.l23 + self.l6a + self.l6b + self.l5
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnOutput {
    pub symbol: Option<TaggedSdr>,
    /// L6b boundary seen this cycle (reported even when muted).
    pub boundary: bool,
    /// L6a prediction of the next vertical input, when L6a stepped.
    pub feedback_to_prev: Option<PredictionMultiset>,
    pub l5_prediction: Option<Sdr>,
    pub vertical_stepped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    cfg: ColumnConfig,
    modules: Vec<Module>,
    l6a: Vec<SequenceMemory>,
    l6b: SequenceMemory,
    l1: Vec<Projector>,
    l5: Vec<SequenceMemory>,
    l1_feedback: PredictionMultiset,
    l23_state: KnowledgeState,
    modulation_m: f64,
    muted: bool,
    /// L6a/b learning held off until the next boundary after re-attaching.
    l6_hold: bool,
    last_vertical_tag: Option<Tag>,
    l6a_prediction: PredictionMultiset,
    l5_prediction: Option<Sdr>,
}

fn majority(states: impl Iterator<Item = KnowledgeState>) -> KnowledgeState {
    let (mut k, mut n) = (0, 0);
    for s in states {
        n += 1;
        if s.is_known() {
            k += 1;
        }
    }
    if 2 * k > n {
        KnowledgeState::Known
    } else {
        KnowledgeState::Unknown
    }
}

impl Column {
    /// `flows[0]` is the vertical input; the rest feed lateral modules.
    pub fn new(cfg: ColumnConfig, flows: &[FlowShape], master_seed: u64, path: &str) -> Result<Self> {
        cfg.validate()?;
        if flows.len() != cfg.n_modules {
            return Err(HerError::Config(format!("{} flows for {} modules", flows.len(), cfg.n_modules)));
        }
        let rng = |name: String| RngStream::derive(master_seed, &format!("{path}/{name}"));
        let mw = cfg.module_width;
        let nb = cfg.branches_per_cell;
        let mut modules = Vec::new();
        for (m, flow) in flows.iter().enumerate() {
            let mut l4 = Vec::new();
            let mut l23 = Vec::new();
            for r in 0..cfg.replicas_l23_l4 {
                l4.push(Projector::new(
                    cfg.proximal.projector(flow.width, mw, cfg.symbol_active),
                    rng(format!("m{m}/l4.{r}")),
                )?);
                l23.push(SequenceMemory::new(
                    SequenceParams::new(mw, nb, cfg.symbol_active, cfg.l23.clone()),
                    rng(format!("m{m}/l23.{r}")),
                )?);
            }
            modules.push(Module {
                flow: *flow,
                l4,
                l23,
                pending: None,
                feedback: PredictionMultiset::empty(flow.width),
                trace: vec![Vec::new(); cfg.replicas_l23_l4],
            });
        }
        let v = flows[0];
        let l6a = (0..cfg.replicas_l6)
            .map(|r| SequenceMemory::new(SequenceParams::new(v.width, nb, v.active, cfg.l6a.clone()), rng(format!("l6a.{r}"))))
            .collect::<Result<Vec<_>>>()?;
        let l6b = SequenceMemory::new(SequenceParams::new(v.width, nb, v.active, cfg.l6b.clone()), rng("l6b".into()))?;
        let l1_in = cfg.n_modules * cfg.replicas_l23_l4 * mw * nb;
        let l1 = (0..cfg.n_modules)
            .map(|j| Projector::new(cfg.proximal.projector(l1_in, mw, cfg.symbol_active), rng(format!("l1.{j}"))))
            .collect::<Result<Vec<_>>>()?;
        let sw = cfg.symbol_width();
        let l5 = (0..cfg.replicas_l5)
            .map(|r| {
                SequenceMemory::new(SequenceParams::new(sw, nb, cfg.symbol_bits(), cfg.l5.clone()), rng(format!("l5.{r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Column {
            l1_feedback: PredictionMultiset::empty(sw),
            l6a_prediction: PredictionMultiset::empty(v.width),
            cfg,
            modules,
            l6a,
            l6b,
            l1,
            l5,
            l23_state: KnowledgeState::Unknown,
            modulation_m: 0.0,
            muted: false,
            l6_hold: false,
            last_vertical_tag: None,
            l5_prediction: None,
        })
    }

    pub fn config(&self) -> &ColumnConfig {
        &self.cfg
    }

    pub fn symbol_width(&self) -> usize {
        self.cfg.symbol_width()
    }

    pub fn vertical_width(&self) -> usize {
        self.modules[0].flow.width
    }

    pub fn l23_state(&self) -> KnowledgeState {
        self.l23_state
    }

    pub fn l6a_state(&self) -> KnowledgeState {
        majority(self.l6a.iter().map(|m| m.state()))
    }

    pub fn l6a_ema(&self) -> f64 {
        self.l6a.iter().map(|m| m.ema_as()).sum::<f64>() / self.l6a.len() as f64
    }

    pub fn l6b_state(&self) -> KnowledgeState {
        self.l6b.state()
    }

    pub fn l6b_ema(&self) -> f64 {
        self.l6b.ema_as()
    }

    pub fn modulation(&self) -> f64 {
        self.modulation_m
    }

    pub fn is_muted(&self) -> bool {
        self.muted
    }

    pub fn set_muted(&mut self, on: bool) {
        self.muted = on;
    }

    /// Leaves the muted state after a transient: supragranular context is
    /// dropped and L6a/b stop learning until the next boundary.
    pub fn reattach(&mut self) {
        self.muted = false;
        self.l6_hold = true;
        for module in &mut self.modules {
            for l23 in &mut module.l23 {
                l23.reset_context();
            }
        }
    }

    pub fn is_holding_l6(&self) -> bool {
        self.l6_hold
    }

    pub fn last_vertical_tag(&self) -> Option<Tag> {
        self.last_vertical_tag
    }

    /// Latest L6a prediction of the next vertical input (merged over replicas).
    pub fn l6a_prediction(&self) -> &PredictionMultiset {
        &self.l6a_prediction
    }

    pub fn l6a(&self) -> &[SequenceMemory] {
        &self.l6a
    }

    pub fn l6b(&self) -> &SequenceMemory {
        &self.l6b
    }

    pub fn l5(&self) -> &[SequenceMemory] {
        &self.l5
    }

    pub fn l23(&self, module: usize) -> &[SequenceMemory] {
        &self.modules[module].l23
    }

    pub fn l4(&self, module: usize) -> &[Projector] {
        &self.modules[module].l4
    }

    pub fn l1(&self) -> &[Projector] {
        &self.l1
    }

    /// Every sequence memory in the column, for bulk inspection.
    pub fn memories(&self) -> impl Iterator<Item = &SequenceMemory> {
        self.modules.iter().flat_map(|m| m.l23.iter()).chain(self.l6a.iter()).chain(std::iter::once(&self.l6b)).chain(self.l5.iter())
    }

    pub fn memories_mut(&mut self) -> impl Iterator<Item = &mut SequenceMemory> {
        self.modules
            .iter_mut()
            .flat_map(|m| m.l23.iter_mut())
            .chain(self.l6a.iter_mut())
            .chain(std::iter::once(&mut self.l6b))
            .chain(self.l5.iter_mut())
    }

    pub fn load(&self) -> LayerLoad {
        LayerLoad {
            l23: self.modules.iter().flat_map(|m| &m.l23).map(|s| s.synaptic_load()).sum(),
            l6a: self.l6a.iter().map(|s| s.synaptic_load()).sum(),
            l6b: self.l6b.synaptic_load(),
            l5: self.l5.iter().map(|s| s.synaptic_load()).sum(),
            l4_proximal: self.modules.iter().flat_map(|m| &m.l4).map(|p| p.synapse_count()).sum(),
            l1_proximal: self.l1.iter().map(|p| p.synapse_count()).sum(),
        }
    }

    /// Digest of every distal and proximal synapse table.
    pub fn synapse_digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in self.memories() {
            m.synapse_digest().hash(&mut h);
        }
        for p in self.modules.iter().flat_map(|m| &m.l4).chain(self.l1.iter()) {
            for s in p.segments() {
                s.retired.hash(&mut h);
                for (i, v) in &s.synapses {
                    i.hash(&mut h);
                    v.raw().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Holds the predicted next symbol of this column, used by L1 to break ties.
    pub fn latch_l1_feedback(&mut self, fb: PredictionMultiset) -> Result<()> {
        if fb.width() != self.symbol_width() {
            return Err(HerError::WidthMismatch { expected: self.symbol_width(), got: fb.width() });
        }
        self.l1_feedback = fb;
        Ok(())
    }

    /// Holds the predicted next value of module `m`'s input flow.
    pub fn latch_module_feedback(&mut self, m: usize, fb: PredictionMultiset) -> Result<()> {
        let module = self.modules.get_mut(m).ok_or_else(|| HerError::invalid(format!("no module {m}")))?;
        if fb.width() != module.flow.width {
            return Err(HerError::WidthMismatch { expected: module.flow.width, got: fb.width() });
        }
        module.feedback = fb;
        Ok(())
    }

    /// Pushes long-term modulation into L5 (decided by the rung above).
    pub fn set_l5_modulation(&mut self, m: f64) {
        for l5 in &mut self.l5 {
            l5.set_modulation(m);
        }
    }

    fn refresh_modulation(&mut self) {
        self.modulation_m = modulation(self.l6a_state(), self.l6a_ema(), &self.cfg.l6a);
        let m = self.modulation_m;
        for module in &mut self.modules {
            for l23 in &mut module.l23 {
                l23.set_modulation(m);
            }
        }
        self.l6b.set_modulation(m);
    }

    fn check_flow(&self, m: usize, x: &Sdr) -> Result<()> {
        let w = self.modules[m].flow.width;
        if x.width() != w {
            return Err(HerError::WidthMismatch { expected: w, got: x.width() });
        }
        Ok(())
    }

    /// One global cycle. `inputs[m]` is the value delivered on module m's
    /// flow this cycle, if any. `inject_eos` forces a symbol.
    pub fn step(&mut self, inputs: &[Option<TaggedSdr>], gates: &ColumnGates, inject_eos: bool) -> Result<ColumnOutput> {
        if inputs.len() != self.modules.len() {
            return Err(HerError::WidthMismatch { expected: self.modules.len(), got: inputs.len() });
        }
        for (m, x) in inputs.iter().enumerate() {
            if let Some(x) = x {
                self.check_flow(m, &x.sdr)?;
            }
        }
        let mut out = ColumnOutput::default();
        let l23_known = self.l23_state.is_known();

        // L6 sees the vertical input of this cycle.
        if let Some(v) = &inputs[0] {
            let free = l23_known && !self.muted && !self.l6_hold;
            let learn_a = gates.l6a && free;
            let learn_b = gates.l6b && free;
            let mut preds = Vec::with_capacity(self.l6a.len());
            for l6a in &mut self.l6a {
                preds.push(l6a.step(&v.sdr, learn_a)?.predicted_next.support());
            }
            let refs: Vec<&Sdr> = preds.iter().collect();
            self.l6a_prediction = multiset_merge(v.sdr.width(), &refs)?;
            out.boundary = self.l6b.step(&v.sdr, learn_b)?.boundary_event;
            if out.boundary {
                self.l6_hold = false;
            }
            out.feedback_to_prev = Some(self.l6a_prediction.clone());
            out.vertical_stepped = true;
            self.last_vertical_tag = Some(v.tag);
            self.refresh_modulation();
        }

        // L4 sees each flow one step late; L23 tracks the projections.
        for (m, x) in inputs.iter().enumerate() {
            let Some(x) = x else { continue };
            let module = &mut self.modules[m];
            let delayed = module.pending.replace((x.sdr.clone(), module.feedback.clone()));
            let Some((d, fb_in)) = delayed else { continue };
            if self.muted {
                continue;
            }
            for r in 0..module.l4.len() {
                let fb = module.l4[r].feedback_through(&fb_in)?;
                let fb = (!fb.is_empty()).then_some(&fb);
                let proj = module.l4[r].project(&d, fb)?;
                if gates.l4 && !proj.is_empty() {
                    module.l4[r].learn(&d, &proj)?;
                }
                let res = module.l23[r].step(&proj, gates.l23)?;
                let trace = &mut module.trace[r];
                trace.push(L23Trace { correct: res.correctly_predicted_branches, winners: res.winner_branches });
                if trace.len() > 2 {
                    trace.remove(0);
                }
            }
            if gates.prune {
                for p in &mut module.l4 {
                    p.prune_segments();
                }
            }
        }
        self.l23_state = majority(self.modules.iter().flat_map(|m| m.l23.iter().map(|s| s.state())));

        if (out.boundary || inject_eos) && !self.muted {
            if let Some(sym) = self.build_symbol(gates.l1)? {
                let tag = inputs[0].as_ref().map(|v| v.tag).or(self.last_vertical_tag).unwrap_or(Tag { stream_id: 0, offset: 0 });
                self.feed_l5(&sym, gates.l5)?;
                out.symbol = Some(TaggedSdr::new(sym, tag));
            }
        }
        if gates.prune {
            for p in &mut self.l1 {
                p.prune_segments();
            }
        }
        out.l5_prediction = self.l5_prediction.clone();
        Ok(out)
    }

    /// L1 input: indicator over every L23 replica's correctly predicted
    /// branches at the chosen step, falling back to winner branches.
    fn l1_input(&self) -> Result<Sdr> {
        let per = self.cfg.module_width * self.cfg.branches_per_cell;
        let pick = |t: &Vec<L23Trace>, winners: bool| -> Vec<u32> {
            let k = t.len().checked_sub(1 + self.cfg.eos_offset);
            match k {
                Some(k) if winners => t[k].winners.clone(),
                Some(k) => t[k].correct.clone(),
                None => Vec::new(),
            }
        };
        let gather = |winners: bool| -> Vec<usize> {
            let mut bits = Vec::new();
            let mut r = 0usize;
            for module in &self.modules {
                for t in &module.trace {
                    bits.extend(pick(t, winners).into_iter().map(|b| r * per + b as usize));
                    r += 1;
                }
            }
            bits
        };
        let mut bits = gather(false);
        if bits.is_empty() {
            bits = gather(true);
        }
        Sdr::new(self.l1[0].config().in_width, bits)
    }

    /// Pools the L23 state into a symbol. Absent when some L1 replica cannot
    /// fill its k winners (nothing has reached L23 yet).
    pub fn build_symbol(&mut self, learn: bool) -> Result<Option<Sdr>> {
        let input = self.l1_input()?;
        let mw = self.cfg.module_width;
        let mut parts = Vec::with_capacity(self.l1.len());
        for (j, l1) in self.l1.iter().enumerate() {
            let fb = self.l1_feedback.slice(j * mw, mw)?;
            let fb = (!fb.is_empty()).then_some(&fb);
            let w = l1.project(&input, fb)?;
            if w.len() < self.cfg.symbol_active {
                return Ok(None);
            }
            parts.push(w);
        }
        if learn {
            for (l1, w) in self.l1.iter_mut().zip(&parts) {
                l1.learn(&input, w)?;
            }
        }
        let refs: Vec<&Sdr> = parts.iter().collect();
        Ok(Some(Sdr::concat(&refs)?))
    }

    /// Steps L5 with a symbol of this column (real or forwarded).
    pub fn feed_l5(&mut self, symbol: &Sdr, learn: bool) -> Result<()> {
        let mut preds = Vec::with_capacity(self.l5.len());
        for l5 in &mut self.l5 {
            preds.push(l5.step(symbol, learn)?.predicted_next.support());
        }
        self.l5_prediction = l5_agreement(&preds);
        Ok(())
    }

    /// L5's prediction of the next symbol when every replica agrees.
    pub fn l5_forward_prediction(&self) -> Option<&Sdr> {
        self.l5_prediction.as_ref()
    }

    /// Presents a replayed item to module `m`'s L4 only.
    pub fn replay_l4(&mut self, m: usize, item: &Sdr, learn: bool) -> Result<()> {
        self.check_flow(m, item)?;
        let module = &mut self.modules[m];
        for p in &mut module.l4 {
            let w = p.project(item, None)?;
            if learn && !w.is_empty() {
                p.learn(item, &w)?;
            }
        }
        Ok(())
    }
}

/// Unanimous, non-empty prediction across replicas.
pub fn l5_agreement(preds: &[Sdr]) -> Option<Sdr> {
    let first = preds.first()?;
    if first.is_empty() || preds.iter().any(|p| p != first) {
        return None;
    }
    Some(first.clone())
}

#[cfg(test)]
mod tests;
