//! Feedback-modulated k-winners-take-all projector.
//!
//! Every output bit owns one proximal segment over a fixed potential pool of
//! inputs. Winners are ranked by connected overlap; feedback only breaks
//! ties, and the output index breaks what feedback leaves tied. Used for
//! input projection, symbol pooling and the fixed-weight nucleus in front
//! of the cortex.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::permanence::{Delta, Permanence};
use crate::rng::RngStream;
use crate::sdr::{PredictionMultiset, Sdr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub in_width: usize,
    pub out_width: usize,
    pub k_winners: usize,
    pub potential_fraction: f64,
    pub connected_fraction: f64,
    pub perm_threshold: f64,
    pub ltp_delta: f64,
    pub ltd_delta: f64,
    pub hetero_delta: f64,
    pub plastic: bool,
    /// Expected segment retirements per step while pruning is allowed.
    pub prune_rate: f64,
}

impl ProjectorConfig {
    pub fn new(in_width: usize, out_width: usize, k_winners: usize) -> Self {
        ProjectorConfig {
            in_width,
            out_width,
            k_winners,
            potential_fraction: 0.70,
            connected_fraction: 0.20,
            perm_threshold: 0.5,
            ltp_delta: 0.10,
            ltd_delta: 0.01,
            hetero_delta: 0.01,
            plastic: true,
            prune_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_width == 0 || self.out_width == 0 {
            return Err(HerError::invalid("projector widths must be positive"));
        }
        if self.k_winners > self.out_width {
            return Err(HerError::invalid(format!("k_winners {} > out_width {}", self.k_winners, self.out_width)));
        }
        for (name, v) in [("potential_fraction", self.potential_fraction), ("connected_fraction", self.connected_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(HerError::invalid(format!("{name} {v} outside (0,1]")));
            }
        }
        if !(self.prune_rate >= 0.0) {
            return Err(HerError::invalid("prune_rate must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximalSegment {
    pub output: u32,
    /// (input bit, permanence), sorted by input bit.
    pub synapses: Vec<(u32, Permanence)>,
    pub retired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    cfg: ProjectorConfig,
    threshold: Permanence,
    segments: Vec<ProximalSegment>,
    feedback: PredictionMultiset,
    rng: RngStream,
}

impl Projector {
    /// Random potential pools and permanences drawn from `rng`, which the
    /// projector keeps for pruning decisions.
    pub fn new(cfg: ProjectorConfig, mut rng: RngStream) -> Result<Self> {
        cfg.validate()?;
        let threshold = Permanence::from_f64(cfg.perm_threshold);
        let pool_exact = cfg.potential_fraction * cfg.in_width as f64;
        let mut segments = Vec::with_capacity(cfg.out_width);
        for o in 0..cfg.out_width {
            // stochastic rounding keeps the expected pool size exact
            let mut pool = pool_exact.floor() as usize;
            if rng.bernoulli(pool_exact - pool_exact.floor()) {
                pool += 1;
            }
            let mut inputs = rng.sample_indices(cfg.in_width, pool.max(1));
            inputs.sort_unstable();
            let synapses = inputs
                .into_iter()
                .map(|i| {
                    let p = if rng.bernoulli(cfg.connected_fraction) {
                        rng.range_inclusive(threshold.raw() as u64, Permanence::ONE.raw() as u64)
                    } else {
                        rng.range_inclusive(1, threshold.raw() as u64 - 1)
                    };
                    (i as u32, Permanence::from_raw(p as u32))
                })
                .collect();
            segments.push(ProximalSegment { output: o as u32, synapses, retired: false });
        }
        Ok(Projector { feedback: PredictionMultiset::empty(cfg.out_width), cfg, threshold, segments, rng })
    }

    /// Projector with explicit synapses, all other outputs empty.
    pub fn from_segments(cfg: ProjectorConfig, segments: Vec<ProximalSegment>, rng: RngStream) -> Result<Self> {
        cfg.validate()?;
        if segments.len() != cfg.out_width {
            return Err(HerError::WidthMismatch { expected: cfg.out_width, got: segments.len() });
        }
        let mut segments = segments;
        for s in &mut segments {
            s.synapses.sort_unstable_by_key(|&(i, _)| i);
            if s.synapses.iter().any(|&(i, _)| i as usize >= cfg.in_width) {
                return Err(HerError::invalid("synapse input out of range"));
            }
        }
        let threshold = Permanence::from_f64(cfg.perm_threshold);
        Ok(Projector { feedback: PredictionMultiset::empty(cfg.out_width), cfg, threshold, segments, rng })
    }

    pub fn config(&self) -> &ProjectorConfig {
        &self.cfg
    }

    pub fn segments(&self) -> &[ProximalSegment] {
        &self.segments
    }

    pub fn set_plastic(&mut self, plastic: bool) {
        self.cfg.plastic = plastic;
    }

    /// Holds `fb` as the modulatory input until the next call.
    pub fn latch_feedback(&mut self, fb: PredictionMultiset) -> Result<()> {
        if fb.width() != self.cfg.out_width {
            return Err(HerError::WidthMismatch { expected: self.cfg.out_width, got: fb.width() });
        }
        self.feedback = fb;
        Ok(())
    }

    pub fn latched_feedback(&self) -> &PredictionMultiset {
        &self.feedback
    }

    fn primary(&self, seg: &ProximalSegment, input: &Sdr) -> usize {
        input
            .active()
            .iter()
            .filter(|&&i| {
                seg.synapses
                    .binary_search_by_key(&i, |&(x, _)| x)
                    .map(|k| seg.synapses[k].1 >= self.threshold)
                    .unwrap_or(false)
            })
            .count()
    }

    /// Connected overlap per output (retired outputs score zero).
    pub fn overlaps(&self, input: &Sdr) -> Result<Vec<usize>> {
        self.check_input(input)?;
        Ok(self.segments.iter().map(|s| if s.retired { 0 } else { self.primary(s, input) }).collect())
    }

    fn check_input(&self, input: &Sdr) -> Result<()> {
        if input.width() != self.cfg.in_width {
            return Err(HerError::WidthMismatch { expected: self.cfg.in_width, got: input.width() });
        }
        Ok(())
    }

    /// k-WTA with an explicit feedback multiset over the outputs.
    pub fn project(&self, input: &Sdr, feedback: Option<&PredictionMultiset>) -> Result<Sdr> {
        self.check_input(input)?;
        if let Some(fb) = feedback {
            if fb.width() != self.cfg.out_width {
                return Err(HerError::WidthMismatch { expected: self.cfg.out_width, got: fb.width() });
            }
        }
        let mut scored: Vec<(usize, u32, u32)> = self
            .segments
            .iter()
            .filter(|s| !s.retired)
            .filter_map(|s| {
                let p = self.primary(s, input);
                (p > 0).then(|| (p, feedback.map_or(0, |f| f.count(s.output as usize)), s.output))
            })
            .collect();
        // feedback secondary key is count / (1 + max count) < 1; ranking by the
        // raw count is the same order without floating point
        scored.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        scored.truncate(self.cfg.k_winners);
        Sdr::new(self.cfg.out_width, scored.into_iter().map(|(_, _, o)| o as usize))
    }

    /// k-WTA using the latched feedback.
    pub fn project_latched(&self, input: &Sdr) -> Result<Sdr> {
        let fb = (!self.feedback.is_empty()).then_some(&self.feedback);
        self.project(input, fb)
    }

    /// Maps a multiset over the inputs to one over the outputs: each output
    /// collects the multiplicities of the predicted inputs it is connected to.
    pub fn feedback_through(&self, input_space: &PredictionMultiset) -> Result<PredictionMultiset> {
        if input_space.width() != self.cfg.in_width {
            return Err(HerError::WidthMismatch { expected: self.cfg.in_width, got: input_space.width() });
        }
        if input_space.is_empty() {
            return Ok(PredictionMultiset::empty(self.cfg.out_width));
        }
        let pairs = self.segments.iter().filter(|s| !s.retired).map(|s| {
            let c: u32 = input_space
                .counts()
                .iter()
                .filter(|&&(i, _)| {
                    s.synapses
                        .binary_search_by_key(&i, |&(x, _)| x)
                        .map(|k| s.synapses[k].1 >= self.threshold)
                        .unwrap_or(false)
                })
                .map(|&(_, n)| n)
                .sum();
            (s.output as usize, c)
        });
        PredictionMultiset::from_counts(self.cfg.out_width, pairs)
    }

    pub fn learn(&mut self, input: &Sdr, winners: &Sdr) -> Result<()> {
        if !self.cfg.plastic {
            return Err(HerError::NotPlastic);
        }
        self.check_input(input)?;
        if winners.width() != self.cfg.out_width {
            return Err(HerError::WidthMismatch { expected: self.cfg.out_width, got: winners.width() });
        }
        let ltp = Delta::from_f64(self.cfg.ltp_delta);
        let ltd = Delta::from_f64(self.cfg.ltd_delta).neg();
        let hetero = Delta::from_f64(self.cfg.hetero_delta).neg();
        let thr = self.threshold;
        for seg in &mut self.segments {
            if seg.retired {
                continue;
            }
            let win = winners.contains(seg.output as usize);
            for (i, p) in seg.synapses.iter_mut() {
                let on = input.contains(*i as usize);
                *p = match (win, on) {
                    (true, true) => p.apply(ltp),
                    (true, false) => p.apply(hetero),
                    (false, true) if *p >= thr => p.apply(ltd),
                    _ => *p,
                };
            }
            seg.synapses.retain(|&(_, p)| !p.is_zero());
        }
        Ok(())
    }

    /// Retires segments that still own a silent synapse. Each candidate goes
    /// with probability prune_rate / out_width. Returns how many retired.
    pub fn prune_segments(&mut self) -> usize {
        if self.cfg.prune_rate <= 0.0 {
            return 0;
        }
        let q = (self.cfg.prune_rate / self.cfg.out_width as f64).min(1.0);
        let thr = self.threshold;
        let mut n = 0;
        for seg in &mut self.segments {
            if seg.retired || seg.synapses.iter().all(|&(_, p)| p >= thr) {
                continue;
            }
            if self.rng.bernoulli(q) {
                seg.retired = true;
                n += 1;
            }
        }
        n
    }

    pub fn synapse_count(&self) -> usize {
        self.segments.iter().map(|s| s.synapses.len()).sum()
    }

    pub fn retired_count(&self) -> usize {
        self.segments.iter().filter(|s| s.retired).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_built(plastic: bool) -> Projector {
        let mut cfg = ProjectorConfig::new(4, 3, 1);
        cfg.plastic = plastic;
        let on = Permanence::from_f64(0.8);
        let segs = vec![
            ProximalSegment { output: 0, synapses: vec![(0, on), (1, on)], retired: false },
            ProximalSegment { output: 1, synapses: vec![(1, on), (2, on)], retired: false },
            ProximalSegment { output: 2, synapses: vec![(3, on)], retired: false },
        ];
        Projector::from_segments(cfg, segs, RngStream::derive(0, "p")).unwrap()
    }

    fn s(width: usize, idx: &[usize]) -> Sdr {
        Sdr::new(width, idx.iter().copied()).unwrap()
    }

    #[test]
    fn winner_by_overlap() {
        let p = hand_built(true);
        assert_eq!(p.overlaps(&s(4, &[1, 2])).unwrap(), vec![1, 2, 0]);
        assert_eq!(p.project(&s(4, &[1, 2]), None).unwrap(), s(3, &[1]));
    }

    #[test]
    fn ties_break_by_index_then_feedback() {
        let p = hand_built(true);
        assert_eq!(p.project(&s(4, &[0, 2]), None).unwrap(), s(3, &[0]));
        let fb = PredictionMultiset::from_counts(3, [(1, 3)]).unwrap();
        assert_eq!(p.project(&s(4, &[0, 2]), Some(&fb)).unwrap(), s(3, &[1]));
    }

    #[test]
    fn feedback_never_promotes_zero_overlap() {
        let p = hand_built(true);
        let fb = PredictionMultiset::from_counts(3, [(2, 100)]).unwrap();
        assert_eq!(p.project(&s(4, &[0]), Some(&fb)).unwrap(), s(3, &[0]));
        let mut p3 = hand_built(true);
        p3.cfg.k_winners = 3;
        assert_eq!(p3.project(&s(4, &[0]), Some(&fb)).unwrap(), s(3, &[0]));
    }

    #[test]
    fn learning_arithmetic() {
        let mut cfg = ProjectorConfig::new(3, 2, 1);
        cfg.plastic = true;
        let segs = vec![
            ProximalSegment {
                output: 0,
                synapses: vec![(0, Permanence::from_f64(0.40)), (1, Permanence::from_f64(0.005)), (2, Permanence::from_f64(0.9))],
                retired: false,
            },
            ProximalSegment { output: 1, synapses: vec![(0, Permanence::from_f64(0.60))], retired: false },
        ];
        let mut p = Projector::from_segments(cfg, segs, RngStream::derive(0, "p")).unwrap();
        p.learn(&s(3, &[0, 2]), &s(2, &[0])).unwrap();
        let w = &p.segments()[0].synapses;
        assert_eq!(w[0], (0, Permanence::from_f64(0.50)));
        // the 0.005 synapse on an inactive input hit zero and is gone
        assert_eq!(w.len(), 2);
        assert_eq!(w[1], (2, Permanence::from_f64(1.0)));
        assert_eq!(p.segments()[1].synapses[0].1, Permanence::from_f64(0.59));
    }

    #[test]
    fn non_plastic_refuses_to_learn() {
        let mut p = hand_built(false);
        assert!(matches!(p.learn(&s(4, &[0]), &s(3, &[0])), Err(HerError::NotPlastic)));
    }

    #[test]
    fn init_pool_sizes() {
        let p = Projector::new(ProjectorConfig::new(121, 121, 4), RngStream::derive(1, "l4")).unwrap();
        let mut connected = 0usize;
        for seg in p.segments() {
            assert!(seg.synapses.len() == 84 || seg.synapses.len() == 85);
            connected += seg.synapses.iter().filter(|s| s.1.is_connected()).count();
            assert!(seg.synapses.iter().all(|s| !s.1.is_zero()));
        }
        let mean = connected as f64 / 121.0;
        let expected = 0.2 * 0.7 * 121.0;
        // binomial with n=121*84.7, p=0.2: sd of the mean is about 0.37
        assert!((mean - expected).abs() < 1.5, "mean connected {mean} vs {expected}");
    }

    #[test]
    fn different_paths_different_pools() {
        let a = Projector::new(ProjectorConfig::new(121, 121, 4), RngStream::derive(1, "a")).unwrap();
        let b = Projector::new(ProjectorConfig::new(121, 121, 4), RngStream::derive(1, "b")).unwrap();
        assert_ne!(a.segments(), b.segments());
    }

    #[test]
    fn pruning_examples() {
        let mut p = hand_built(true);
        p.cfg.prune_rate = f64::INFINITY;
        // every synapse connected: nothing is a candidate
        assert_eq!(p.prune_segments(), 0);

        let mut q = Projector::new(ProjectorConfig::new(121, 121, 4), RngStream::derive(2, "q")).unwrap();
        q.cfg.prune_rate = f64::INFINITY;
        assert_eq!(q.prune_segments(), 121);
        assert!(q.project(&s(121, &[0, 1, 2, 3, 4, 5]), None).unwrap().is_empty());
    }

    #[test]
    fn pruning_survival_matches_geometric_decay() {
        let (n, r, t, runs) = (121usize, 2.0f64, 30usize, 200usize);
        let mut total = 0usize;
        for k in 0..runs {
            let mut cfg = ProjectorConfig::new(50, n, 4);
            cfg.prune_rate = r;
            let mut p = Projector::new(cfg, RngStream::derive(k as u64, "mc")).unwrap();
            for _ in 0..t {
                p.prune_segments();
            }
            total += n - p.retired_count();
        }
        let mean = total as f64 / runs as f64;
        let oracle = n as f64 * (1.0 - r / n as f64).powi(t as i32);
        // per-run sd is about sqrt(n q (1-q)) ~ 5.4; mean over 200 runs ~ 0.38
        assert!((mean - oracle).abs() < 2.0, "mean survivors {mean} vs {oracle}");
    }

    #[test]
    fn lsh_similar_inputs_share_winners() {
        let mut rng = RngStream::derive(5, "lsh");
        let mut p = Projector::new(ProjectorConfig::new(242, 121, 4), RngStream::derive(5, "p")).unwrap();
        let train: Vec<Sdr> = (0..20).map(|_| crate::sdr::random_sdr(242, 10, &mut rng).unwrap()).collect();
        for _ in 0..5 {
            for x in &train {
                let w = p.project(x, None).unwrap();
                p.learn(x, &w).unwrap();
            }
        }
        let (mut near, mut far) = (0usize, 0usize);
        for k in 0..200 {
            let a = &train[k % train.len()];
            // jaccard >= 0.8: swap one of ten bits
            let mut bits: Vec<usize> = a.active().iter().map(|&i| i as usize).collect();
            bits[0] = (0..242).find(|i| !a.contains(*i) && *i > k % 200).unwrap();
            let b = Sdr::new(242, bits).unwrap();
            assert!(a.overlap(&b).unwrap() as f64 / Sdr::union_all(&[a, &b]).unwrap().len() as f64 >= 0.8 - 0.2);
            let r = crate::sdr::random_sdr(242, 10, &mut rng).unwrap();
            let wa = p.project(a, None).unwrap();
            near += wa.overlap(&p.project(&b, None).unwrap()).unwrap();
            far += wa.overlap(&p.project(&r, None).unwrap()).unwrap();
        }
        assert!(near >= far, "near {near} far {far}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn winners_bounded_and_synapses_never_return(
            inputs in proptest::collection::vec(proptest::collection::vec(0usize..64, 1..10), 1..30),
            seed in 0u64..100,
        ) {
            let mut p = Projector::new(ProjectorConfig::new(64, 32, 3), RngStream::derive(seed, "prop")).unwrap();
            let mut removed: std::collections::BTreeSet<(u32, u32)> = Default::default();
            for bits in inputs {
                let x = Sdr::new(64, bits).unwrap();
                let w = p.project(&x, None).unwrap();
                let positive = p.overlaps(&x).unwrap().iter().filter(|&&o| o > 0).count();
                prop_assert!(w.len() <= 3);
                prop_assert!(w.len() == 3 || w.len() == positive);
                let before: Vec<(u32, u32)> = p.segments().iter().flat_map(|s| s.synapses.iter().map(move |y| (s.output, y.0))).collect();
                p.learn(&x, &w).unwrap();
                let after: std::collections::BTreeSet<(u32, u32)> = p.segments().iter().flat_map(|s| s.synapses.iter().map(move |y| (s.output, y.0))).collect();
                for k in before {
                    if !after.contains(&k) {
                        removed.insert(k);
                    }
                }
                prop_assert!(removed.iter().all(|k| !after.contains(k)));
            }
        }

        #[test]
        fn non_plastic_is_pure(bits in proptest::collection::vec(0usize..64, 1..10), seed in 0u64..100) {
            let mut cfg = ProjectorConfig::new(64, 32, 2);
            cfg.plastic = false;
            let p = Projector::new(cfg, RngStream::derive(seed, "dcn")).unwrap();
            let x = Sdr::new(64, bits).unwrap();
            prop_assert_eq!(p.project(&x, None).unwrap(), p.project(&x, None).unwrap());
        }
    }
}
