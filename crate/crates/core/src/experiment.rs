//! Experiment plumbing: an input source, a stop rule, and a run loop that
//! keeps the metric state alongside the cortex so runs can be resumed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::cortex::{Cortex, CortexConfig, CycleReport};
use crate::error::{HerError, Result};
use crate::metrics::{forwarding_ratio, load_rows, write_eos_csv, write_rows, EncodingCollector, EncodingMode, EosLedger};
use crate::periphery::{read_features, read_stream, FrontEnd, FrontEndConfig, StreamSpec, SyntheticStream};
use crate::sdr::TaggedSdr;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    pub synthetic: Option<StreamSpec>,
    /// Text stream file as written by `write_stream`.
    pub stream_file: Option<PathBuf>,
    /// Band-energy feature file, encoded through `front_end`.
    pub feature_file: Option<PathBuf>,
    pub front_end: FrontEndConfig,
    /// Cycles per input period, for the perfect-EOS rule. Synthetic input
    /// supplies its own.
    pub period: Option<u64>,
}

impl InputSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.synthetic.is_some() as u8 + self.stream_file.is_some() as u8 + self.feature_file.is_some() as u8;
        if n != 1 {
            return Err(HerError::Config("input needs exactly one of synthetic, stream_file, feature_file".into()));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    pub fn period(&self) -> Option<u64> {
        self.period.or_else(|| self.synthetic.as_ref().map(|s| s.period_cycles() as u64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    /// Stop once every rung reaches this perfect-EOS ratio.
    pub perfect_eos: Option<f64>,
    /// Consecutive periods compared by the perfect-EOS rule.
    pub eos_periods: usize,
    /// Stop once every L6a has been Known for this many cycles in a row.
    pub stability_window: Option<u64>,
    /// Cycles allowed in one invocation.
    pub max_cycles: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { perfect_eos: None, eos_periods: 3, stability_window: None, max_cycles: 100_000 }
    }
}

impl StopRule {
    /// Applies `key=value` pairs separated by commas: `perfect_eos`,
    /// `eos_periods`, `stable`, `cycles`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| HerError::Config(format!("bad stop clause {part:?}")))?;
            let bad = |_| HerError::Config(format!("bad value in {part:?}"));
            match k.trim() {
                "perfect_eos" => self.perfect_eos = Some(v.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?),
                "eos_periods" => self.eos_periods = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "stable" => self.stability_window = Some(v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
                "cycles" => self.max_cycles = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => return Err(HerError::Config(format!("unknown stop key {other:?}"))),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Cortex configuration file; built-in defaults when absent.
    pub config: Option<PathBuf>,
    pub input: InputSpec,
    pub stop: StopRule,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    /// Cycles between synaptic-load and stability samples; 0 uses the
    /// input period (or 1000).
    pub sample_every: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            config: None,
            input: InputSpec { synthetic: Some(StreamSpec::default()), ..InputSpec::default() },
            stop: StopRule::default(),
            checkpoint_in: None,
            checkpoint_out: None,
            sample_every: 0,
        }
    }
}

impl ExperimentSpec {
    /// Parses a spec; relative paths are taken from `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut s: ExperimentSpec = toml::from_str(text).map_err(|e| HerError::Config(e.to_string()))?;
        for p in [&mut s.config, &mut s.input.stream_file, &mut s.input.feature_file, &mut s.checkpoint_in, &mut s.checkpoint_out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        s.input.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        ExperimentSpec::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn cortex_config(&self) -> Result<CortexConfig> {
        match &self.config {
            Some(p) => CortexConfig::from_toml(&fs::read_to_string(p)?),
            None => Ok(CortexConfig::default()),
        }
    }
}

/// Everything a run measures, kept so a resumed run continues seamlessly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub ledger: EosLedger,
    pub encodings: EncodingCollector,
    /// Input cycles consumed so far.
    pub consumed: u64,
    pub period: Option<u64>,
    pub known_streak: u64,
    pub first_stable: Option<u64>,
    pub first_perfect: Option<u64>,
    pub perfect: Vec<Option<f64>>,
    pub load_samples: Vec<Vec<String>>,
    pub stability_samples: Vec<Vec<String>>,
    pub stop_reason: Option<String>,
    pub front_end: Option<FrontEnd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cycles: u64,
    pub stop_reason: Option<String>,
    pub rung_load: Vec<usize>,
    pub slice_load: usize,
    pub total_synapses: usize,
    pub perfect_eos: Vec<Option<f64>>,
    /// Real symbols per column per cycle over the whole run.
    pub eos_rate: Vec<f64>,
    pub known_streak: u64,
    pub first_perfect_cycle: Option<u64>,
    pub first_stable_cycle: Option<u64>,
    pub forwarding_ratio: Option<f64>,
    pub slices_allocated: usize,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

pub struct Experiment {
    spec: ExperimentSpec,
    cortex: Cortex,
    state: RunState,
}

enum Feed {
    Cycles(std::vec::IntoIter<Vec<TaggedSdr>>),
    Synthetic(SyntheticStream),
    Frames(std::vec::IntoIter<Vec<f64>>),
}

const STATE_RECORD: &str = "run-state";
const SUMMARY_RECORD: &str = "summary";
const SPEC_RECORD: &str = "spec";

impl Experiment {
    pub fn new(spec: ExperimentSpec, cfg: CortexConfig) -> Result<Self> {
        spec.input.validate()?;
        let front_end = match spec.input.feature_file {
            Some(_) => Some(FrontEnd::new(spec.input.front_end.clone(), cfg.master_seed)?),
            None => None,
        };
        let cortex = Cortex::new(cfg)?;
        let state = RunState {
            ledger: EosLedger::new(&cortex.config().rung_widths),
            encodings: EncodingCollector::for_cortex(&cortex),
            consumed: 0,
            period: spec.input.period(),
            known_streak: 0,
            first_stable: None,
            first_perfect: None,
            perfect: vec![None; cortex.rungs().len()],
            load_samples: Vec::new(),
            stability_samples: Vec::new(),
            stop_reason: None,
            front_end,
        };
        Ok(Experiment { spec, cortex, state })
    }

    /// Continues a checkpointed run. A checkpoint without run state (a bare
    /// cortex) starts fresh metrics on the new input.
    pub fn from_checkpoint(spec: ExperimentSpec, ck: Checkpoint) -> Result<Self> {
        let mut e = Experiment::new(spec, ck.cortex.config().clone())?;
        e.cortex = ck.cortex;
        if let Some(b) = ck.extras.iter().find(|(n, _)| n == STATE_RECORD).map(|(_, b)| b) {
            e.state = bincode::deserialize(b).map_err(|err| HerError::Checkpoint(err.to_string()))?;
        }
        Ok(e)
    }

    /// Keeps the trained cortex but restarts input and metrics, e.g. to
    /// expose a trained cortex to a new set.
    pub fn restart_input(&mut self, spec: ExperimentSpec) -> Result<()> {
        let mut fresh = Experiment::new(spec, self.cortex.config().clone())?;
        std::mem::swap(&mut fresh.cortex, &mut self.cortex);
        *self = fresh;
        Ok(())
    }

    pub fn cortex(&self) -> &Cortex {
        &self.cortex
    }

    pub fn cortex_mut(&mut self) -> &mut Cortex {
        &mut self.cortex
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn set_stop(&mut self, stop: StopRule) {
        self.spec.stop = stop;
    }

    fn feed(&self) -> Result<Feed> {
        let skip = self.state.consumed as usize;
        let inp = &self.spec.input;
        if let Some(s) = &inp.synthetic {
            let mut it = SyntheticStream::new(s.clone())?;
            for _ in 0..skip {
                if it.next().is_none() {
                    break;
                }
            }
            return Ok(Feed::Synthetic(it));
        }
        if let Some(p) = &inp.stream_file {
            let (width, cycles) = read_stream(BufReader::new(File::open(p)?))?;
            if width != self.cortex.config().input_width {
                return Err(HerError::WidthMismatch { expected: self.cortex.config().input_width, got: width });
            }
            return Ok(Feed::Cycles(cycles.into_iter().skip(skip).collect::<Vec<_>>().into_iter()));
        }
        let p = inp.feature_file.as_ref().expect("validated input");
        let m = read_features(BufReader::new(File::open(p)?))?;
        Ok(Feed::Frames(m.frames.into_iter().skip(skip).collect::<Vec<_>>().into_iter()))
    }

    fn next_input(&mut self, feed: &mut Feed) -> Result<Option<Vec<TaggedSdr>>> {
        Ok(match feed {
            Feed::Cycles(it) => it.next(),
            Feed::Synthetic(it) => it.next(),
            Feed::Frames(it) => match it.next() {
                Some(f) => Some(self.state.front_end.as_mut().expect("front end for features").encode(&f)?),
                None => None,
            },
        })
    }

    /// Steps until the stop rule fires or input runs out. `observe` sees
    /// every cycle's report.
    pub fn run_with(&mut self, mut observe: impl FnMut(&CycleReport, &Cortex) -> Result<()>) -> Result<RunSummary> {
        let mut feed = self.feed()?;
        let mut ran = 0u64;
        let reason = loop {
            if ran >= self.spec.stop.max_cycles {
                break "max_cycles";
            }
            let Some(x) = self.next_input(&mut feed)? else { break "input_exhausted" };
            let w = self.cortex.rungs()[0].len();
            if x.len() != w {
                return Err(HerError::WidthMismatch { expected: w, got: x.len() });
            }
            let stream = x.first().map(|t| t.tag.stream_id);
            let inputs: Vec<Option<TaggedSdr>> = x.into_iter().map(Some).collect();
            let report = self.cortex.step(&inputs)?;
            self.state.consumed += 1;
            ran += 1;
            self.record(&report, stream)?;
            observe(&report, &self.cortex)?;
            if let Some(r) = self.check_stop()? {
                break r;
            }
        };
        if ran > 0 {
            self.state.stop_reason = Some(reason.to_string());
        }
        Ok(self.summary())
    }

    pub fn run(&mut self) -> Result<RunSummary> {
        self.run_with(|_, _| Ok(()))
    }

    fn sample_every(&self) -> u64 {
        match self.spec.sample_every {
            0 => self.state.period.unwrap_or(1000).max(1),
            n => n,
        }
    }

    fn record(&mut self, report: &CycleReport, stream: Option<u32>) -> Result<()> {
        let st = &mut self.state;
        st.ledger.record(report);
        st.encodings.record(report, stream);
        let all_known = self.cortex.rungs().iter().flatten().all(|c| c.l6a_state().is_known());
        st.known_streak = if all_known { st.known_streak + 1 } else { 0 };
        if let Some(w) = self.spec.stop.stability_window {
            if st.first_stable.is_none() && st.known_streak >= w {
                st.first_stable = Some(st.consumed);
            }
        }
        if let Some(p) = st.period {
            let n = self.spec.stop.eos_periods.max(2) as u64;
            if st.consumed % p == 0 && st.consumed >= n * p {
                let start = st.consumed - n * p;
                for r in 0..st.perfect.len() {
                    st.perfect[r] = if st.ledger.real_count(r, start, st.consumed) > 0 {
                        Some(st.ledger.rung_perfect_eos(r, start, p, n as usize)?)
                    } else {
                        None
                    };
                }
                if let Some(x) = self.spec.stop.perfect_eos {
                    if st.first_perfect.is_none() && st.perfect.iter().all(|v| v.is_some_and(|v| v >= x)) {
                        st.first_perfect = Some(st.consumed);
                    }
                }
            }
        }
        if self.state.consumed % self.sample_every() == 0 {
            self.sample();
        }
        Ok(())
    }

    fn sample(&mut self) {
        let cx = &self.cortex;
        self.state.load_samples.extend(load_rows(cx).into_iter().map(|r| r.to_vec()));
        for (r, rung) in cx.rungs().iter().enumerate() {
            let known = rung.iter().filter(|c| c.l6a_state().is_known()).count();
            let slices = (0..rung.len()).filter(|&j| cx.column_has_slice(r, j)).count();
            self.state.stability_samples.push(vec![
                cx.cycle().to_string(),
                (r + 1).to_string(),
                format!("{:.4}", known as f64 / rung.len() as f64),
                slices.to_string(),
            ]);
        }
    }

    fn check_stop(&self) -> Result<Option<&'static str>> {
        let st = &self.state;
        if self.spec.stop.perfect_eos.is_some() && st.first_perfect == Some(st.consumed) {
            return Ok(Some("perfect_eos"));
        }
        if let Some(w) = self.spec.stop.stability_window {
            if st.known_streak >= w {
                return Ok(Some("stable"));
            }
        }
        Ok(None)
    }

    pub fn summary(&self) -> RunSummary {
        let cx = &self.cortex;
        let n = self.state.consumed.max(1) as f64;
        RunSummary {
            cycles: self.state.consumed,
            stop_reason: self.state.stop_reason.clone(),
            rung_load: (0..cx.rungs().len()).map(|r| cx.rung_load(r)).collect(),
            slice_load: cx.slice_load(),
            total_synapses: cx.total_synapses(),
            perfect_eos: self.state.perfect.clone(),
            eos_rate: (0..cx.rungs().len())
                .map(|r| self.state.ledger.real_count(r, 0, u64::MAX) as f64 / (n * cx.rungs()[r].len() as f64))
                .collect(),
            known_streak: self.state.known_streak,
            first_perfect_cycle: self.state.first_perfect,
            first_stable_cycle: self.state.first_stable,
            forwarding_ratio: forwarding_ratio(cx),
            slices_allocated: cx.slices().iter().flatten().filter(|s| s.is_allocated()).count(),
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.cortex.clone());
        ck.extras.push((STATE_RECORD.into(), bincode::serialize(&self.state).map_err(|e| HerError::Checkpoint(e.to_string()))?));
        ck.extras.push((SUMMARY_RECORD.into(), self.summary().to_json().into_bytes()));
        let spec = toml::to_string(&self.spec).map_err(|e| HerError::Checkpoint(e.to_string()))?;
        ck.extras.push((SPEC_RECORD.into(), spec.into_bytes()));
        Ok(ck)
    }

    /// Writes the metric files and the summary into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        write_eos_csv(create("eos_ledger.csv")?, &self.state.ledger)?;
        write_rows(create("synaptic_load.csv")?, &["cycle", "rung", "layer", "synapses"], &self.state.load_samples)?;
        write_rows(create("stability.csv")?, &["cycle", "rung", "l6a_known", "columns_with_slice"], &self.state.stability_samples)?;
        let streams = self.state.encodings.streams();
        let sim = self.state.encodings.similarity(&streams, EncodingMode::TimeAgnostic);
        let rows: Vec<Vec<String>> = streams
            .iter()
            .zip(&sim)
            .flat_map(|(&a, row)| {
                streams.iter().zip(row).map(move |(&b, v)| vec![a.to_string(), b.to_string(), v.map(|v| format!("{v:.6}")).unwrap_or_default()])
            })
            .collect();
        write_rows(create("similarity.csv")?, &["stream_a", "stream_b", "cosine"], &rows)?;
        let mut f = create("summary.json")?;
        f.write_all(self.summary().to_json().as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

/// One line per published symbol: `cycle rung column tag kind sdr`.
pub fn trace_lines(report: &CycleReport) -> Vec<String> {
    let mut out = Vec::new();
    for (r, rung) in report.outputs.iter().enumerate() {
        for (j, p) in rung.iter().enumerate() {
            if let Some(p) = p {
                let kind = if p.speculative { "F" } else { "E" };
                out.push(format!("{} {} {} {} {} {}", report.cycle, r + 1, j, p.tag, kind, p.sdr.to_text()));
            }
        }
    }
    out
}

/// Experiment spec stored in a checkpoint, if any.
pub fn stored_spec(ck: &Checkpoint) -> Result<Option<ExperimentSpec>> {
    let Some(b) = ck.extra(SPEC_RECORD) else { return Ok(None) };
    let text = std::str::from_utf8(b).map_err(|_| HerError::Checkpoint("spec is not text".into()))?;
    toml::from_str(text).map(Some).map_err(|e| HerError::Checkpoint(e.to_string()))
}

/// Summary stored in a checkpoint, if any.
pub fn stored_summary(ck: &Checkpoint) -> Option<RunSummary> {
    ck.extra(SUMMARY_RECORD).and_then(|b| serde_json::from_slice(b).ok())
}
