//! Measurements over a run: segmentation regularity, stability, symbol
//! encodings and their similarity, forwarding and the power estimate.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cortex::{Cortex, CycleReport};
use crate::error::{HerError, Result};
use crate::sdr::Tag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EosEntry {
    pub cycle: u64,
    pub tag: Tag,
    pub speculative: bool,
}

/// Every published symbol, per rung and column.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EosLedger {
    pub entries: Vec<Vec<Vec<EosEntry>>>,
}

impl EosLedger {
    pub fn new(rung_widths: &[usize]) -> Self {
        EosLedger { entries: rung_widths.iter().map(|&w| vec![Vec::new(); w]).collect() }
    }

    pub fn record(&mut self, report: &CycleReport) {
        for (r, rung) in report.outputs.iter().enumerate() {
            for (j, p) in rung.iter().enumerate() {
                if let Some(p) = p {
                    self.entries[r][j].push(EosEntry { cycle: report.cycle, tag: p.tag, speculative: p.speculative });
                }
            }
        }
    }

    /// Non-speculative symbols of column (r, j) per tag, for each period
    /// `[start + k * len, start + (k + 1) * len)`.
    pub fn period_counts(&self, r: usize, j: usize, start: u64, len: u64, periods: usize) -> Vec<BTreeMap<Tag, u32>> {
        let mut out = vec![BTreeMap::new(); periods];
        for e in &self.entries[r][j] {
            if e.speculative || e.cycle < start {
                continue;
            }
            let k = ((e.cycle - start) / len) as usize;
            if k < periods {
                *out[k].entry(e.tag).or_insert(0) += 1;
            }
        }
        out
    }

    /// Real symbols emitted by a rung within `[from, to)`.
    pub fn real_count(&self, r: usize, from: u64, to: u64) -> usize {
        self.entries[r].iter().flatten().filter(|e| !e.speculative && e.cycle >= from && e.cycle < to).count()
    }

    /// Mean perfect-EOS ratio over the columns of rung `r`.
    pub fn rung_perfect_eos(&self, r: usize, start: u64, len: u64, periods: usize) -> Result<f64> {
        let n = self.entries[r].len();
        let mut sum = 0.0;
        for j in 0..n {
            sum += perfect_eos_ratio(&self.period_counts(r, j, start, len, periods))?;
        }
        Ok(sum / n as f64)
    }
}

/// Fraction of tags whose symbol count is the same in every consecutive
/// pair of periods. A column with no symbols at all scores 1.
pub fn perfect_eos_ratio(periods: &[BTreeMap<Tag, u32>]) -> Result<f64> {
    if periods.len() < 2 {
        return Err(HerError::invalid("need at least two periods"));
    }
    let mut tags: Vec<Tag> = periods.iter().flat_map(|p| p.keys().copied()).collect();
    tags.sort_unstable();
    tags.dedup();
    if tags.is_empty() {
        return Ok(1.0);
    }
    let perfect = tags
        .iter()
        .filter(|t| periods.windows(2).all(|w| w[0].get(t).copied().unwrap_or(0) == w[1].get(t).copied().unwrap_or(0)))
        .count();
    Ok(perfect as f64 / tags.len() as f64)
}

/// Per-rung fraction of columns whose L6a stayed Known (and, separately,
/// that had no slice allocated around them) for a whole window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityTracker {
    known: Vec<Vec<bool>>,
    no_slice: Vec<Vec<bool>>,
    cycles: u64,
}

impl StabilityTracker {
    pub fn new(rung_widths: &[usize]) -> Self {
        StabilityTracker {
            known: rung_widths.iter().map(|&w| vec![true; w]).collect(),
            no_slice: rung_widths.iter().map(|&w| vec![true; w]).collect(),
            cycles: 0,
        }
    }

    pub fn observe(&mut self, cortex: &Cortex) {
        for (r, rung) in cortex.rungs().iter().enumerate() {
            for (j, c) in rung.iter().enumerate() {
                self.known[r][j] &= c.l6a_state().is_known();
                self.no_slice[r][j] &= !cortex.column_has_slice(r, j);
            }
        }
        self.cycles += 1;
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn known_ratio(&self) -> Vec<f64> {
        self.known.iter().map(|r| fraction(r)).collect()
    }

    pub fn no_slice_ratio(&self) -> Vec<f64> {
        self.no_slice.iter().map(|r| fraction(r)).collect()
    }
}

fn fraction(v: &[bool]) -> f64 {
    v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    /// Raw counts of each top-rung cell over the stream's symbols.
    TimeAgnostic,
    /// Counts divided by the number of cycles the stream was observed.
    RateVector,
}

/// Accumulates top-rung cell activity per stream id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingCollector {
    dims: usize,
    offsets: Vec<usize>,
    counts: BTreeMap<u32, Vec<f64>>,
    cycles: BTreeMap<u32, u64>,
}

impl EncodingCollector {
    pub fn new(top_symbol_widths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(top_symbol_widths.len());
        let mut acc = 0;
        for &w in top_symbol_widths {
            offsets.push(acc);
            acc += w;
        }
        EncodingCollector { dims: acc, offsets, counts: BTreeMap::new(), cycles: BTreeMap::new() }
    }

    pub fn for_cortex(cx: &Cortex) -> Self {
        let top = cx.rungs().last().expect("at least one rung");
        EncodingCollector::new(&top.iter().map(|c| c.symbol_width()).collect::<Vec<_>>())
    }

    /// `stream` is the stream id of the input seen this cycle.
    pub fn record(&mut self, report: &CycleReport, stream: Option<u32>) {
        if let Some(s) = stream {
            *self.cycles.entry(s).or_insert(0) += 1;
        }
        let top = report.outputs.last().expect("at least one rung");
        for (j, p) in top.iter().enumerate() {
            let Some(p) = p else { continue };
            if p.speculative {
                continue;
            }
            let v = self.counts.entry(p.tag.stream_id).or_insert_with(|| vec![0.0; self.dims]);
            for &i in p.sdr.active() {
                v[self.offsets[j] + i as usize] += 1.0;
            }
        }
    }

    pub fn streams(&self) -> Vec<u32> {
        self.counts.keys().copied().collect()
    }

    pub fn encoding(&self, stream: u32, mode: EncodingMode) -> Option<Vec<f64>> {
        let v = self.counts.get(&stream)?;
        Some(match mode {
            EncodingMode::TimeAgnostic => v.clone(),
            EncodingMode::RateVector => {
                let n = self.cycles.get(&stream).copied().unwrap_or(1).max(1) as f64;
                v.iter().map(|x| x / n).collect()
            }
        })
    }

    /// Pairwise cosine over the given streams (absent when either vector is zero).
    pub fn similarity(&self, streams: &[u32], mode: EncodingMode) -> Vec<Vec<Option<f64>>> {
        let vecs: Vec<Option<Vec<f64>>> = streams.iter().map(|&s| self.encoding(s, mode)).collect();
        vecs.iter()
            .map(|a| vecs.iter().map(|b| match (a, b) { (Some(a), Some(b)) => cosine(a, b), _ => None }).collect())
            .collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between two similarity matrices, absent entries read as 0.
pub fn matrix_similarity(a: &[Vec<Option<f64>>], b: &[Vec<Option<f64>>]) -> Option<f64> {
    let flat = |m: &[Vec<Option<f64>>]| m.iter().flatten().map(|x| x.unwrap_or(0.0)).collect::<Vec<f64>>();
    cosine(&flat(a), &flat(b))
}

/// Angle in degrees between two encodings.
pub fn drift_degrees(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // half-angle form; acos loses precision near 0 and 180
    let (mut d, mut s) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    Some((2.0 * d.sqrt().atan2(s.sqrt())).to_degrees())
}

/// `p0 * n * sum_{i<n} a^i`.
pub fn power_estimate(p0: f64, n: u32, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(HerError::invalid("reduction factor must be in (0, 1)"));
    }
    let series: f64 = (0..n).map(|i| a.powi(i as i32)).sum();
    Ok(p0 * n as f64 * series)
}

/// Forwarded share of the symbols that reached the top rung.
pub fn forwarding_ratio(cx: &Cortex) -> Option<f64> {
    let n = cx.counters().len();
    if n < 2 {
        return None;
    }
    let c = &cx.counters()[n - 2];
    let total = c.real_symbols + c.forwarded_symbols;
    (total > 0).then(|| c.forwarded_symbols as f64 / total as f64)
}

pub fn write_eos_csv(mut out: impl Write, ledger: &EosLedger) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rung", "column", "cycle", "stream_id", "offset", "speculative"]).map_err(csv_err)?;
    for (r, rung) in ledger.entries.iter().enumerate() {
        for (j, col) in rung.iter().enumerate() {
            for e in col {
                w.write_record([
                    (r + 1).to_string(),
                    j.to_string(),
                    e.cycle.to_string(),
                    e.tag.stream_id.to_string(),
                    e.tag.offset.to_string(),
                    e.speculative.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    out.write_all(&w.into_inner().map_err(|e| HerError::Io(e.into_error()))?)?;
    Ok(())
}

/// Header and one row per rung and layer.
pub fn load_rows(cx: &Cortex) -> Vec<[String; 4]> {
    let mut rows = Vec::new();
    for (r, rung) in cx.rungs().iter().enumerate() {
        let mut tot = [0usize; 6];
        for c in rung {
            let l = c.load();
            for (t, v) in tot.iter_mut().zip([l.l23, l.l6a, l.l6b, l.l5, l.l4_proximal, l.l1_proximal]) {
                *t += v;
            }
        }
        for (name, v) in ["l23", "l6a", "l6b", "l5", "l4_proximal", "l1_proximal"].iter().zip(tot) {
            rows.push([cx.cycle().to_string(), (r + 1).to_string(), name.to_string(), v.to_string()]);
        }
    }
    rows.push([cx.cycle().to_string(), "ca3".into(), "distal".into(), cx.slice_load().to_string()]);
    rows
}

pub fn write_rows(mut out: impl Write, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    out.write_all(&w.into_inner().map_err(|e| HerError::Io(e.into_error()))?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> HerError {
    HerError::Io(std::io::Error::other(e))
}
