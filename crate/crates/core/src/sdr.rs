//! Sparse distributed representations.
//!
//! An [`Sdr`] is a fixed width plus a sorted list of active bit indices.
//! Everything that flows between engine components is one of these.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::rng::RngStream;

/// Largest supported width.
pub const MAX_WIDTH: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sdr {
    width: u32,
    active: Vec<u32>,
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 || width > MAX_WIDTH {
        return Err(HerError::UnsupportedWidth(width));
    }
    Ok(())
}

impl Sdr {
    /// Builds an Sdr from indices in any order; duplicates collapse.
    pub fn new(width: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        check_width(width)?;
        let mut active = Vec::new();
        for i in indices {
            if i >= width {
                return Err(HerError::IndexOutOfRange { index: i, width });
            }
            active.push(i as u32);
        }
        active.sort_unstable();
        active.dedup();
        Ok(Sdr { width: width as u32, active })
    }

    pub fn empty(width: usize) -> Result<Self> {
        check_width(width)?;
        Ok(Sdr { width: width as u32, active: Vec::new() })
    }

    /// Internal constructor for already canonical data.
    pub(crate) fn from_sorted(width: usize, active: Vec<u32>) -> Self {
        debug_assert!(active.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(active.last().map_or(true, |&i| (i as usize) < width));
        Sdr { width: width as u32, active }
    }

    pub fn from_dense(bits: &[bool]) -> Result<Self> {
        Self::new(bits.len(), bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active.binary_search(&(i as u32)).is_ok()
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut v = vec![false; self.width()];
        for &i in &self.active {
            v[i as usize] = true;
        }
        v
    }

    fn same_width(&self, other: &Sdr) -> Result<()> {
        if self.width != other.width {
            return Err(HerError::WidthMismatch { expected: self.width(), got: other.width() });
        }
        Ok(())
    }

    /// Number of shared active bits.
    pub fn overlap(&self, other: &Sdr) -> Result<usize> {
        self.same_width(other)?;
        Ok(sorted_intersection_len(&self.active, &other.active))
    }

    pub fn intersection(&self, other: &Sdr) -> Result<Sdr> {
        self.same_width(other)?;
        let (a, b) = (&self.active, &other.active);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(Sdr::from_sorted(self.width(), out))
    }

    /// Union of equal-width Sdrs. An empty slice has no width and is an error.
    pub fn union_all(xs: &[&Sdr]) -> Result<Sdr> {
        let first = xs.first().ok_or_else(|| HerError::EmptyInput("union of nothing".into()))?;
        let mut out: Vec<u32> = Vec::new();
        for x in xs {
            first.same_width(x)?;
            out.extend_from_slice(&x.active);
        }
        out.sort_unstable();
        out.dedup();
        Ok(Sdr::from_sorted(first.width(), out))
    }

    /// Concatenation: widths add, indices shift by the running offset.
    pub fn concat(xs: &[&Sdr]) -> Result<Sdr> {
        let mut width = 0usize;
        let mut out = Vec::new();
        for x in xs {
            out.extend(x.active.iter().map(|&i| i + width as u32));
            width += x.width();
        }
        check_width(width)?;
        Ok(Sdr::from_sorted(width, out))
    }

    /// Bits in `[offset, offset + width)`, re-based to zero.
    pub fn slice(&self, offset: usize, width: usize) -> Result<Sdr> {
        if offset + width > self.width() {
            return Err(HerError::IndexOutOfRange { index: offset + width, width: self.width() });
        }
        let lo = offset as u32;
        let hi = (offset + width) as u32;
        let out = self.active.iter().filter(|&&i| i >= lo && i < hi).map(|&i| i - lo).collect();
        Ok(Sdr::from_sorted(width, out))
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

impl fmt::Display for Sdr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.width)?;
        for (k, i) in self.active.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

impl FromStr for Sdr {
    type Err = HerError;

    fn from_str(s: &str) -> Result<Self> {
        let (w, rest) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| HerError::Parse(format!("missing ':' in sdr text {s:?}")))?;
        let width: usize = w.parse().map_err(|_| HerError::Parse(format!("bad sdr width {w:?}")))?;
        let mut idx = Vec::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            idx.push(part.parse::<usize>().map_err(|_| HerError::Parse(format!("bad sdr index {part:?}")))?);
        }
        Sdr::new(width, idx)
    }
}

/// Uniform sample of `n_active` distinct bits.
pub fn random_sdr(width: usize, n_active: usize, rng: &mut RngStream) -> Result<Sdr> {
    check_width(width)?;
    if n_active > width {
        return Err(HerError::invalid(format!("n_active {n_active} exceeds width {width}")));
    }
    Sdr::new(width, rng.sample_indices(width, n_active))
}

/// Bit multiplicities from several overlapping predictions.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PredictionMultiset {
    width: u32,
    /// (bit, multiplicity >= 1), sorted by bit.
    counts: Vec<(u32, u32)>,
}

impl PredictionMultiset {
    pub fn empty(width: usize) -> Self {
        PredictionMultiset { width: width as u32, counts: Vec::new() }
    }

    /// From (bit, count) pairs; zero counts are dropped, repeats add up.
    pub fn from_counts(width: usize, pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        check_width(width)?;
        let mut dense = std::collections::BTreeMap::new();
        for (i, c) in pairs {
            if i >= width {
                return Err(HerError::IndexOutOfRange { index: i, width });
            }
            if c > 0 {
                *dense.entry(i as u32).or_insert(0u32) += c;
            }
        }
        Ok(PredictionMultiset { width: width as u32, counts: dense.into_iter().collect() })
    }

    pub fn from_sdr(sdr: &Sdr) -> Self {
        PredictionMultiset { width: sdr.width, counts: sdr.active.iter().map(|&i| (i, 1)).collect() }
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, i: usize) -> u32 {
        self.counts
            .binary_search_by_key(&(i as u32), |&(b, _)| b)
            .map(|k| self.counts[k].1)
            .unwrap_or(0)
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().map(|&(_, c)| c).max().unwrap_or(0)
    }

    pub fn support(&self) -> Sdr {
        Sdr::from_sorted(self.width(), self.counts.iter().map(|&(i, _)| i).collect())
    }

    /// Sum of two multisets of equal width.
    pub fn add(&self, other: &PredictionMultiset) -> Result<PredictionMultiset> {
        if self.width != other.width {
            return Err(HerError::WidthMismatch { expected: self.width(), got: other.width() });
        }
        Self::from_counts(
            self.width(),
            self.counts.iter().chain(other.counts.iter()).map(|&(i, c)| (i as usize, c)),
        )
    }

    /// Bits in `[offset, offset + width)`, re-based to zero.
    pub fn slice(&self, offset: usize, width: usize) -> Result<PredictionMultiset> {
        if offset + width > self.width() {
            return Err(HerError::IndexOutOfRange { index: offset + width, width: self.width() });
        }
        let lo = offset as u32;
        let hi = (offset + width) as u32;
        let counts = self.counts.iter().filter(|(i, _)| *i >= lo && *i < hi).map(|&(i, c)| (i - lo, c)).collect();
        Ok(PredictionMultiset { width: width as u32, counts })
    }
}

/// Counts how many of `preds` contain each bit.
pub fn multiset_merge(width: usize, preds: &[&Sdr]) -> Result<PredictionMultiset> {
    let mut pairs = Vec::new();
    for p in preds {
        if p.width() != width {
            return Err(HerError::WidthMismatch { expected: width, got: p.width() });
        }
        pairs.extend(p.active.iter().map(|&i| (i as usize, 1)));
    }
    PredictionMultiset::from_counts(width, pairs)
}

/// Origin of an input: stream (sentence) id and offset inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub stream_id: u32,
    pub offset: u32,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.stream_id, self.offset)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSdr {
    pub sdr: Sdr,
    pub tag: Tag,
}

impl TaggedSdr {
    pub fn new(sdr: Sdr, tag: Tag) -> Self {
        TaggedSdr { sdr, tag }
    }
}
