//! Synthetic symbolic streams: sentences of symbol ids rendered through a
//! fixed random alphabet per input flow.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::rng::RngStream;
use crate::sdr::{random_sdr, Sdr, Tag, TaggedSdr};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolAlphabet {
    pub symbols: Vec<Sdr>,
}

impl SymbolAlphabet {
    /// Random codes with pairwise overlap at most `max_overlap`.
    pub fn generate(size: usize, width: usize, active: usize, max_overlap: usize, rng: &mut RngStream) -> Result<Self> {
        let mut symbols: Vec<Sdr> = Vec::with_capacity(size);
        let mut tries = 0usize;
        while symbols.len() < size {
            tries += 1;
            if tries > 1000 * size.max(1) {
                return Err(HerError::Config(format!("cannot draw {size} symbols of {active}/{width} with overlap <= {max_overlap}")));
            }
            let s = random_sdr(width, active, rng)?;
            if symbols.iter().all(|o| o.overlap(&s).map(|v| v <= max_overlap).unwrap_or(false)) {
                symbols.push(s);
            }
        }
        Ok(SymbolAlphabet { symbols })
    }

    pub fn get(&self, id: u32) -> Result<&Sdr> {
        self.symbols.get(id as usize).ok_or(HerError::UnknownSymbol(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Sequential,
    /// A fresh permutation of the sentences on every pass.
    Shuffle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub seed: u64,
    pub flows: usize,
    pub width: usize,
    pub active: usize,
    pub alphabet_size: usize,
    pub max_overlap: usize,
    /// Consecutive cycles each symbol is held.
    pub frames: usize,
    pub sentences: Vec<Vec<u32>>,
    pub order: Order,
    pub repeats: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            seed: 7,
            flows: 4,
            width: 256,
            active: 8,
            alphabet_size: 16,
            max_overlap: 2,
            frames: 1,
            sentences: vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]],
            order: Order::Sequential,
            repeats: 1,
        }
    }
}

impl StreamSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: StreamSpec = toml::from_str(text).map_err(|e| HerError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flows == 0 || self.frames == 0 || self.sentences.is_empty() || self.sentences.iter().any(|s| s.is_empty()) {
            return Err(HerError::Config("need flows, frames and non-empty sentences".into()));
        }
        if self.active == 0 || self.active > self.width {
            return Err(HerError::Config("need 0 < active <= width".into()));
        }
        if let Some(&id) = self.sentences.iter().flatten().find(|&&id| id as usize >= self.alphabet_size) {
            return Err(HerError::UnknownSymbol(id));
        }
        Ok(())
    }

    /// `n` sentences of `len` ids drawn without immediate repeats.
    pub fn random_sentences(n: usize, len: usize, alphabet_size: usize, seed: u64) -> Vec<Vec<u32>> {
        let mut rng = RngStream::derive(seed, "sentences");
        (0..n)
            .map(|_| {
                let mut s: Vec<u32> = Vec::with_capacity(len);
                while s.len() < len {
                    let id = rng.below(alphabet_size) as u32;
                    if s.last() != Some(&id) {
                        s.push(id);
                    }
                }
                s
            })
            .collect()
    }

    /// `words` disjoint words of `word_len` consecutive symbol ids.
    pub fn lexicon(words: usize, word_len: usize) -> Vec<Vec<u32>> {
        (0..words).map(|w| (0..word_len).map(|i| (w * word_len + i) as u32).collect()).collect()
    }

    /// `n` sentences of `words` lexicon entries, no word directly repeated.
    /// The first `k` sentences do not depend on `n`.
    pub fn lexicon_sentences(n: usize, words: usize, lexicon: &[Vec<u32>], seed: u64) -> Vec<Vec<u32>> {
        let mut rng = RngStream::derive(seed, "lexicon-sentences");
        (0..n)
            .map(|_| {
                let mut s = Vec::new();
                let mut last = usize::MAX;
                for _ in 0..words {
                    let mut w = rng.below(lexicon.len());
                    while w == last && lexicon.len() > 1 {
                        w = rng.below(lexicon.len());
                    }
                    last = w;
                    s.extend_from_slice(&lexicon[w]);
                }
                s
            })
            .collect()
    }

    /// Cycles in one pass over every sentence.
    pub fn period_cycles(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum::<usize>() * self.frames
    }

    pub fn total_cycles(&self) -> usize {
        self.period_cycles() * self.repeats
    }
}

/// Deterministic iterator over cycles; each item holds one value per flow.
#[derive(Clone, Debug)]
pub struct SyntheticStream {
    spec: StreamSpec,
    alphabets: Vec<SymbolAlphabet>,
    order: Vec<usize>,
    rng: RngStream,
    pass: usize,
    sentence: usize,
    position: usize,
    frame: usize,
}

impl SyntheticStream {
    pub fn new(spec: StreamSpec) -> Result<Self> {
        spec.validate()?;
        let alphabets = (0..spec.flows)
            .map(|f| {
                let mut rng = RngStream::derive(spec.seed, &format!("alphabet/{f}"));
                SymbolAlphabet::generate(spec.alphabet_size, spec.width, spec.active, spec.max_overlap, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = SyntheticStream {
            order: (0..spec.sentences.len()).collect(),
            rng: RngStream::derive(spec.seed, "order"),
            spec,
            alphabets,
            pass: 0,
            sentence: 0,
            position: 0,
            frame: 0,
        };
        s.reorder();
        Ok(s)
    }

    fn reorder(&mut self) {
        self.order = (0..self.spec.sentences.len()).collect();
        if self.spec.order == Order::Shuffle {
            self.rng.shuffle(&mut self.order);
        }
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    pub fn alphabets(&self) -> &[SymbolAlphabet] {
        &self.alphabets
    }

    /// Sentence order of the current pass.
    pub fn current_order(&self) -> &[usize] {
        &self.order
    }

    pub fn pass(&self) -> usize {
        self.pass
    }
}

impl Iterator for SyntheticStream {
    type Item = Vec<TaggedSdr>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pass >= self.spec.repeats {
            return None;
        }
        let sid = self.order[self.sentence];
        let sentence = &self.spec.sentences[sid];
        let id = sentence[self.position];
        let tag = Tag { stream_id: sid as u32, offset: self.position as u32 };
        let item = self.alphabets.iter().map(|a| TaggedSdr::new(a.symbols[id as usize].clone(), tag)).collect();
        self.frame += 1;
        if self.frame == self.spec.frames {
            self.frame = 0;
            self.position += 1;
            if self.position == sentence.len() {
                self.position = 0;
                self.sentence += 1;
                if self.sentence == self.order.len() {
                    self.sentence = 0;
                    self.pass += 1;
                    self.reorder();
                }
            }
        }
        Some(item)
    }
}

/// Text stream file: a header, then one line per cycle with the tag and the
/// active indices of each flow separated by `|`.
pub fn write_stream(mut out: impl Write, width: usize, cycles: impl IntoIterator<Item = Vec<TaggedSdr>>) -> Result<usize> {
    let mut n = 0;
    let mut header_done = false;
    for cycle in cycles {
        if !header_done {
            writeln!(out, "her-stream v1 flows={} width={width}", cycle.len())?;
            header_done = true;
        }
        let tag = cycle.first().map(|x| x.tag).unwrap_or(Tag { stream_id: 0, offset: 0 });
        let flows: Vec<String> = cycle
            .iter()
            .map(|x| if x.sdr.is_empty() { "-".to_string() } else { x.sdr.active().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",") })
            .collect();
        writeln!(out, "{tag}\t{}", flows.join("|"))?;
        n += 1;
    }
    Ok(n)
}

pub fn read_stream(reader: impl BufRead) -> Result<(usize, Vec<Vec<TaggedSdr>>)> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| HerError::Parse("empty stream file".into()))??;
    let mut flows = None;
    let mut width = None;
    let mut fields = header.split_whitespace();
    if (fields.next(), fields.next()) != (Some("her-stream"), Some("v1")) {
        return Err(HerError::Parse("not a her-stream v1 file".into()));
    }
    for kv in fields {
        match kv.split_once('=') {
            Some(("flows", v)) => flows = v.parse::<usize>().ok(),
            Some(("width", v)) => width = v.parse::<usize>().ok(),
            _ => return Err(HerError::Parse(format!("bad header field {kv:?}"))),
        }
    }
    let (Some(flows), Some(width)) = (flows, width) else {
        return Err(HerError::Parse("header needs flows= and width=".into()));
    };
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| HerError::Parse(format!("line {}: {m}", n + 2));
        let (tag, rest) = line.split_once('\t').ok_or_else(|| err("missing tab"))?;
        let (s, o) = tag.split_once('/').ok_or_else(|| err("bad tag"))?;
        let tag = Tag { stream_id: s.parse().map_err(|_| err("bad stream id"))?, offset: o.parse().map_err(|_| err("bad offset"))? };
        let parts: Vec<&str> = rest.split('|').collect();
        if parts.len() != flows {
            return Err(err("wrong flow count"));
        }
        let cycle = parts
            .iter()
            .map(|p| {
                let idx: Vec<usize> = if *p == "-" {
                    Vec::new()
                } else {
                    p.split(',').map(|i| i.parse::<usize>().map_err(|_| err("bad index"))).collect::<Result<_>>()?
                };
                Ok(TaggedSdr::new(Sdr::new(width, idx)?, tag))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(cycle);
    }
    Ok((width, out))
}
