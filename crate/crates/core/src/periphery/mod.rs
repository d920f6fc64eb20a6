//! Input front ends: an auditory chain (gain control, dual-rate coding,
//! sparsifying projection) for feature files, and synthetic symbol streams.

mod dcn;
mod features;
mod mocr;
mod synthetic;

pub use dcn::{Dcn, DcnConfig};
pub use features::{read_features, FeatureMatrix};
pub use mocr::{binarize_and_encode, mocr_update, DrCode, MocrConfig, MocrState, DR_ONES, DR_WIDTH, DR_ZEROS};
pub use synthetic::{read_stream, write_stream, Order, StreamSpec, SymbolAlphabet, SyntheticStream};

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::rng::RngStream;
use crate::sdr::{Sdr, Tag, TaggedSdr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub bands: usize,
    pub flows: usize,
    /// Starting threshold for every band.
    pub initial_threshold: f64,
    pub mocr: MocrConfig,
    pub dcn: DcnConfig,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig { bands: 12, flows: 4, initial_threshold: 1.0, mocr: MocrConfig::default(), dcn: DcnConfig::default() }
    }
}

/// Bands are split into `flows` contiguous groups; each group's codewords
/// are concatenated and projected into one flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    cfg: FrontEndConfig,
    mocr: Vec<MocrState>,
    codes: Vec<DrCode>,
    dcn: Vec<Dcn>,
    frame: u64,
}

impl FrontEnd {
    pub fn new(cfg: FrontEndConfig, master_seed: u64) -> Result<Self> {
        cfg.mocr.validate()?;
        if cfg.flows == 0 || cfg.bands == 0 || cfg.bands % cfg.flows != 0 {
            return Err(HerError::Config("bands must split evenly into flows".into()));
        }
        let act0 = (cfg.mocr.act_tup + cfg.mocr.act_tdown) / 2.0;
        let mocr = vec![MocrState::new(cfg.initial_threshold, act0)?; cfg.bands];
        let mut rng = RngStream::derive(master_seed, "frontend/dr");
        let codes = (0..cfg.bands).map(|_| DrCode::generate(&mut rng)).collect::<Result<Vec<_>>>()?;
        let per = cfg.bands / cfg.flows;
        let dcn = (0..cfg.flows)
            .map(|f| Dcn::new(&cfg.dcn, per * DR_WIDTH, RngStream::derive(master_seed, &format!("frontend/dcn{f}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrontEnd { cfg, mocr, codes, dcn, frame: 0 })
    }

    pub fn config(&self) -> &FrontEndConfig {
        &self.cfg
    }

    pub fn mocr_states(&self) -> &[MocrState] {
        &self.mocr
    }

    pub fn flow_width(&self) -> usize {
        self.cfg.dcn.flow_width
    }

    pub fn flow_active(&self) -> usize {
        self.cfg.dcn.k()
    }

    /// Encodes one frame; every flow is tagged with stream 0 and the frame index.
    pub fn encode(&mut self, energies: &[f64]) -> Result<Vec<TaggedSdr>> {
        let words = binarize_and_encode(energies, &mut self.mocr, &self.codes, &self.cfg.mocr)?;
        let per = self.cfg.bands / self.cfg.flows;
        let tag = Tag { stream_id: 0, offset: self.frame as u32 };
        self.frame += 1;
        words
            .chunks(per)
            .zip(&self.dcn)
            .map(|(group, d)| {
                let refs: Vec<&Sdr> = group.iter().collect();
                Ok(TaggedSdr::new(d.project(&Sdr::concat(&refs)?)?, tag))
            })
            .collect()
    }
}
