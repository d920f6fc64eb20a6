//! Fixed sparsifying projection of band codewords into input flows.

use serde::{Deserialize, Serialize};

use crate::error::{HerError, Result};
use crate::projector::{Projector, ProjectorConfig};
use crate::rng::RngStream;
use crate::sdr::Sdr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcnConfig {
    pub flow_width: usize,
    /// Fraction of outputs active after k-WTA.
    pub sparsity: f64,
    /// Fraction of the flow's inputs each output sees.
    pub receptive_field: f64,
}

impl Default for DcnConfig {
    fn default() -> Self {
        DcnConfig { flow_width: 256, sparsity: 0.02, receptive_field: 0.10 }
    }
}

impl DcnConfig {
    pub fn k(&self) -> usize {
        ((self.sparsity * self.flow_width as f64).round() as usize).max(1)
    }
}

/// Non-plastic projector with full connectivity inside each receptive field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dcn {
    proj: Projector,
}

impl Dcn {
    pub fn new(cfg: &DcnConfig, in_width: usize, rng: RngStream) -> Result<Self> {
        if !(cfg.sparsity > 0.0 && cfg.sparsity < 1.0) {
            return Err(HerError::Config("DCN sparsity must be in (0, 1)".into()));
        }
        let pc = ProjectorConfig {
            potential_fraction: cfg.receptive_field,
            connected_fraction: 1.0,
            plastic: false,
            ..ProjectorConfig::new(in_width, cfg.flow_width, cfg.k())
        };
        Ok(Dcn { proj: Projector::new(pc, rng)? })
    }

    pub fn project(&self, input: &Sdr) -> Result<Sdr> {
        self.proj.project(input, None)
    }

    pub fn in_width(&self) -> usize {
        self.proj.config().in_width
    }
}
