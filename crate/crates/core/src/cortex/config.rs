use serde::{Deserialize, Serialize};

use crate::column::ColumnConfig;
use crate::error::{HerError, Result};
use crate::hippocampus::SliceConfig;
use crate::thalamus::{AttentionMode, MgnConfig};

/// Which successor prediction L5 is matched against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchPartner {
    L6a,
    L6b,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CortexConfig {
    pub master_seed: u64,
    /// Columns per rung, bottom first.
    pub rung_widths: Vec<usize>,
    /// Successors per predecessor output, per rung (1 on rung 1).
    pub scale_out: Vec<usize>,
    /// Lateral inputs per column, per rung (0 on rung 1).
    pub lateral_width: Vec<usize>,
    /// Offsets of lateral sources in the rung below, with wraparound.
    pub lateral_offsets: Vec<usize>,
    /// Width and typical activity of each encoded input flow.
    pub input_width: usize,
    pub input_active: usize,
    pub column: ColumnConfig,
    /// Optional per-rung column settings; overrides `column` when present.
    pub rung_columns: Vec<ColumnConfig>,
    pub ca3_group_size: usize,
    /// Group offset added per rung boundary.
    pub ca3_shift: usize,
    pub slice: SliceConfig,
    pub supervised_eos: bool,
    pub attention: AttentionMode,
    pub swr: bool,
    /// Let an allocated slice above enable L4, L1 and L6b learning even
    /// without a slice below.
    pub l6b_above_override: bool,
    pub match_partner: MatchPartner,
    /// Identical forwards allowed in a row.
    pub forward_limit: u32,
    /// Most forwarded symbols a column may have ahead of its real input.
    pub max_lookahead: u32,
    pub mgn: MgnConfig,
}

impl Default for CortexConfig {
    fn default() -> Self {
        CortexConfig {
            master_seed: 1,
            rung_widths: vec![4, 4],
            scale_out: vec![1, 1],
            lateral_width: vec![0, 1],
            lateral_offsets: vec![1],
            input_width: 256,
            input_active: 8,
            column: ColumnConfig::default(),
            rung_columns: Vec::new(),
            ca3_group_size: 2,
            ca3_shift: 1,
            slice: SliceConfig::default(),
            supervised_eos: false,
            attention: AttentionMode::Off,
            swr: true,
            l6b_above_override: true,
            match_partner: MatchPartner::L6a,
            forward_limit: 3,
            max_lookahead: 16,
            mgn: MgnConfig::default(),
        }
    }
}

impl CortexConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CortexConfig = toml::from_str(text).map_err(|e| HerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HerError::Config(e.to_string()))
    }

    pub fn rungs(&self) -> usize {
        self.rung_widths.len()
    }

    /// Column settings for rung `r`, with the module count implied by the
    /// lateral width.
    pub fn column_for(&self, r: usize) -> ColumnConfig {
        let mut c = self.rung_columns.get(r).cloned().unwrap_or_else(|| self.column.clone());
        c.n_modules = 1 + self.lateral_width[r];
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HerError::Config(m));
        let n = self.rung_widths.len();
        if n == 0 {
            return bad("rung_widths must not be empty".into());
        }
        if self.scale_out.len() != n || self.lateral_width.len() != n {
            return bad("scale_out and lateral_width need one entry per rung".into());
        }
        if !self.rung_columns.is_empty() && self.rung_columns.len() != n {
            return bad("rung_columns needs one entry per rung or none".into());
        }
        if self.rung_widths.iter().any(|&w| w == 0) || self.scale_out.iter().any(|&s| s == 0) {
            return bad("rung widths and scale-out must be >= 1".into());
        }
        if self.scale_out[0] != 1 || self.lateral_width[0] != 0 {
            return bad("rung 1 has no scale-out and no laterals".into());
        }
        for r in 1..n {
            if self.rung_widths[r] != self.rung_widths[r - 1] * self.scale_out[r] {
                return bad(format!("rung {} width must be rung {} width times its scale-out", r + 1, r));
            }
            if self.lateral_width[r] > self.lateral_offsets.len() {
                return bad(format!("rung {} needs {} lateral offsets", r + 1, self.lateral_width[r]));
            }
            for &o in &self.lateral_offsets[..self.lateral_width[r]] {
                if o == 0 || o >= self.rung_widths[r - 1] {
                    return bad(format!("lateral offset {o} must be in 1..{}", self.rung_widths[r - 1]));
                }
            }
        }
        if self.ca3_group_size == 0 {
            return bad("ca3_group_size must be >= 1".into());
        }
        if self.input_width == 0 || self.input_active == 0 || self.input_active > self.input_width {
            return bad("bad input flow shape".into());
        }
        if self.forward_limit == 0 || self.max_lookahead == 0 {
            return bad("forward_limit and max_lookahead must be >= 1".into());
        }
        for r in 0..n {
            self.column_for(r).validate()?;
        }
        if self.slice.replicas == 0 {
            return bad("slice replicas must be >= 1".into());
        }
        self.slice.hysteresis.validate().map_err(|e| HerError::Config(e.to_string()))?;
        Ok(())
    }
}
