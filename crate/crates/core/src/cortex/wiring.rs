use serde::{Deserialize, Serialize};

use super::config::CortexConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// Encoded input flow feeding rung 1.
    Input(usize),
    /// Column of the rung below.
    Column(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnWiring {
    /// Module 0 source first, then laterals.
    pub sources: Vec<Source>,
    /// Slice between the rung below and this column.
    pub slice_below: Option<usize>,
    /// Slices fed by this column's output.
    pub slices_above: Vec<usize>,
    /// Columns of the rung above whose vertical source is this column.
    pub successors: Vec<usize>,
    /// Same-rung-above (column, module) pairs fed by this column.
    pub consumers: Vec<(usize, usize)>,
}

impl ColumnWiring {
    pub fn vertical(&self) -> Source {
        self.sources[0]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceWiring {
    /// Columns of the lower rung, in concatenation order.
    pub group: Vec<usize>,
    /// Scale-out copy this slice serves.
    pub copy: usize,
    /// Columns of the upper rung fed by the group through this copy.
    pub consumers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wiring {
    pub columns: Vec<Vec<ColumnWiring>>,
    /// Slices per boundary: `slices[r]` sits between rung r and r+1.
    pub slices: Vec<Vec<SliceWiring>>,
}

impl Wiring {
    /// Pure function of the configuration (assumed valid).
    pub fn build(cfg: &CortexConfig) -> Wiring {
        let n = cfg.rungs();
        let mut columns: Vec<Vec<ColumnWiring>> = Vec::with_capacity(n);
        for r in 0..n {
            let w = cfg.rung_widths[r];
            let rung = (0..w)
                .map(|j| {
                    let sources = if r == 0 {
                        vec![Source::Input(j)]
                    } else {
                        let fan = cfg.scale_out[r];
                        let below = cfg.rung_widths[r - 1];
                        let p = j / fan;
                        std::iter::once(Source::Column(p))
                            .chain(cfg.lateral_offsets[..cfg.lateral_width[r]].iter().map(|&o| Source::Column((p + o) % below)))
                            .collect()
                    };
                    ColumnWiring { sources, slice_below: None, slices_above: Vec::new(), successors: Vec::new(), consumers: Vec::new() }
                })
                .collect();
            columns.push(rung);
        }
        for r in 1..n {
            for j in 0..cfg.rung_widths[r] {
                for (m, s) in columns[r][j].sources.clone().into_iter().enumerate() {
                    if let Source::Column(p) = s {
                        if m == 0 {
                            columns[r - 1][p].successors.push(j);
                        }
                        columns[r - 1][p].consumers.push((j, m));
                    }
                }
            }
        }
        let mut slices = Vec::with_capacity(n.saturating_sub(1));
        for r in 0..n.saturating_sub(1) {
            let w = cfg.rung_widths[r];
            let g = cfg.ca3_group_size.min(w);
            let fan = cfg.scale_out[r + 1];
            let shift = cfg.ca3_shift * r;
            let groups = w.div_ceil(g);
            let mut boundary = Vec::new();
            for k in 0..groups {
                let group: Vec<usize> = (0..g).map(|i| (k * g + i + shift) % w).collect();
                for copy in 0..fan {
                    let id = boundary.len();
                    let consumers: Vec<usize> = (0..cfg.rung_widths[r + 1])
                        .filter(|&j| j % fan == copy && columns[r + 1][j].slice_below.is_none())
                        .filter(|&j| matches!(columns[r + 1][j].vertical(), Source::Column(p) if group.contains(&p)))
                        .collect();
                    for &j in &consumers {
                        columns[r + 1][j].slice_below = Some(id);
                    }
                    for &c in &group {
                        if !columns[r][c].slices_above.contains(&id) {
                            columns[r][c].slices_above.push(id);
                        }
                    }
                    boundary.push(SliceWiring { group: group.clone(), copy, consumers });
                }
            }
            slices.push(boundary);
        }
        Wiring { columns, slices }
    }

    pub fn rungs(&self) -> usize {
        self.columns.len()
    }

    pub fn total_columns(&self) -> usize {
        self.columns.iter().map(|r| r.len()).sum()
    }

    /// Human-readable table, one line per column and slice.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for (r, rung) in self.columns.iter().enumerate() {
            for (j, c) in rung.iter().enumerate() {
                let src: Vec<String> = c
                    .sources
                    .iter()
                    .map(|s| match s {
                        Source::Input(i) => format!("in{i}"),
                        Source::Column(p) => format!("r{}c{p}", r),
                    })
                    .collect();
                out.push_str(&format!(
                    "r{}c{j} <- [{}] below={:?} above={:?} succ={:?}\n",
                    r + 1,
                    src.join(","),
                    c.slice_below,
                    c.slices_above,
                    c.successors
                ));
            }
        }
        for (r, b) in self.slices.iter().enumerate() {
            for (k, s) in b.iter().enumerate() {
                out.push_str(&format!("s{}.{k} group={:?} copy={} consumers={:?}\n", r + 1, s.group, s.copy, s.consumers));
            }
        }
        out
    }
}
