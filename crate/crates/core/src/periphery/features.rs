//! Feature matrix input: one frame of band energies per line.

use std::io::BufRead;

use crate::error::{HerError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub bands: usize,
    pub frame_ms: u32,
    pub frames: Vec<Vec<f64>>,
}

/// Parses `bands=<n> frame_ms=<ms>` followed by comma-separated rows.
pub fn read_features(reader: impl BufRead) -> Result<FeatureMatrix> {
    let mut lines = reader.lines().enumerate();
    let (bands, frame_ms) = loop {
        let Some((n, line)) = lines.next() else {
            return Err(HerError::Parse("feature file has no header".into()));
        };
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut bands = None;
        let mut ms = None;
        for kv in line.split_whitespace() {
            match kv.split_once('=') {
                Some(("bands", v)) => bands = v.parse::<usize>().ok(),
                Some(("frame_ms", v)) => ms = v.parse::<u32>().ok(),
                _ => return Err(HerError::Parse(format!("line {}: bad header field {kv:?}", n + 1))),
            }
        }
        match (bands, ms) {
            (Some(b), Some(m)) if b > 0 && m > 0 => break (b, m),
            _ => return Err(HerError::Parse(format!("line {}: header needs bands=<n> frame_ms=<ms>", n + 1))),
        }
    };
    let mut frames = Vec::new();
    for (n, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| HerError::Parse(format!("line {}: {e}", n + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != bands {
            return Err(HerError::Parse(format!("line {}: {} values for {bands} bands", n + 1, row.len())));
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(HerError::Parse(format!("line {}: energies must be finite and non-negative", n + 1)));
        }
        frames.push(row);
    }
    Ok(FeatureMatrix { bands, frame_ms, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let text = "# energies\nbands=3 frame_ms=1\n0.1,0.2,0.3\n\n1,2,3\n";
        let m = read_features(text.as_bytes()).unwrap();
        assert_eq!((m.bands, m.frame_ms), (3, 1));
        assert_eq!(m.frames, vec![vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0]]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_features("".as_bytes()).is_err());
        assert!(read_features("bands=2\n".as_bytes()).is_err());
        assert!(read_features("bands=2 frame_ms=1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_features("bands=2 frame_ms=1\n1,x\n".as_bytes()).is_err());
        assert!(read_features("bands=2 frame_ms=1\n1,-2\n".as_bytes()).is_err());
    }
}
