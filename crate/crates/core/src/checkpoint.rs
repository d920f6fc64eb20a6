//! Checkpoint files: a text manifest followed by length-prefixed binary
//! records.
//!
//! ```text
//! her-checkpoint 1
//! config <len> <sha256>
//! cortex <len> <sha256>
//! <name> <len> <sha256>      (optional extra records)
//! end
//! <u64 le len><bytes> ...    (same order as the manifest)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cortex::{Cortex, CortexConfig};
use crate::error::{HerError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "her-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cortex: Cortex,
    /// Named opaque records, e.g. a run's metric state.
    pub extras: Vec<(String, Vec<u8>)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn bad(msg: impl Into<String>) -> HerError {
    HerError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(cortex: Cortex) -> Self {
        Checkpoint { cortex, extras: Vec::new() }
    }

    pub fn extra(&self, name: &str) -> Option<&[u8]> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut records: Vec<(&str, Vec<u8>)> = vec![
            ("config", self.cortex.config().to_toml()?.into_bytes()),
            ("cortex", bincode::serialize(&self.cortex).map_err(|e| bad(e.to_string()))?),
        ];
        for (name, b) in &self.extras {
            if name.is_empty() || name.contains(char::is_whitespace) || name == "end" {
                return Err(bad(format!("invalid record name {name:?}")));
            }
            records.push((name, b.clone()));
        }
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        for (name, b) in &records {
            out.push_str(&format!("{name} {} {}\n", b.len(), digest(b)));
        }
        out.push_str("end\n");
        let mut out = out.into_bytes();
        for (_, b) in &records {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(b);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line = || -> Result<&str> {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated manifest"))?;
            let s = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("manifest is not text"))?;
            pos += end + 1;
            Ok(s)
        };
        let head = line()?;
        let version = head.strip_prefix(MAGIC).map(str::trim).ok_or_else(|| bad("not a checkpoint file"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(HerError::VersionMismatch { expected: FORMAT_VERSION.to_string(), found: version.to_string() });
        }
        let mut manifest = Vec::new();
        loop {
            let l = line()?;
            if l == "end" {
                break;
            }
            let f: Vec<&str> = l.split(' ').collect();
            if f.len() != 3 {
                return Err(bad(format!("bad manifest line {l:?}")));
            }
            let len: usize = f[1].parse().map_err(|_| bad("bad record length"))?;
            manifest.push((f[0].to_string(), len, f[2].to_string()));
        }
        let mut records = Vec::new();
        for (name, len, sum) in manifest {
            let hdr = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated record"))?;
            let n = u64::from_le_bytes(hdr.try_into().expect("8 bytes")) as usize;
            if n != len {
                return Err(bad(format!("record {name}: length {n} disagrees with manifest {len}")));
            }
            pos += 8;
            let b = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated record"))?;
            if digest(b) != sum {
                return Err(bad(format!("record {name}: checksum mismatch")));
            }
            pos += n;
            records.push((name, b.to_vec()));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last record"));
        }
        let mut it = records.into_iter();
        let (cfg_name, cfg) = it.next().ok_or_else(|| bad("missing config record"))?;
        let (cx_name, cx) = it.next().ok_or_else(|| bad("missing cortex record"))?;
        if cfg_name != "config" || cx_name != "cortex" {
            return Err(bad("records out of order"));
        }
        let cfg = CortexConfig::from_toml(std::str::from_utf8(&cfg).map_err(|_| bad("config is not text"))?)?;
        let cortex: Cortex = bincode::deserialize(&cx).map_err(|e| bad(e.to_string()))?;
        if cortex.config() != &cfg {
            return Err(bad("embedded config disagrees with cortex state"));
        }
        Ok(Checkpoint { cortex, extras: it.collect() })
    }

    /// Writes through a temporary sibling so an existing file is replaced
    /// only once the new one is complete.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// Fails unless `cfg` is the configuration the checkpoint was built with.
    pub fn check_config(&self, cfg: &CortexConfig) -> Result<()> {
        if self.cortex.config() == cfg {
            return Ok(());
        }
        let a = digest(self.cortex.config().to_toml()?.as_bytes());
        let b = digest(cfg.to_toml()?.as_bytes());
        Err(HerError::VersionMismatch { expected: b[..16].to_string(), found: a[..16].to_string() })
    }
}
