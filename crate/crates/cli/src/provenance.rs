//! Per-stage provenance records: what ran, with which configuration, on which inputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    pub tool_version: String,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(stage: &str, cfg: &RunConfig) -> Self {
        Self {
            stage: stage.into(),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Writes `provenance_<stage>.json` and the merged configuration next to it.
    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = dir.join(format!("provenance_{}.json", self.stage));
        std::fs::write(&p, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", p.display()))?;
        let c = dir.join(format!("config_{}.json", self.stage));
        std::fs::write(&c, cfg.to_json()).with_context(|| format!("writing {}", c.display()))?;
        Ok(p)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}
