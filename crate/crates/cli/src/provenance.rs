//! Output files stamped with the configuration hash, seed and version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed for a named stage, derived from the master seed.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub master_seed: Option<u64>,
    pub stage_seed: Option<u64>,
}

/// Writes stamped artifacts into one directory and remembers their digests.
#[derive(Debug)]
pub struct OutDir {
    pub root: PathBuf,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    /// File name to SHA-256 of its contents.
    pub written: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(root: &Path, config_hash: String, master_seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            config_hash,
            master_seed,
            written: BTreeMap::new(),
        })
    }

    pub fn provenance(&self, stage_seed: Option<u64>) -> Provenance {
        Provenance {
            version: VERSION.to_string(),
            config_sha256: self.config_hash.clone(),
            master_seed: self.master_seed,
            stage_seed,
        }
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Delimited text preceded by `#` provenance lines.
    pub fn csv(&mut self, name: &str, seed: Option<u64>, body: &[u8]) -> Result<PathBuf> {
        let p = self.provenance(seed);
        let mut out = format!(
            "# dyncop {}\n# config-sha256 {}\n# seed {}\n",
            p.version,
            p.config_sha256,
            seed.map_or_else(|| "none".to_string(), |s| s.to_string())
        )
        .into_bytes();
        out.extend_from_slice(body);
        self.put(name, &out)
    }

    /// JSON object `{ "provenance": ..., "data": ... }`.
    pub fn json<T: Serialize>(
        &mut self,
        name: &str,
        seed: Option<u64>,
        data: &T,
    ) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            provenance: Provenance,
            data: &'a T,
        }
        let w = Wrapped {
            provenance: self.provenance(seed),
            data,
        };
        let mut s = serde_json::to_vec_pretty(&w)?;
        s.push(b'\n');
        self.put(name, &s)
    }

    /// Plain text table with provenance lines.
    pub fn text(&mut self, name: &str, seed: Option<u64>, body: &str) -> Result<PathBuf> {
        self.csv(name, seed, body.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_stable_and_distinct() {
        assert_eq!(stage_seed(7, "gof"), stage_seed(7, "gof"));
        assert_ne!(stage_seed(7, "gof"), stage_seed(7, "bootstrap"));
        assert_ne!(stage_seed(7, "gof"), stage_seed(8, "gof"));
    }
}
