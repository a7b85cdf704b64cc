use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

/// One sample. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub role: Role,
    pub noisy_paths: Vec<String>,
    pub reference_path: Option<String>,
    /// Noise that produced a synthetic entry.
    pub noise_config: Option<NoiseConfig>,
    /// Seed of a synthetic entry's noise realization.
    pub seed: Option<u64>,
    /// Where the entry came from, e.g. `config/fov`.
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            entries,
        }
    }

    pub fn count(&self, role: Role) -> usize {
        self.entries.iter().filter(|e| e.role == role).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest schema_version {}",
                self.schema_version
            )));
        }
        let mut seeds = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.noisy_paths.is_empty() {
                return Err(Error::Data(format!("entry {i} has no noisy_paths")));
            }
            if e.role != Role::Train && e.reference_path.is_none() {
                return Err(Error::Data(format!("{:?} entry {i} has no reference_path", e.role)));
            }
            if let (Some(_), Some(seed)) = (&e.noise_config, e.seed) {
                if !seeds.insert(seed) {
                    return Err(Error::Data(format!("synthetic seed {seed} repeats at entry {i}")));
                }
            }
        }
        Ok(())
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        // serde_json::Value keeps object keys in a BTreeMap
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_canonical_json()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io("create temp manifest", e))?;
        tmp.write_all(text.as_bytes())
            .map_err(|e| Error::io("write temp manifest", e))?;
        tmp.persist(path)
            .map_err(|e| Error::io(format!("rename to {}", path.display()), e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_json(&text)
    }
}
