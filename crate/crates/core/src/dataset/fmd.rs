//! Ingestion of FMD-style trees:
//!
//! ```text
//! root/<configuration>/[raw/]<fov>/<capture>.png
//! ```
//!
//! `<fov>` directories are named `1` to `20`. Each FOV's reference is the
//! mean of all its captures. FOVs 1 to 18 contribute one randomly chosen
//! capture each, split between train and val; FOVs 19 and 20 contribute
//! `test_captures` randomly chosen captures each to test.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::io::{build_reference, list_images, load_image, save_image};
use super::manifest::{Manifest, ManifestEntry, Role};
use crate::error::{Error, Result};
use crate::seed;

const TRAIN_FOVS: std::ops::RangeInclusive<u32> = 1..=18;
const TEST_FOVS: std::ops::RangeInclusive<u32> = 19..=20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmdOptions {
    /// Fraction of FOVs 1 to 18 (per configuration) assigned to val.
    pub val_fraction: f64,
    pub test_captures: usize,
    pub seed: u64,
}

impl Default for FmdOptions {
    fn default() -> Self {
        FmdOptions {
            val_fraction: 0.2,
            test_captures: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub manifest: Manifest,
    /// Missing or unusable FOVs; these do not fail the ingestion.
    pub warnings: Vec<String>,
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(format!("read dir {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry
            .map_err(|e| Error::io(format!("read dir {}", dir.display()), e))?
            .path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn name_of(p: &Path) -> String {
    p.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

/// Builds references and a manifest for the tree at `root`, writing both
/// into `out_dir`. Capture paths in the manifest are absolute; reference
/// paths are relative to `out_dir`.
pub fn ingest_fmd_layout(root: &Path, out_dir: &Path, options: &FmdOptions) -> Result<IngestReport> {
    if !(0.0..=1.0).contains(&options.val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must be in [0, 1], got {}",
            options.val_fraction
        )));
    }
    let root = root
        .canonicalize()
        .map_err(|e| Error::io(format!("resolve {}", root.display()), e))?;
    let configs = subdirs(&root)?;
    if configs.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no configuration directories",
            root.display()
        )));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (ci, config_dir) in configs.iter().enumerate() {
        let config = name_of(config_dir);
        let raw = config_dir.join("raw");
        let base = if raw.is_dir() { raw } else { config_dir.clone() };
        let mut fovs: BTreeMap<u32, Vec<PathBuf>> = BTreeMap::new();
        for d in subdirs(&base)? {
            let Ok(n) = name_of(&d).parse::<u32>() else { continue };
            if !(TRAIN_FOVS.contains(&n) || TEST_FOVS.contains(&n)) {
                warnings.push(format!("{config}: ignoring FOV {n} outside 1..=20"));
                continue;
            }
            let captures = list_images(&d)?;
            if captures.len() < 2 {
                warnings.push(format!("{config}: FOV {n} has {} captures, need >= 2", captures.len()));
                continue;
            }
            fovs.insert(n, captures);
        }
        if fovs.is_empty() {
            return Err(Error::Data(format!("configuration {config} has no usable FOVs")));
        }
        for n in TRAIN_FOVS.chain(TEST_FOVS).filter(|n| !fovs.contains_key(n)) {
            warnings.push(format!("{config}: FOV {n} missing"));
        }

        let mut rng = seed::rng_at(options.seed, &[ci as u64]);
        let mut train_fovs: Vec<u32> = fovs.keys().copied().filter(|n| TRAIN_FOVS.contains(n)).collect();
        train_fovs.shuffle(&mut rng);
        let n_val = (options.val_fraction * train_fovs.len() as f64).round() as usize;
        let val: Vec<u32> = train_fovs[..n_val].to_vec();

        for (&n, captures) in &fovs {
            let frames = captures.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
            let reference = build_reference(&frames)?;
            let reference_path = format!("references/{config}_{n}.png");
            save_image(&reference, &out_dir.join(&reference_path), 16)?;
            let (role, picked): (Role, Vec<&PathBuf>) = if TEST_FOVS.contains(&n) {
                let k = options.test_captures.min(captures.len());
                let mut chosen: Vec<&PathBuf> = captures.choose_multiple(&mut rng, k).collect();
                chosen.sort();
                (Role::Test, chosen)
            } else {
                let role = if val.contains(&n) { Role::Val } else { Role::Train };
                (role, vec![captures.choose(&mut rng).expect("non-empty")])
            };
            for p in picked {
                entries.push(ManifestEntry {
                    role,
                    noisy_paths: vec![p.to_string_lossy().into_owned()],
                    reference_path: Some(reference_path.clone()),
                    noise_config: None,
                    seed: None,
                    source: Some(format!("{config}/{n}")),
                });
            }
        }
    }
    let manifest = Manifest::new(entries);
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(IngestReport { manifest, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn tree(configs: &[&str], fovs: &[u32], captures: usize, raw: bool) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for c in configs {
            for &f in fovs {
                let base = if raw {
                    dir.path().join(c).join("raw")
                } else {
                    dir.path().join(c)
                };
                for k in 0..captures {
                    let img = Image::filled(4, 4, (k as f64 + f as f64) / 40.0);
                    save_image(&img, &base.join(f.to_string()).join(format!("cap{k}.png")), 16).unwrap();
                }
            }
        }
        dir
    }

    #[test]
    fn mini_tree() {
        let t = tree(&["A", "B"], &[1, 2, 19], 4, true);
        let out = tempfile::tempdir().unwrap();
        let opts = FmdOptions {
            val_fraction: 0.5,
            ..Default::default()
        };
        let r = ingest_fmd_layout(t.path(), out.path(), &opts).unwrap();
        let m = &r.manifest;
        assert_eq!(m.count(Role::Train), 2);
        assert_eq!(m.count(Role::Val), 2);
        assert_eq!(m.count(Role::Test), 6);
        // 17 missing FOVs per configuration
        assert_eq!(r.warnings.len(), 34);
        let reference = load_image(&out.path().join("references/A_2.png")).unwrap();
        let expected = (0..4).map(|k| (k as f64 + 2.0) / 40.0).sum::<f64>() / 4.0;
        assert!((reference.data()[0] - expected).abs() <= 1.0 / 65535.0);
        let again = ingest_fmd_layout(t.path(), out.path(), &opts).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn test_fovs_only() {
        let t = tree(&["C"], &[19, 20], 3, false);
        let out = tempfile::tempdir().unwrap();
        let r = ingest_fmd_layout(t.path(), out.path(), &FmdOptions::default()).unwrap();
        assert!(r.manifest.entries.iter().all(|e| e.role == Role::Test));
        assert_eq!(r.manifest.entries.len(), 6);
    }

    #[test]
    fn empty_configuration_is_an_error() {
        let t = tempfile::tempdir().unwrap();
        fs::create_dir_all(t.path().join("empty")).unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_fmd_layout(t.path(), out.path(), &FmdOptions::default()),
            Err(Error::Data(_))
        ));
    }
}
