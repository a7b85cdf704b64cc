use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::io::{list_images, load_image, save_image};
use super::manifest::{Manifest, ManifestEntry, Role};
use crate::error::{Error, Result};
use crate::noise::NoiseConfig;
use crate::seed;

/// Image counts per role and noisy realizations per clean sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub realizations: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::preset_270_54_36()
    }
}

impl SplitSizes {
    /// 180 samples with two realizations each, split 270/54/36.
    pub fn preset_270_54_36() -> Self {
        SplitSizes {
            train: 270,
            val: 54,
            test: 36,
            realizations: 2,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Clean samples needed to fill every role.
    pub fn samples_needed(&self) -> usize {
        self.total().div_ceil(self.realizations)
    }
}

/// Corrupts the clean images of `clean_dir` and writes the noisy images,
/// 16-bit copies of the references and `manifest.json` into `out_dir`.
///
/// Samples are shuffled by `master_seed`; each contributes `realizations`
/// consecutive noisy images, which fill train, then val, then test. Every
/// noisy image has its own seed derived from `master_seed`, the sample's
/// position in the sorted file list and the realization index. Noisy values
/// are clipped to `[0, 1]` by the 16-bit PNG encoding.
pub fn make_synthetic_split(
    clean_dir: &Path,
    out_dir: &Path,
    cfg: &NoiseConfig,
    sizes: SplitSizes,
    master_seed: u64,
) -> Result<Manifest> {
    cfg.validate()?;
    if sizes.realizations == 0 {
        return Err(Error::Config("realizations must be >= 1".into()));
    }
    let files = list_images(clean_dir)?;
    let needed = sizes.samples_needed();
    if files.is_empty() || files.len() < needed {
        return Err(Error::Config(format!(
            "{} holds {} clean images, the split needs {needed}",
            clean_dir.display(),
            files.len()
        )));
    }
    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut seed::rng_at(master_seed, &[0x5b11]));

    let quotas = [
        (Role::Train, sizes.train),
        (Role::Val, sizes.val),
        (Role::Test, sizes.test),
    ];
    let mut roles = quotas.iter().flat_map(|&(r, n)| std::iter::repeat_n(r, n));
    let mut entries = Vec::with_capacity(sizes.total());
    'samples: for &idx in order.iter().take(needed) {
        let file = &files[idx];
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let clean = load_image(file)?;
        let reference = format!("reference/{stem}.png");
        save_image(&clean, &out_dir.join(&reference), 16)?;
        for k in 0..sizes.realizations {
            let Some(role) = roles.next() else { break 'samples };
            let noise_seed = seed::derive(master_seed, &[idx as u64, k as u64]);
            let noise = cfg.with_seed(noise_seed);
            let noisy_path = format!("noisy/{stem}_r{k}.png");
            save_image(&noise.apply(&clean)?, &out_dir.join(&noisy_path), 16)?;
            entries.push(ManifestEntry {
                role,
                noisy_paths: vec![noisy_path],
                reference_path: Some(reference.clone()),
                noise_config: Some(noise),
                seed: Some(noise_seed),
                source: Some(file.file_name().unwrap_or_default().to_string_lossy().into_owned()),
            });
        }
    }
    let manifest = Manifest::new(entries);
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
