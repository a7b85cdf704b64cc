//! The self-supervised optimization loop.
//!
//! Each step samples `batch_size` training images with replacement, takes
//! one random crop of each, splits every crop with a fresh sub-sample set
//! into `y_J` and `y_{J^c}`, runs `y_J` through the network and applies one
//! optimizer update on the masked L2 loss.
//!
//! All randomness of step `k` comes from a seed derived from
//! `(seed, k)`, so a run resumed from a checkpoint replays the same batches
//! as an uninterrupted run.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_image, Manifest, Role};
use crate::error::{Error, Result};
use crate::image::{random_crop, Image};
use crate::loss::masked_l2;
use crate::metrics::MetricReport;
use crate::nn::{Adam, Checkpoint, Model, ModelConfig, SrDenoiser, Tensor};
use crate::reconstruct::denoise;
use crate::seed;
use crate::subsample::SubsampleSet;

const STEP_STREAM: u64 = 0x7a1e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve the learning rate after `plateau_patience` validations without
    /// a new best PSNR.
    Plateau,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub crop_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    /// Validate every this many steps; 0 disables validation.
    pub validation_interval: u64,
    pub plateau_patience: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            crop_size: 128,
            steps: 20_000,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Plateau,
            optimizer: OptimizerKind::Adam,
            validation_interval: 500,
            plateau_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the config against the network it will train. The crop is
    /// halved by the sub-sampler before reaching the network, so the crop
    /// must be a multiple of `2 * 2^unet_depth`.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let unit = 2 * model.divisor();
        if self.crop_size == 0 || self.crop_size % unit != 0 {
            return Err(Error::Config(format!(
                "crop_size {} must be a positive multiple of {unit} (2 * 2^unet_depth)",
                self.crop_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.lr_schedule == LrSchedule::Plateau && self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ssim: Option<f64>,
    pub lr: f64,
}

/// Writes records as newline-delimited JSON.
pub fn write_metrics_log<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("write metrics log", e))?;
    }
    Ok(())
}

/// A validation image with its clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ValPair {
    pub noisy: Image,
    pub reference: Image,
}

/// Images a training run draws from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<Image>,
    pub val: Vec<ValPair>,
}

impl TrainData {
    /// Loads every train noisy image and every val (noisy, reference) pair.
    /// Paths are resolved against `root`.
    pub fn from_manifest(manifest: &Manifest, root: &Path) -> Result<Self> {
        let mut data = TrainData::default();
        for entry in &manifest.entries {
            match entry.role {
                Role::Train => {
                    for p in &entry.noisy_paths {
                        data.train.push(load_image(&root.join(p))?);
                    }
                }
                Role::Val => {
                    let reference = entry
                        .reference_path
                        .as_ref()
                        .ok_or_else(|| Error::Data(format!("val entry {:?} has no reference", entry.noisy_paths)))?;
                    let reference = load_image(&root.join(reference))?;
                    for p in &entry.noisy_paths {
                        data.val.push(ValPair {
                            noisy: load_image(&root.join(p))?,
                            reference: reference.clone(),
                        });
                    }
                }
                Role::Test => {}
            }
        }
        Ok(data)
    }
}

/// Learning-rate schedule and best-metric bookkeeping carried across
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub learning_rate: f64,
    pub best_val_psnr: Option<f64>,
    pub evals_since_best: u32,
}

pub struct TrainOutcome {
    /// Final state, including optimizer moments for resuming.
    pub last: Checkpoint,
    /// Checkpoint with the highest validation PSNR seen in this run.
    pub best: Option<Checkpoint>,
    pub log: Vec<MetricsRecord>,
}

/// One optimizer update on a batch of even-dimensioned noisy crops.
/// Returns the batch loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, crops: &[Image], lr: f64, batch_seed: u64) -> Result<f64> {
    let mut rng = seed::rng(batch_seed);
    let (h, w) = crops.first().ok_or_else(|| Error::Shape("empty batch".into()))?.dims();
    let (hh, hw) = (h / 2, w / 2);
    let b = crops.len();
    let mut input = Tensor::<f32>::zeros(1, b, hh, hw);
    let mut target = Tensor::<f32>::zeros(1, b, h, w);
    let mut mask = Tensor::<f32>::zeros(1, b, h, w);
    for (i, crop) in crops.iter().enumerate() {
        if crop.dims() != (h, w) {
            return Err(Error::Shape("batch crops differ in size".into()));
        }
        let s = SubsampleSet::sample(h, w, &mut rng)?;
        let y = crop.data();
        for (ci, cj) in (0..hh).flat_map(|ci| (0..hw).map(move |cj| (ci, cj))) {
            let (r, c) = s.selected(ci, cj);
            input.data[i * hh * hw + ci * hw + cj] = y[r * w + c] as f32;
        }
        let base = i * h * w;
        for (k, &v) in y.iter().enumerate() {
            target.data[base + k] = v as f32;
            mask.data[base + k] = 1.0;
        }
        for k in s.selected_flat() {
            target.data[base + k] = 0.0;
            mask.data[base + k] = 0.0;
        }
    }
    let trace = model.forward_trace(input)?;
    let (loss, grad) = masked_l2(&trace.output, &target, &mask)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: adam.step,
            learning_rate: lr,
            batch_seed,
        });
    }
    model.zero_grad();
    model.backward(&trace, grad);
    adam.update(model.params_mut(), lr);
    Ok(loss)
}

/// Draws the crops and sub-sampling seed of step `step`.
pub fn sample_batch(cfg: &TrainConfig, images: &[Image], step: u64) -> Result<(Vec<Image>, u64)> {
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let mut rng = seed::rng_at(cfg.seed, &[STEP_STREAM, step]);
    let crops = (0..cfg.batch_size)
        .map(|_| {
            let idx = rng.random_range(0..images.len());
            random_crop(&images[idx], cfg.crop_size, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((crops, rng.random()))
}

/// Denoises each validation image and scores it against its reference.
pub fn validate(model: &Model, val: &[ValPair]) -> Result<Vec<MetricReport>> {
    validate_with(|y| denoise(model, y), val)
}

/// [`validate`] for an arbitrary denoiser.
pub fn validate_with<F>(denoiser: F, val: &[ValPair]) -> Result<Vec<MetricReport>>
where
    F: Fn(&Image) -> Result<Image>,
{
    val.iter()
        .map(|p| MetricReport::compute(&p.reference, &denoiser(&p.noisy)?))
        .collect()
}

fn mean_report(reports: &[MetricReport]) -> (f64, f64) {
    let n = reports.len() as f64;
    let psnr = reports.iter().map(|r| r.psnr_db).sum::<f64>() / n;
    let ssim = reports.iter().map(|r| r.ssim).sum::<f64>() / n;
    (psnr, ssim)
}

/// Trains a fresh network on the manifest's train entries, validating on
/// its val entries. Paths are resolved against `root`.
pub fn train(cfg: &TrainConfig, model_cfg: &ModelConfig, manifest: &Manifest, root: &Path) -> Result<TrainOutcome> {
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    let data = TrainData::from_manifest(manifest, root)?;
    train_on(cfg, model_cfg, &data, None)
}

/// Trains on in-memory data, optionally resuming from a checkpoint written
/// by an earlier run with the same config.
pub fn train_on(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    data: &TrainData,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate(model_cfg)?;
    if data.train.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let (mut model, mut adam, mut state, start) = match resume {
        Some(ckpt) => {
            if &ckpt.config != model_cfg {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different model config".into(),
                ));
            }
            let model = ckpt.model()?;
            let adam = ckpt.optimizer_for(&model)?;
            let state = match &ckpt.trainer_state {
                Some(v) => serde_json::from_value(v.clone())?,
                None => initial_state(cfg),
            };
            (model, adam, state, ckpt.training_step)
        }
        None => {
            let model = SrDenoiser::new(model_cfg.clone())?;
            let adam = Adam::new(&model.params());
            (model, adam, initial_state(cfg), 0)
        }
    };

    let mut log = Vec::new();
    let mut best = None;
    let mut last_metric = resume.and_then(|c| c.validation_metric);
    for step in start..cfg.steps {
        let (crops, batch_seed) = sample_batch(cfg, &data.train, step)?;
        let loss = train_step(&mut model, &mut adam, &crops, state.learning_rate, batch_seed).map_err(|e| match e {
            Error::NonFiniteLoss {
                learning_rate,
                batch_seed,
                ..
            } => Error::NonFiniteLoss {
                step,
                learning_rate,
                batch_seed,
            },
            other => other,
        })?;
        let mut record = MetricsRecord {
            step: step + 1,
            train_loss: loss,
            val_psnr: None,
            val_ssim: None,
            lr: state.learning_rate,
        };
        let done = step + 1;
        if cfg.validation_interval > 0 && !data.val.is_empty() && done % cfg.validation_interval == 0 {
            let (psnr, ssim) = mean_report(&validate(&model, &data.val)?);
            record.val_psnr = Some(psnr);
            record.val_ssim = Some(ssim);
            last_metric = Some(psnr);
            if state.best_val_psnr.is_none_or(|b| psnr > b) {
                state.best_val_psnr = Some(psnr);
                state.evals_since_best = 0;
                best = Some(Checkpoint::from_model(&model, done, Some(psnr)));
            } else {
                state.evals_since_best += 1;
                if cfg.lr_schedule == LrSchedule::Plateau && state.evals_since_best >= cfg.plateau_patience {
                    state.learning_rate *= 0.5;
                    state.evals_since_best = 0;
                }
            }
        }
        log.push(record);
    }
    let end = start.max(cfg.steps);
    let mut last = Checkpoint::from_model(&model, end, last_metric).with_optimizer(&model, &adam);
    last.trainer_state = Some(serde_json::to_value(&state)?);
    Ok(TrainOutcome { last, best, log })
}

fn initial_state(cfg: &TrainConfig) -> TrainerState {
    TrainerState {
        learning_rate: cfg.learning_rate,
        best_val_psnr: None,
        evals_since_best: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseConfig;
    use crate::phantom;

    fn tiny() -> ModelConfig {
        ModelConfig {
            unet_depth: 2,
            base_channels: 4,
            unet_out_channels: 8,
            head_channels: 4,
            seed: 3,
            ..Default::default()
        }
    }

    fn cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            crop_size: 16,
            steps,
            learning_rate: 1e-3,
            validation_interval: 0,
            seed: 9,
            ..Default::default()
        }
    }

    fn data() -> TrainData {
        let clean = phantom::cells(32, 32, 4);
        let noisy = NoiseConfig::gaussian(0.1, 1).apply(&clean).unwrap();
        TrainData {
            train: vec![noisy.clone()],
            val: vec![ValPair {
                noisy,
                reference: clean,
            }],
        }
    }

    #[test]
    fn zero_steps_returns_initial_network() {
        let out = train_on(&cfg(0), &tiny(), &data(), None).unwrap();
        assert_eq!(weights(&out.last.model().unwrap()), weights(&build(&tiny())));
        assert_eq!(out.last.training_step, 0);
        assert!(out.log.is_empty());
    }

    fn build(c: &ModelConfig) -> Model {
        SrDenoiser::new(c.clone()).unwrap()
    }

    fn weights(m: &Model) -> Vec<Vec<f32>> {
        m.params().iter().map(|p| p.value.clone()).collect()
    }

    #[test]
    fn step_is_deterministic_and_zero_lr_freezes() {
        let (crops, bs) = sample_batch(&cfg(1), &data().train, 0).unwrap();
        let run = |lr: f64| {
            let mut m = build(&tiny());
            let mut adam = Adam::new(&m.params());
            let loss = train_step(&mut m, &mut adam, &crops, lr, bs).unwrap();
            (loss, m)
        };
        let (l1, m1) = run(1e-3);
        let (l2, m2) = run(1e-3);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(weights(&m1), weights(&m2));
        let (_, frozen) = run(0.0);
        assert_eq!(weights(&frozen), weights(&build(&tiny())));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let d = data();
        let mut c = cfg(6);
        c.validation_interval = 2;
        let full = train_on(&c, &tiny(), &d, None).unwrap();
        let first = train_on(&TrainConfig { steps: 3, ..c.clone() }, &tiny(), &d, None).unwrap();
        let resumed = train_on(&c, &tiny(), &d, Some(&first.last)).unwrap();
        assert_eq!(resumed.last.to_bytes().unwrap(), full.last.to_bytes().unwrap());
        assert_eq!(&full.log[3..], &resumed.log[..]);
    }

    #[test]
    fn validation_records_and_best_checkpoint() {
        let mut c = cfg(4);
        c.validation_interval = 2;
        let out = train_on(&c, &tiny(), &data(), None).unwrap();
        let vals: Vec<_> = out.log.iter().filter_map(|r| r.val_psnr).collect();
        assert_eq!(vals.len(), 2);
        assert!(vals.iter().all(|v| v.is_finite()));
        assert!(out.best.is_some());
        let mut buf = Vec::new();
        write_metrics_log(&mut buf, &out.log).unwrap();
        let lines: Vec<MetricsRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, out.log);
    }

    #[test]
    fn perfect_surrogate_scores_infinite_psnr() {
        let d = data();
        let reports = validate_with(|_| Ok(d.val[0].reference.clone()), &d.val).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].psnr_db, f64::INFINITY);
        let untrained = validate(&build(&tiny()), &d.val).unwrap();
        assert!(untrained[0].psnr_db.is_finite());
    }

    #[test]
    fn config_checks() {
        let m = tiny();
        assert!(cfg(1).validate(&m).is_ok());
        assert!(TrainConfig {
            crop_size: 12,
            ..cfg(1)
        }
        .validate(&m)
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..cfg(1)
        }
        .validate(&m)
        .is_err());
        assert!(train_on(&cfg(1), &m, &TrainData::default(), None).is_err());
    }

    #[test]
    fn diverging_step_reports_diagnostics() {
        let (crops, bs) = sample_batch(&cfg(1), &data().train, 0).unwrap();
        let mut m = build(&tiny());
        for p in m.params_mut() {
            p.value.iter_mut().for_each(|v| *v = f32::MAX);
        }
        let mut adam = Adam::new(&m.params());
        match train_step(&mut m, &mut adam, &crops, 1e-3, bs) {
            Err(Error::NonFiniteLoss { batch_seed, .. }) => assert_eq!(batch_seed, bs),
            other => panic!("expected NonFiniteLoss, got {:?}", other.map(|_| ())),
        }
    }
}
