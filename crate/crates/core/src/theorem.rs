//! Monte Carlo check of the self-supervised risk decomposition.
//!
//! For a predictor `f` that sees only the sub-sampled image `y_J`, and
//! zero-mean pixel-independent noise `n`, the risk measured against the
//! noisy complement equals the supervised risk plus the noise variance:
//!
//! ```text
//! E |f(y_J) - y|^2 on J^c  =  E |f(y_J) - x|^2 on J^c  +  sigma_n^2
//! ```
//!
//! because the cross term `E[(f(y_J) - x)^T n]` on `J^c` vanishes. All norms
//! here are per-pixel means over `J^c`, and `sigma_n^2` is the mean per-pixel
//! noise variance over the same positions.
//!
//! Each trial draws its own noise and sub-sample set from a seed derived from
//! the trial index, so trials can run in any order or in parallel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::image::{bilinear_resize, Image};
use crate::noise::NoiseConfig;
use crate::seed;
use crate::subsample::{extract_subsampled, SubsampleSet};

pub const MIN_TRIALS: usize = 100;

/// Averaged terms of the decomposition with their standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// Self-supervised risk, mean of `(f(y_J) - y)^2` over `J^c`.
    pub lhs: f64,
    /// Supervised risk, mean of `(f(y_J) - x)^2` over `J^c`.
    pub supervised: f64,
    /// Mean per-pixel noise variance over `J^c`.
    pub sigma2: f64,
    /// Mean of `(f(y_J) - x) * n` over `J^c`.
    pub cross_term: f64,
    /// `lhs - supervised - sigma2`.
    pub residual: f64,
    pub n_trials: usize,
    /// Standard error of `residual`.
    pub std_error: f64,
    pub cross_term_std_error: f64,
    pub lhs_std_error: f64,
    pub sigma2_std_error: f64,
}

impl DecompositionReport {
    /// `|residual|` in units of its standard error (0 when both vanish).
    pub fn residual_z(&self) -> f64 {
        z_score(self.residual, self.std_error)
    }

    pub fn cross_term_z(&self) -> f64 {
        z_score(self.cross_term, self.cross_term_std_error)
    }

    /// The identity and the vanishing cross term both hold within
    /// `k` standard errors.
    pub fn holds_within(&self, k: f64) -> bool {
        self.residual.abs() <= k * self.std_error && self.cross_term.abs() <= k * self.cross_term_std_error
    }
}

fn z_score(value: f64, se: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        value.abs() / se
    }
}

/// Neumaier-compensated running mean and standard error.
#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    comp: f64,
    sum_sq: f64,
    comp_sq: f64,
    n: usize,
}

fn neumaier(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

impl Moments {
    fn push(&mut self, v: f64) {
        neumaier(&mut self.sum, &mut self.comp, v);
        neumaier(&mut self.sum_sq, &mut self.comp_sq, v * v);
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        (self.sum + self.comp) / self.n as f64
    }

    fn std_error(&self) -> f64 {
        let n = self.n as f64;
        let mean = self.mean();
        let var = (((self.sum_sq + self.comp_sq) - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Per-trial terms, all per-pixel means over `J^c`.
#[derive(Clone, Copy, Debug)]
struct TrialTerms {
    lhs: f64,
    supervised: f64,
    sigma2: f64,
    cross: f64,
}

/// Predictor that bilinearly up-samples `y_J` to full resolution.
pub fn bilinear_upsampler(sub: &Image) -> Result<Image> {
    bilinear_resize(sub, 2 * sub.height(), 2 * sub.width())
}

fn run_trials<F>(x: &Image, cfg: &NoiseConfig, predictor: F, n_trials: usize, base_seed: u64) -> Result<Vec<TrialTerms>>
where
    F: Fn(&Image, &Image) -> Result<Image> + Sync,
{
    let (h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(shape_err!("clean image must have even dims >= 2, got {h}x{w}"));
    }
    if n_trials < MIN_TRIALS {
        return Err(domain_err!("need at least {MIN_TRIALS} trials, got {n_trials}"));
    }
    cfg.validate()?;
    let pixel_var: Vec<f64> = x.data().iter().map(|&v| cfg.pixel_variance(v)).collect();
    (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_at(base_seed, &[t as u64]);
            let y = cfg.apply_with(x, &mut rng)?;
            let noise = y.zip_map(x, |a, b| a - b)?;
            let s = SubsampleSet::sample(h, w, &mut rng)?;
            let pred = predictor(&extract_subsampled(&y, &s)?, &noise)?;
            if pred.dims() != (h, w) {
                return Err(shape_err!(
                    "predictor returned {}x{}, expected {h}x{w}",
                    pred.height(),
                    pred.width()
                ));
            }
            let mut in_j = vec![false; h * w];
            for i in s.selected_flat() {
                in_j[i] = true;
            }
            let (mut lhs, mut sup, mut sig, mut cross) = (0.0, 0.0, 0.0, 0.0);
            for i in (0..h * w).filter(|&i| !in_j[i]) {
                let f = pred.data()[i];
                let err = f - x.data()[i];
                let n = noise.data()[i];
                lhs += (f - y.data()[i]).powi(2);
                sup += err * err;
                cross += err * n;
                sig += pixel_var[i];
            }
            let k = s.complement_len() as f64;
            Ok(TrialTerms {
                lhs: lhs / k,
                supervised: sup / k,
                sigma2: sig / k,
                cross: cross / k,
            })
        })
        .collect()
}

fn summarize(trials: &[TrialTerms]) -> DecompositionReport {
    let [mut lhs, mut sup, mut sig, mut cross, mut resid] = [Moments::default(); 5];
    for t in trials {
        lhs.push(t.lhs);
        sup.push(t.supervised);
        sig.push(t.sigma2);
        cross.push(t.cross);
        resid.push(t.lhs - t.supervised - t.sigma2);
    }
    DecompositionReport {
        lhs: lhs.mean(),
        supervised: sup.mean(),
        sigma2: sig.mean(),
        cross_term: cross.mean(),
        residual: resid.mean(),
        n_trials: trials.len(),
        std_error: resid.std_error(),
        cross_term_std_error: cross.std_error(),
        lhs_std_error: lhs.std_error(),
        sigma2_std_error: sig.std_error(),
    }
}

/// Estimates every term of the decomposition for a fixed predictor.
///
/// `predictor` maps the `H/2 x W/2` sub-sampled image to an `H x W`
/// estimate and must not depend on anything else.
pub fn verify_decomposition<F, R>(
    x: &Image,
    cfg: &NoiseConfig,
    predictor: F,
    n_trials: usize,
    rng: &mut R,
) -> Result<DecompositionReport>
where
    F: Fn(&Image) -> Result<Image> + Sync,
    R: Rng + ?Sized,
{
    let base = rng.random();
    let trials = run_trials(x, cfg, |sub, _| checked(predictor(sub)?), n_trials, base)?;
    Ok(summarize(&trials))
}

/// Mean of the cross term `(f(y_J) - x)^T n` over `J^c`, with its standard
/// error.
pub fn verify_cross_term_vanishes<F, R>(
    x: &Image,
    cfg: &NoiseConfig,
    predictor: F,
    n_trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    F: Fn(&Image) -> Result<Image> + Sync,
    R: Rng + ?Sized,
{
    let report = verify_decomposition(x, cfg, predictor, n_trials, rng)?;
    Ok((report.cross_term, report.cross_term_std_error))
}

/// Negative-control variant whose predictor also receives the full noise
/// realization. A predictor that uses it breaks the independence the
/// identity relies on; this exists to show the check can fail.
pub fn verify_decomposition_with_noise_access<F, R>(
    x: &Image,
    cfg: &NoiseConfig,
    predictor: F,
    n_trials: usize,
    rng: &mut R,
) -> Result<DecompositionReport>
where
    F: Fn(&Image, &Image) -> Result<Image> + Sync,
    R: Rng + ?Sized,
{
    let base = rng.random();
    let trials = run_trials(x, cfg, |sub, n| checked(predictor(sub, n)?), n_trials, base)?;
    Ok(summarize(&trials))
}

fn checked(img: Image) -> Result<Image> {
    // Image::new already rejects non-finite data; this guards images built
    // through unchecked internal paths.
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(domain_err!("predictor produced non-finite output"));
    }
    Ok(img)
}

/// Smooth synthetic test scene: a few Gaussian bumps on a gentle gradient,
/// kept inside `[0.1, 0.9]`.
pub fn smooth_scene(height: usize, width: usize) -> Image {
    let (h, w) = (height as f64, width as f64);
    let bumps = [(0.3, 0.3, 0.18, 0.35), (0.7, 0.6, 0.22, 0.25), (0.45, 0.8, 0.12, 0.2)];
    Image::from_fn(height, width, |r, c| {
        let (y, x) = ((r as f64 + 0.5) / h, (c as f64 + 0.5) / w);
        let mut v = 0.15 + 0.2 * x;
        for &(cy, cx, s, a) in &bumps {
            v += a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp();
        }
        v.clamp(0.1, 0.9)
    })
    .expect("finite scene")
}
