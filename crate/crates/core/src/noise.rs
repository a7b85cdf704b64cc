//! Seeded synthetic corruption: additive Gaussian, scaled Poisson and their
//! mixture.
//!
//! Poisson noise is parameterized as `y = Poisson(lam * x) / lam`, so
//! `E[y] = x` and `Var[y] = x / lam`. Outputs are never clipped; clipping
//! would bias the noise away from zero mean.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::image::Image;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    Poisson,
    PoissonGaussian,
}

/// Noise family, its parameters and the seed of the realization.
///
/// `sigma` is a standard deviation in normalized intensity units; `lam` is
/// the dimensionless Poisson scale. A missing field decodes as absent (or
/// Gaussian, seed 0); a missing section decodes as [`NoiseConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lam: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::preset_gaussian15(0)
    }
}

impl NoiseConfig {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseConfig {
            family: NoiseFamily::Gaussian,
            sigma: Some(sigma),
            lam: None,
            seed,
        }
    }

    pub fn poisson(lam: f64, seed: u64) -> Self {
        NoiseConfig {
            family: NoiseFamily::Poisson,
            sigma: None,
            lam: Some(lam),
            seed,
        }
    }

    pub fn poisson_gaussian(lam: f64, sigma: f64, seed: u64) -> Self {
        NoiseConfig {
            family: NoiseFamily::PoissonGaussian,
            sigma: Some(sigma),
            lam: Some(lam),
            seed,
        }
    }

    /// Gaussian sigma = 15 on the 8-bit scale.
    pub fn preset_gaussian15(seed: u64) -> Self {
        Self::gaussian(15.0 / 255.0, seed)
    }

    /// Poisson lam = 20.
    pub fn preset_poisson20(seed: u64) -> Self {
        Self::poisson(20.0, seed)
    }

    /// Mixed Poisson lam = 15 with Gaussian sigma = 5 on the 8-bit scale.
    pub fn preset_mixed_lam15(seed: u64) -> Self {
        Self::poisson_gaussian(15.0, 5.0 / 255.0, seed)
    }

    /// Mixed Poisson lam = 20 with Gaussian sigma = 5 on the 8-bit scale.
    pub fn preset_mixed_lam20(seed: u64) -> Self {
        Self::poisson_gaussian(20.0, 5.0 / 255.0, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseConfig { seed, ..self.clone() }
    }

    /// Checks that the family's parameters are present and in range.
    pub fn validate(&self) -> Result<()> {
        let need_sigma = matches!(self.family, NoiseFamily::Gaussian | NoiseFamily::PoissonGaussian);
        let need_lam = matches!(self.family, NoiseFamily::Poisson | NoiseFamily::PoissonGaussian);
        match (need_sigma, self.sigma) {
            (true, None) => return Err(Error::Config(format!("{:?} noise requires sigma", self.family))),
            (_, Some(s)) if !(s >= 0.0 && s.is_finite()) => {
                return Err(domain_err!("sigma must be finite and >= 0, got {s}"))
            }
            _ => {}
        }
        match (need_lam, self.lam) {
            (true, None) => return Err(Error::Config(format!("{:?} noise requires lam", self.family))),
            (_, Some(l)) if !(l > 0.0 && l.is_finite()) => {
                return Err(domain_err!("lam must be finite and > 0, got {l}"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Corrupts `x` using a generator seeded from `self.seed`.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.apply_with(x, &mut seed::rng(self.seed))
    }

    /// Corrupts `x` drawing from `rng`; `self.seed` is ignored.
    pub fn apply_with<R: Rng + ?Sized>(&self, x: &Image, rng: &mut R) -> Result<Image> {
        self.validate()?;
        match self.family {
            NoiseFamily::Gaussian => add_gaussian(x, self.sigma.unwrap(), rng),
            NoiseFamily::Poisson => add_poisson(x, self.lam.unwrap(), rng),
            NoiseFamily::PoissonGaussian => add_poisson_gaussian(x, self.lam.unwrap(), self.sigma.unwrap(), rng),
        }
    }

    /// Variance of the noise at a pixel whose clean intensity is `x`.
    pub fn pixel_variance(&self, x: f64) -> f64 {
        let shot = self.lam.map_or(0.0, |l| x / l);
        let read = self.sigma.map_or(0.0, |s| s * s);
        match self.family {
            NoiseFamily::Gaussian => read,
            NoiseFamily::Poisson => shot,
            NoiseFamily::PoissonGaussian => shot + read,
        }
    }
}

/// `y = x + n` with `n ~ N(0, sigma^2)` i.i.d. per pixel.
pub fn add_gaussian<R: Rng + ?Sized>(x: &Image, sigma: f64, rng: &mut R) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(domain_err!("sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| domain_err!("{e}"))?;
    let data = x.data().iter().map(|&v| v + normal.sample(rng)).collect();
    Image::new(x.height(), x.width(), data)
}

fn check_poisson_input(x: &Image, lam: f64) -> Result<()> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(domain_err!("lam must be finite and > 0, got {lam}"));
    }
    if let Some(i) = x.data().iter().position(|&v| v < 0.0) {
        return Err(domain_err!(
            "Poisson noise needs non-negative intensities, found {} at ({}, {})",
            x.data()[i],
            i / x.width(),
            i % x.width()
        ));
    }
    Ok(())
}

fn poisson_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    if rate == 0.0 {
        return Ok(0.0);
    }
    Poisson::new(rate)
        .map(|p| p.sample(rng))
        .map_err(|e| domain_err!("Poisson rate {rate}: {e}"))
}

/// `y = Poisson(lam * x) / lam` per pixel.
pub fn add_poisson<R: Rng + ?Sized>(x: &Image, lam: f64, rng: &mut R) -> Result<Image> {
    check_poisson_input(x, lam)?;
    let data = x
        .data()
        .iter()
        .map(|&v| poisson_sample(lam * v, rng).map(|k| k / lam))
        .collect::<Result<Vec<_>>>()?;
    Image::new(x.height(), x.width(), data)
}

/// `y = Poisson(lam * x) / lam + N(0, sigma^2)`, components independent.
pub fn add_poisson_gaussian<R: Rng + ?Sized>(x: &Image, lam: f64, sigma: f64, rng: &mut R) -> Result<Image> {
    let shot = add_poisson(x, lam, rng)?;
    add_gaussian(&shot, sigma, rng)
}

/// Mean over pixels of the per-pixel noise variance of `cfg` on `x`.
///
/// This is the scalar variance term of the self-supervised loss
/// decomposition; for signal-dependent noise it is the spatial average.
pub fn noise_variance(x: &Image, cfg: &NoiseConfig) -> f64 {
    x.data().iter().map(|&v| cfg.pixel_variance(v)).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = Image::filled(4, 4, 0.3);
        assert_eq!(add_gaussian(&x, 0.0, &mut seed::rng(1)).unwrap(), x);
        assert!(add_gaussian(&x, -0.1, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn gaussian_std_within_two_percent() {
        let x = Image::filled(512, 512, 0.5);
        let sigma = 15.0 / 255.0;
        let y = add_gaussian(&x, sigma, &mut seed::rng(2)).unwrap();
        let (_, var) = stats(y.data().iter().map(|v| v - 0.5));
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let x = Image::filled(32, 32, 0.5);
        let cfg = NoiseConfig::gaussian(0.1, 77);
        assert_eq!(cfg.apply(&x).unwrap(), cfg.apply(&x).unwrap());
        let mixed = NoiseConfig::preset_mixed_lam15(5);
        assert_eq!(mixed.apply(&x).unwrap(), mixed.apply(&x).unwrap());
        let other = cfg.with_seed(78).apply(&x).unwrap();
        let base = cfg.apply(&x).unwrap();
        let differing = base.data().iter().zip(other.data()).filter(|(a, b)| a != b).count();
        assert!(differing as f64 >= 0.99 * x.len() as f64);
    }

    #[test]
    fn poisson_of_zero_is_zero() {
        let x = Image::zeros(8, 8);
        assert_eq!(add_poisson(&x, 20.0, &mut seed::rng(3)).unwrap(), x);
    }

    #[test]
    fn poisson_moments() {
        let x = Image::filled(512, 512, 0.5);
        let y = add_poisson(&x, 20.0, &mut seed::rng(4)).unwrap();
        let (mean, var) = stats(y.data().iter().copied());
        assert!((mean / 0.5 - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var / (0.5 / 20.0) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn huge_lambda_concentrates() {
        let x = Image::from_fn(64, 64, |r, c| (r + c) as f64 / 128.0).unwrap();
        let y = add_poisson(&x, 1e6, &mut seed::rng(5)).unwrap();
        let worst = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn poisson_rejects_bad_input() {
        let x = Image::new(2, 2, vec![0.1, -0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            add_poisson(&x, 20.0, &mut seed::rng(0)),
            Err(Error::Domain(_))
        ));
        let ok = Image::filled(2, 2, 0.1);
        assert!(matches!(
            add_poisson(&ok, 0.0, &mut seed::rng(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mixed_variance_adds() {
        let x = Image::filled(512, 512, 0.5);
        let (lam, sigma) = (15.0, 5.0 / 255.0);
        let y = add_poisson_gaussian(&x, lam, sigma, &mut seed::rng(6)).unwrap();
        let (_, var) = stats(y.data().iter().copied());
        let expected = 0.5 / lam + sigma * sigma;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn mixed_with_zero_sigma_matches_poisson_in_distribution() {
        let x = Image::filled(256, 256, 0.4);
        let a = add_poisson_gaussian(&x, 20.0, 0.0, &mut seed::rng(8)).unwrap();
        let b = add_poisson(&x, 20.0, &mut seed::rng(9)).unwrap();
        let (ma, va) = stats(a.data().iter().copied());
        let (mb, vb) = stats(b.data().iter().copied());
        assert!((ma - mb).abs() < 0.005);
        assert!((va / vb - 1.0).abs() < 0.05);
    }

    #[test]
    fn variance_closed_forms() {
        let x = Image::filled(4, 4, 0.5);
        assert!((noise_variance(&x, &NoiseConfig::gaussian(0.1, 0)) - 0.01).abs() < 1e-15);
        assert!((noise_variance(&x, &NoiseConfig::poisson(20.0, 0)) - 0.025).abs() < 1e-15);
        let mixed = NoiseConfig::poisson_gaussian(15.0, 5.0 / 255.0, 0);
        let expected = 0.5 / 15.0 + (5.0f64 / 255.0).powi(2);
        assert!((noise_variance(&x, &mixed) - expected).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NoiseConfig::gaussian(0.1, 0);
        cfg.sigma = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = NoiseConfig::poisson_gaussian(10.0, 0.1, 0);
        cfg.lam = None;
        assert!(cfg.validate().is_err());
        assert!(NoiseConfig::preset_poisson20(0).validate().is_ok());
    }

    #[test]
    fn zero_mean_and_uncorrelated_noise() {
        // 2x10^5 noise samples per family, tested at 3 standard errors.
        let x = Image::from_fn(200, 1000, |r, c| 0.2 + 0.6 * ((r * 31 + c * 17) % 97) as f64 / 97.0).unwrap();
        for cfg in [
            NoiseConfig::gaussian(0.1, 10),
            NoiseConfig::poisson(20.0, 11),
            NoiseConfig::poisson_gaussian(15.0, 5.0 / 255.0, 12),
        ] {
            let y = cfg.apply(&x).unwrap();
            let n: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
            let (mean, var) = stats(n.iter().copied());
            let se = (var / n.len() as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "{:?} mean {mean} se {se}", cfg.family);

            // Horizontal neighbour pairs, standardized by per-pixel std.
            let z: Vec<f64> = n
                .iter()
                .zip(x.data())
                .map(|(e, &v)| e / cfg.pixel_variance(v).sqrt())
                .collect();
            let pairs: Vec<f64> = (0..200)
                .flat_map(|r| (0..999).step_by(2).map(move |c| (r, c)))
                .map(|(r, c)| z[r * 1000 + c] * z[r * 1000 + c + 1])
                .collect();
            let (corr, var_c) = stats(pairs.iter().copied());
            let se_c = (var_c / pairs.len() as f64).sqrt();
            assert!(corr.abs() < 3.0 * se_c, "{:?} corr {corr}", cfg.family);
        }
    }
}
