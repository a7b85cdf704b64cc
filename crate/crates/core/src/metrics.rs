//! Full-reference quality metrics: PSNR and Gaussian-window SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::image::Image;

/// Peak used when none is given: intensities live in `[0, 1]`.
pub const DEFAULT_PEAK: f64 = 1.0;

/// PSNR and SSIM of one test image against its reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `f64::INFINITY` when the images are identical.
    #[serde(with = "inf_as_null")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub peak: f64,
}

impl MetricReport {
    pub fn compute(reference: &Image, test: &Image) -> Result<Self> {
        let params = SsimParams::default();
        Ok(MetricReport {
            psnr_db: psnr(reference, test, params.peak)?,
            ssim: ssim(reference, test, &params)?,
            peak: params.peak,
        })
    }
}

/// JSON has no infinity; the zero-error PSNR sentinel is written as `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    reference.expect_same_dims(test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in dB, `10 log10(peak^2 / MSE)`.
///
/// Identical images yield `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(domain_err!("PSNR peak must be positive, got {peak}"));
    }
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimParams {
    /// Side of the square window; odd.
    pub window: usize,
    /// Standard deviation of the Gaussian window weights.
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: DEFAULT_PEAK,
        }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let taps: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable weighted filter over every window fully inside the image.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * horiz[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all Gaussian-weighted windows that fit
/// entirely inside the image.
///
/// Statistics use the normalized window weights directly (no sample
/// covariance correction), so the result equals the cropped mean of the
/// usual Gaussian SSIM map.
pub fn ssim(reference: &Image, test: &Image, params: &SsimParams) -> Result<f64> {
    reference.expect_same_dims(test)?;
    let (h, w) = reference.dims();
    if params.window == 0 || params.window % 2 == 0 {
        return Err(domain_err!("SSIM window must be odd, got {}", params.window));
    }
    if h < params.window || w < params.window {
        return Err(shape_err!("image {h}x{w} smaller than SSIM window {}", params.window));
    }
    if params.peak.is_nan() || params.peak <= 0.0 {
        return Err(domain_err!("SSIM peak must be positive, got {}", params.peak));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let a = reference.data();
    let b = test.data();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&aa, h, w, &taps);
    let e_bb = filter_valid(&bb, h, w, &taps);
    let e_ab = filter_valid(&ab, h, w, &taps);

    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(8, 8, 0.5);
        let b = Image::filled(8, 8, 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_errors() {
        let a = Image::filled(8, 8, 0.5);
        assert!(matches!(
            psnr(&a, &Image::filled(8, 4, 0.5), 1.0),
            Err(crate::Error::Shape(_))
        ));
        assert!(matches!(psnr(&a, &a, 0.0), Err(crate::Error::Domain(_))));
        assert!(matches!(psnr(&a, &a, -1.0), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        let a = Image::filled(16, 16, 0.2);
        let b = Image::filled(16, 16, 0.8);
        let c1 = 0.01f64.powi(2);
        // zero variance and covariance: the contrast-structure term is C2/C2
        let expected = (2.0 * 0.2 * 0.8 + c1) / (0.2f64.powi(2) + 0.8f64.powi(2) + c1);
        let got = ssim(&a, &b, &SsimParams::default()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = seed::rng(9);
        let p = SsimParams::default();
        for _ in 0..50 {
            let a = Image::from_fn(16, 16, |_, _| rng.random::<f64>()).unwrap();
            assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        }
        let a = Image::from_fn(20, 13, |_, _| rng.random::<f64>()).unwrap();
        let b = Image::from_fn(20, 13, |_, _| rng.random::<f64>()).unwrap();
        let ab = ssim(&a, &b, &p).unwrap();
        assert!((ab - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        assert!(ab < 1.0 && ab > -1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 32, 0.1);
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn report_serializes_infinite_psnr_as_null() {
        let a = Image::filled(16, 16, 0.4);
        let r = MetricReport::compute(&a, &a).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"psnr_db\":null"), "{s}");
        let back: MetricReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
