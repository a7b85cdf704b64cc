//! Clean-image reconstruction: run the full noisy image through the network
//! (giving a `2H x 2W` super-resolved estimate) and bilinearly down-sample
//! the result back to `H x W`.
//!
//! Inputs whose dims are not multiples of `2^unet_depth` are reflect-padded
//! on the bottom/right edges and the output is cropped back.

use crate::error::Result;
use crate::image::{bilinear_resize, Image};
use crate::nn::Model;

/// Denoised, super-resolved `2H x 2W` estimate of `y`.
pub fn denoise_sr(model: &Model, y: &Image) -> Result<Image> {
    Ok(denoise_sr_batch(model, std::slice::from_ref(y))?.remove(0))
}

/// Denoised `H x W` estimate of `y`.
pub fn denoise(model: &Model, y: &Image) -> Result<Image> {
    let sr = denoise_sr(model, y)?;
    bilinear_resize(&sr, y.height(), y.width())
}

/// Batched [`denoise_sr`]; all images must share dims.
pub fn denoise_sr_batch(model: &Model, images: &[Image]) -> Result<Vec<Image>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = first.dims();
    let d = model.config().divisor();
    let (ph, pw) = (h.div_ceil(d) * d - h, w.div_ceil(d) * d - w);
    let padded: Vec<Image> = if ph == 0 && pw == 0 {
        images.to_vec()
    } else {
        images
            .iter()
            .map(|img| img.pad_reflect(ph, pw))
            .collect::<Result<_>>()?
    };
    let out = model.forward(&padded)?;
    if ph == 0 && pw == 0 {
        return Ok(out);
    }
    out.iter().map(|o| o.crop(0, 0, 2 * h, 2 * w)).collect()
}

/// Batched [`denoise`].
pub fn denoise_batch(model: &Model, images: &[Image]) -> Result<Vec<Image>> {
    let sr = denoise_sr_batch(model, images)?;
    sr.iter()
        .zip(images)
        .map(|(s, y)| bilinear_resize(s, y.height(), y.width()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, ModelConfig};

    fn tiny() -> Model {
        build_model(ModelConfig {
            unet_depth: 2,
            base_channels: 4,
            unet_out_channels: 8,
            head_channels: 4,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn probe(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0).unwrap()
    }

    #[test]
    fn shapes_and_consistency() {
        let model = tiny();
        let y = probe(32, 24);
        let sr = denoise_sr(&model, &y).unwrap();
        assert_eq!(sr.dims(), (64, 48));
        let den = denoise(&model, &y).unwrap();
        assert_eq!(den.dims(), (32, 24));
        assert_eq!(bilinear_resize(&sr, 32, 24).unwrap(), den);
        let direct = model.forward(std::slice::from_ref(&y)).unwrap().remove(0);
        assert_eq!(bilinear_resize(&direct, 32, 24).unwrap(), den);
        assert_eq!(denoise(&model, &y).unwrap(), den);
    }

    #[test]
    fn indivisible_dims_are_padded() {
        let model = tiny();
        let y = probe(18, 10);
        assert_eq!(denoise_sr(&model, &y).unwrap().dims(), (36, 20));
        assert_eq!(denoise(&model, &y).unwrap().dims(), (18, 10));
    }

    #[test]
    fn constant_input_gives_finite_output() {
        let out = denoise_sr(&tiny(), &Image::filled(16, 16, 0.6)).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}
