//! Grayscale raster container plus the resampling and cropping primitives the
//! rest of the pipeline is built on.

use rand::Rng;

use crate::error::{domain_err, shape_err, Result};

/// Single-channel image with row-major `f64` intensities.
///
/// Intensities are nominally in `[0, 1]` but are not clamped: noisy
/// realizations routinely leave that range and must stay unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
    bit_depth: Option<u8>,
}

impl Image {
    /// Builds an image, rejecting length mismatches and non-finite values.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(shape_err!("image dims must be positive, got {height}x{width}"));
        }
        if data.len() != height * width {
            return Err(shape_err!("data length {} does not match {height}x{width}", data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(domain_err!(
                "non-finite intensity {} at ({}, {})",
                data[i],
                i / width,
                i % width
            ));
        }
        Ok(Image {
            height,
            width,
            data,
            bit_depth: None,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Image {
            height,
            width,
            data: vec![value; height * width],
            bit_depth: None,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Image {
            height,
            width,
            data,
            bit_depth: None,
        }
    }

    pub fn with_bit_depth(mut self, bits: u8) -> Self {
        self.bit_depth = Some(bits);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bit depth of the file this image was decoded from, if any.
    pub fn bit_depth(&self) -> Option<u8> {
        self.bit_depth
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` pixel-wise; the result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image> {
        Image::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Pixel-wise combination of two same-shape images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.expect_same_dims(other)?;
        Image::new(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn expect_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }

    /// Copies the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(shape_err!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height,
                self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Image::from_raw_unchecked(height, width, data))
    }

    /// Pads on the bottom and right edges by mirror reflection (edge pixel not
    /// repeated), the layout `numpy.pad(..., mode="reflect")` produces.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Image> {
        if bottom >= self.height.max(2) || right >= self.width.max(2) {
            return Err(shape_err!(
                "reflect padding ({bottom}, {right}) too large for {}x{}",
                self.height,
                self.width
            ));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        let (h, w) = (self.height + bottom, self.width + right);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            let sr = reflect(r, self.height);
            for c in 0..w {
                data.push(self.get(sr, reflect(c, self.width)));
            }
        }
        Ok(Image::from_raw_unchecked(h, w, data))
    }
}

/// Bilinear resampling with the half-pixel (`align_corners = false`)
/// convention and edge-clamped sampling.
///
/// Resizing to the current dims returns a bit-identical copy.
pub fn bilinear_resize(img: &Image, out_height: usize, out_width: usize) -> Result<Image> {
    if out_height == 0 || out_width == 0 {
        return Err(shape_err!("output dims must be positive, got {out_height}x{out_width}"));
    }
    if img.dims() == (out_height, out_width) {
        return Ok(img.clone());
    }
    let rows = axis_taps(img.height, out_height);
    let cols = axis_taps(img.width, out_width);
    let mut data = Vec::with_capacity(out_height * out_width);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            // lerp form keeps constant regions bit-exact
            let top = lerp(img.get(r0, c0), img.get(r0, c1), fc);
            let bottom = lerp(img.get(r1, c0), img.get(r1, c1), fc);
            data.push(lerp(top, bottom, fr));
        }
    }
    Ok(Image::from_raw_unchecked(out_height, out_width, data))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Source taps `(i0, i1, frac)` for each output coordinate along one axis.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let last = (in_len - 1) as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Square crop of side `size` at a uniformly random position.
///
/// `size` must be even so the crop stays sub-samplable.
pub fn random_crop<R: Rng + ?Sized>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    if size > img.height || size > img.width {
        return Err(shape_err!(
            "crop size {size} exceeds image {}x{}",
            img.height,
            img.width
        ));
    }
    if size == 0 || size % 2 != 0 {
        return Err(domain_err!("crop size must be even and positive, got {size}"));
    }
    let top = rng.random_range(0..=img.height - size);
    let left = rng.random_range(0..=img.width - size);
    img.crop(top, left, size, size)
}
