//! The 2x2 cell sub-sampler.
//!
//! An even-sized image is tiled into 2x2 cells and one pixel is drawn
//! uniformly from each cell. The drawn pixels form the half-resolution input
//! `y_J`; the remaining three quarters of the image, with the drawn positions
//! zeroed by the binary mask `m_J`, form the training target `y_{J^c}`.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::image::Image;

/// The selected index set `J` together with its mask.
///
/// Offsets are stored as one byte per cell, `2 * row_offset + col_offset`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsampleSet {
    height: usize,
    width: usize,
    offsets: Vec<u8>,
}

impl SubsampleSet {
    /// Draws one position per 2x2 cell, each uniform over the four positions.
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Result<Self> {
        check_even(height, width)?;
        let cells = (height / 2) * (width / 2);
        let offsets = (0..cells).map(|_| rng.random_range(0..4u8)).collect();
        Ok(SubsampleSet { height, width, offsets })
    }

    /// Builds a set from explicit per-cell `(row, col)` offsets in `{0, 1}`.
    pub fn from_offsets(height: usize, width: usize, offsets: &[(u8, u8)]) -> Result<Self> {
        check_even(height, width)?;
        if offsets.len() != (height / 2) * (width / 2) {
            return Err(shape_err!(
                "{} offsets for {} cells",
                offsets.len(),
                (height / 2) * (width / 2)
            ));
        }
        if let Some(bad) = offsets.iter().find(|(r, c)| *r > 1 || *c > 1) {
            return Err(shape_err!("cell offset {bad:?} outside the 2x2 cell"));
        }
        Ok(SubsampleSet {
            height,
            width,
            offsets: offsets.iter().map(|&(r, c)| 2 * r + c).collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Dims of the sub-sampled image.
    pub fn cell_dims(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// `|J|`, one per cell.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `|J^c| = H * W - |J|`.
    pub fn complement_len(&self) -> usize {
        self.height * self.width - self.len()
    }

    /// `(row, col)` offset inside cell `(ci, cj)`.
    pub fn offset(&self, ci: usize, cj: usize) -> (usize, usize) {
        let o = self.offsets[ci * (self.width / 2) + cj] as usize;
        (o / 2, o % 2)
    }

    /// Full-resolution coordinates of the pixel selected in cell `(ci, cj)`.
    pub fn selected(&self, ci: usize, cj: usize) -> (usize, usize) {
        let (dr, dc) = self.offset(ci, cj);
        (2 * ci + dr, 2 * cj + dc)
    }

    /// Row-major full-resolution coordinates of every selected pixel.
    pub fn selected_coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (ch, cw) = self.cell_dims();
        (0..ch).flat_map(move |ci| (0..cw).map(move |cj| self.selected(ci, cj)))
    }

    /// Flat indices of the selected pixels in a row-major `H x W` buffer.
    pub fn selected_flat(&self) -> Vec<usize> {
        self.selected_coords().map(|(r, c)| r * self.width + c).collect()
    }

    /// Binary mask `m_J`: 0 at selected pixels, 1 elsewhere.
    pub fn mask(&self) -> Image {
        let mut data = vec![1.0; self.height * self.width];
        for idx in self.selected_flat() {
            data[idx] = 0.0;
        }
        Image::from_raw_unchecked(self.height, self.width, data)
    }

    fn expect_dims(&self, y: &Image) -> Result<()> {
        if y.dims() != (self.height, self.width) {
            return Err(shape_err!(
                "image {}x{} does not match sub-sample set {}x{}",
                y.height(),
                y.width(),
                self.height,
                self.width
            ));
        }
        Ok(())
    }
}

fn check_even(height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0 {
        return Err(shape_err!(
            "sub-sampling needs even dims >= 2, got {height}x{width}; crop first"
        ));
    }
    Ok(())
}

/// Alias of [`SubsampleSet::sample`].
pub fn sample_indices<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Result<SubsampleSet> {
    SubsampleSet::sample(height, width, rng)
}

/// Gathers the selected pixel of every cell into an `H/2 x W/2` image.
pub fn extract_subsampled(y: &Image, s: &SubsampleSet) -> Result<Image> {
    s.expect_dims(y)?;
    let (ch, cw) = s.cell_dims();
    let data = s.selected_coords().map(|(r, c)| y.get(r, c)).collect();
    Ok(Image::from_raw_unchecked(ch, cw, data))
}

/// `m_J ⊙ y`: the input with selected pixels set to exactly zero.
pub fn make_complement(y: &Image, s: &SubsampleSet) -> Result<Image> {
    s.expect_dims(y)?;
    let mut out = y.clone();
    for (r, c) in s.selected_coords() {
        out.set(r, c, 0.0);
    }
    Ok(out)
}

/// Inverse of the split: scatters `y_J` back into the zeroed positions of
/// `y_{J^c}`.
pub fn reassemble(sub: &Image, complement: &Image, s: &SubsampleSet) -> Result<Image> {
    s.expect_dims(complement)?;
    if sub.dims() != s.cell_dims() {
        return Err(shape_err!(
            "sub-image {}x{} does not match cell grid {:?}",
            sub.height(),
            sub.width(),
            s.cell_dims()
        ));
    }
    let mut out = complement.clone();
    let (ch, cw) = s.cell_dims();
    for ci in 0..ch {
        for cj in 0..cw {
            let (r, c) = s.selected(ci, cj);
            out.set(r, c, sub.get(ci, cj));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_has_one_pixel_per_cell() {
        let s = SubsampleSet::sample(4, 4, &mut seed::rng(0)).unwrap();
        assert_eq!(s.len(), 4);
        let mut cells: Vec<_> = s.selected_coords().map(|(r, c)| (r / 2, c / 2)).collect();
        cells.sort();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn single_cell() {
        let s = SubsampleSet::sample(2, 2, &mut seed::rng(1)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.mask().data().iter().filter(|&&v| v == 0.0).count(), 1);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(matches!(
            SubsampleSet::sample(5, 4, &mut seed::rng(0)),
            Err(crate::Error::Shape(_))
        ));
        assert!(SubsampleSet::sample(0, 4, &mut seed::rng(0)).is_err());
    }

    #[test]
    fn arange_with_top_left_offsets() {
        let y = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64).unwrap();
        let s = SubsampleSet::from_offsets(4, 4, &[(0, 0); 4]).unwrap();
        assert_eq!(extract_subsampled(&y, &s).unwrap().data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn constant_image_gives_constant_subimage() {
        let y = Image::filled(8, 6, 0.25);
        let s = SubsampleSet::sample(8, 6, &mut seed::rng(4)).unwrap();
        assert!(extract_subsampled(&y, &s).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn complement_of_ones() {
        let y = Image::filled(4, 4, 1.0);
        let s = SubsampleSet::sample(4, 4, &mut seed::rng(2)).unwrap();
        let comp = make_complement(&y, &s).unwrap();
        assert_eq!(comp.data().iter().filter(|&&v| v == 0.0).count(), 4);
        assert_eq!(comp.data().iter().filter(|&&v| v == 1.0).count(), 12);
        assert_eq!(comp, y.zip_map(&s.mask(), |a, m| a * m).unwrap());
    }

    #[test]
    fn mismatched_dims_rejected() {
        let s = SubsampleSet::sample(4, 4, &mut seed::rng(2)).unwrap();
        let y = Image::filled(4, 6, 1.0);
        assert!(extract_subsampled(&y, &s).is_err());
        assert!(make_complement(&y, &s).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_round_trip(ch in 1usize..12, cw in 1usize..12, seed_v in any::<u64>()) {
            let (h, w) = (2 * ch, 2 * cw);
            let mut rng = seed::rng(seed_v);
            // distinct nonzero values so zeroed positions are identifiable
            let y = Image::from_fn(h, w, |r, c| 1.0 + (r * w + c) as f64).unwrap();
            let s = SubsampleSet::sample(h, w, &mut rng).unwrap();
            let sub = extract_subsampled(&y, &s).unwrap();
            let comp = make_complement(&y, &s).unwrap();
            prop_assert_eq!(s.len() + s.complement_len(), h * w);
            prop_assert_eq!(4 * s.complement_len(), 3 * h * w);
            let mask = s.mask();
            for (i, (&m, &v)) in mask.data().iter().zip(comp.data()).enumerate() {
                let in_j = s.selected_flat().contains(&i);
                prop_assert_eq!(m == 0.0, in_j);
                prop_assert_eq!(v == 0.0, in_j);
                if !in_j {
                    prop_assert!(!sub.data().contains(&v));
                }
            }
            prop_assert_eq!(reassemble(&sub, &comp, &s).unwrap(), y);
            prop_assert_eq!(s, SubsampleSet::sample(h, w, &mut seed::rng(seed_v)).unwrap());
        }
    }
}
