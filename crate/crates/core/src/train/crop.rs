use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{pad2d, PaddingSpec};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::IGNORE_LABEL;

/// Square crops drawn uniformly from a padded image. Labels in the padded
/// border are set to the ignore label.
#[derive(Clone, Debug)]
pub struct CropSampler {
    pub crop_size: usize,
    pub padding: PaddingSpec,
    rng: ChaCha8Rng,
}

impl CropSampler {
    pub fn new(crop_size: usize, padding: PaddingSpec, seed: u64) -> Result<Self> {
        if crop_size == 0 {
            return Err(Error::config("crop size must be >= 1"));
        }
        Ok(CropSampler {
            crop_size,
            padding,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Top-left corner of the next crop inside a padded `h x w` image, uniform
    /// over every position where the crop fits.
    pub fn anchor(&mut self, padded_h: usize, padded_w: usize) -> Result<(usize, usize)> {
        let s = self.crop_size;
        if s > padded_h || s > padded_w {
            return Err(Error::data(format!(
                "crop {s}x{s} does not fit the padded {padded_h}x{padded_w} image"
            )));
        }
        Ok((
            self.rng.random_range(0..=padded_h - s),
            self.rng.random_range(0..=padded_w - s),
        ))
    }

    pub fn sample(&mut self, image: &Tensor<f32>, labels: &LabelMap) -> Result<(Tensor<f32>, LabelMap)> {
        let s = image.shape();
        if labels.shape() != (s.n, s.h, s.w) {
            return Err(Error::data(format!(
                "labels {:?} do not match image {s}",
                labels.shape()
            )));
        }
        let padded = pad2d(image, self.padding)?;
        let plabels = labels.pad(self.padding.width, IGNORE_LABEL);
        let ps = padded.shape();
        let (top, left) = self.anchor(ps.h, ps.w)?;
        let n = self.crop_size;
        Ok((padded.crop(top, left, n, n)?, plabels.crop(top, left, n, n)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn crops_stay_inside_padded_image() {
        let mut sampler = CropSampler::new(10, PaddingSpec::reflect(4), 1).unwrap();
        for _ in 0..500 {
            let (t, l) = sampler.anchor(20, 14).unwrap();
            assert!(t + 10 <= 20 && l + 10 <= 14);
        }
        assert!(sampler.anchor(9, 20).is_err());
    }

    #[test]
    fn border_labels_are_ignored() {
        let img = Tensor::<f32>::random(Shape::new(1, 3, 6, 6).unwrap(), 1, 0.0, 1.0).unwrap();
        let labels = LabelMap::filled(1, 6, 6, 1).unwrap();
        let mut sampler = CropSampler::new(14, PaddingSpec::reflect(4), 2).unwrap();
        let (crop, l) = sampler.sample(&img, &labels).unwrap();
        assert_eq!(crop.shape(), Shape::new(1, 3, 14, 14).unwrap());
        assert_eq!(l.at(0, 0, 0), IGNORE_LABEL);
        assert_eq!(l.at(0, 4, 4), 1);
        assert_eq!(l.data().iter().filter(|&&v| v == 1).count(), 36);
    }

    #[test]
    fn anchors_are_uniform() {
        // Chi-square over the 5 x 5 anchor grid of a 12-pixel crop in a
        // 16-pixel padded image; 24 degrees of freedom, 0.1% critical value 51.2.
        let mut sampler = CropSampler::new(12, PaddingSpec::NONE, 7).unwrap();
        let mut counts = [0usize; 25];
        let draws = 25_000;
        for _ in 0..draws {
            let (t, l) = sampler.anchor(16, 16).unwrap();
            counts[t * 5 + l] += 1;
        }
        let expect = draws as f64 / 25.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 51.2, "chi2 = {chi2}");
    }
}
