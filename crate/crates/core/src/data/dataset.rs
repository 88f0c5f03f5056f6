//! Dataset directories: `images/NNNNNN.ppm`, `labels/NNNNNN.pgm` and a
//! `manifest.txt` with one `image label` pair of relative paths per line.

use std::fs;
use std::path::Path;

use crate::data::{read_image, read_labels, write_image, write_labels, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Sample = (Tensor<f32>, LabelMap);

pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = String::new();
    for (i, (image, labels)) in samples.iter().enumerate() {
        let img = format!("images/{i:06}.ppm");
        let lbl = format!("labels/{i:06}.pgm");
        write_image(dir.join(&img), image)?;
        write_labels(dir.join(&lbl), labels)?;
        manifest.push_str(&format!("{img} {lbl}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut out = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(img), Some(lbl), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(i + 1, "manifest lines need `<image> <labels>`"));
        };
        let image = read_image(dir.join(img))?;
        let labels = read_labels(dir.join(lbl))?;
        let s = image.shape();
        if labels.shape() != (1, s.h, s.w) {
            return Err(Error::data(format!("{img} and {lbl} differ in extent")));
        }
        out.push((image, labels));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ShapesSceneConfig};

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate(&ShapesSceneConfig::default(), 3).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().next(), Some("images/000000.ppm labels/000000.pgm"));
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for ((a, la), (b, lb)) in samples.iter().zip(&back) {
            assert_eq!(la, lb);
            let d = crate::tensor::max_abs_diff(a, b).unwrap();
            assert!(d <= 0.5 / 255.0 + 1e-6);
        }
    }
}
