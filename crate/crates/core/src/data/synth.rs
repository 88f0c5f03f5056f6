//! Synthetic scenes of filled shapes on a noisy background.
//!
//! Every shape is filled from one shared palette, so a pixel deep inside a
//! shape says nothing about its class. The class shows only in a thin rim
//! whose color is class-specific, and in the outline of the shape itself.
//! Labelling interiors therefore needs a receptive field that reaches the
//! rim, which is what the context module provides.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(ShapeKind::Rectangle),
            "disk" => Ok(ShapeKind::Disk),
            "triangle" => Ok(ShapeKind::Triangle),
            other => Err(Error::config(format!("unknown shape kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesSceneConfig {
    pub height: usize,
    pub width: usize,
    /// Background plus foreground classes; at least 2.
    pub classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Shape kind `i` is drawn with class `1 + i % (classes - 1)`.
    pub kinds: Vec<ShapeKind>,
    /// Shape size range in pixels (disk radius, half-side of rectangles).
    pub min_radius: f32,
    pub max_radius: f32,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for ShapesSceneConfig {
    fn default() -> Self {
        ShapesSceneConfig {
            height: 64,
            width: 64,
            classes: 3,
            min_shapes: 2,
            max_shapes: 4,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Disk],
            min_radius: 6.0,
            max_radius: 20.0,
            noise: 0.08,
            seed: 0,
        }
    }
}

const RIM: f32 = 2.0;
const FILL_PALETTE: [[f32; 3]; 4] = [
    [0.85, 0.55, 0.25],
    [0.30, 0.65, 0.85],
    [0.60, 0.80, 0.35],
    [0.75, 0.45, 0.75],
];
const BACKGROUND: [f32; 3] = [0.2, 0.2, 0.2];

fn rim_color(class: usize) -> [f32; 3] {
    match class {
        1 => [1.0, 1.0, 1.0],
        2 => [0.0, 0.0, 0.9],
        _ => {
            let t = (class as f32 * 0.618_034).fract();
            [t, 1.0 - t, (2.0 * t).fract()]
        }
    }
}

impl ShapesSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::config(format!("classes must be in 2..=255, got {}", self.classes)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("scenes must be at least 8x8"));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::config("min_shapes exceeds max_shapes"));
        }
        if self.kinds.is_empty() {
            return Err(Error::config("at least one shape kind is required"));
        }
        if !(self.min_radius >= 2.0 && self.min_radius <= self.max_radius && self.max_radius.is_finite()) {
            return Err(Error::config("radius range must satisfy 2 <= min_radius <= max_radius"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.deny_unknown(&["height", "width", "classes", "min_shapes", "max_shapes", "kinds", "min_radius", "max_radius", "noise", "seed"])?;
        let d = ShapesSceneConfig::default();
        let kinds = match kv.raw("kinds") {
            Some(list) => list
                .split(',')
                .map(|k| k.trim().parse())
                .collect::<Result<Vec<_>>>()?,
            None => d.kinds,
        };
        let cfg = ShapesSceneConfig {
            height: kv.get_or("height", d.height)?,
            width: kv.get_or("width", d.width)?,
            classes: kv.get_or("classes", d.classes)?,
            min_shapes: kv.get_or("min_shapes", d.min_shapes)?,
            max_shapes: kv.get_or("max_shapes", d.max_shapes)?,
            kinds,
            min_radius: kv.get_or("min_radius", d.min_radius)?,
            max_radius: kv.get_or("max_radius", d.max_radius)?,
            noise: kv.get_or("noise", d.noise)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Signed distance-like depth of `(y, x)` inside a shape: positive inside,
/// roughly the distance to the nearest edge.
enum Geometry {
    Rect { top: f32, left: f32, bottom: f32, right: f32 },
    Disk { cy: f32, cx: f32, r: f32 },
    Tri { v: [(f32, f32); 3] },
}

impl Geometry {
    fn depth(&self, y: f32, x: f32) -> f32 {
        match *self {
            Geometry::Rect { top, left, bottom, right } => (y - top).min(bottom - y).min(x - left).min(right - x),
            Geometry::Disk { cy, cx, r } => r - ((y - cy).powi(2) + (x - cx).powi(2)).sqrt(),
            Geometry::Tri { v } => {
                // Orient counter-clockwise, then take the min distance to the edge lines.
                let area = (v[1].1 - v[0].1) * (v[2].0 - v[0].0) - (v[2].1 - v[0].1) * (v[1].0 - v[0].0);
                let v = if area < 0.0 { [v[0], v[2], v[1]] } else { v };
                (0..3)
                    .map(|i| {
                        let (ay, ax) = v[i];
                        let (by, bx) = v[(i + 1) % 3];
                        let len = ((by - ay).powi(2) + (bx - ax).powi(2)).sqrt().max(1e-6);
                        ((bx - ax) * (y - ay) - (by - ay) * (x - ax)) / len
                    })
                    .fold(f32::INFINITY, f32::min)
            }
        }
    }
}

fn sample_geometry(kind: ShapeKind, cfg: &ShapesSceneConfig, rng: &mut ChaCha8Rng) -> Geometry {
    let (h, w) = (cfg.height as f32, cfg.width as f32);
    let r = rng.random_range(cfg.min_radius..=cfg.max_radius);
    let cy = rng.random_range(0.0..h);
    let cx = rng.random_range(0.0..w);
    match kind {
        ShapeKind::Rectangle => {
            let ry = r * rng.random_range(0.6..=1.0);
            let rx = r * rng.random_range(0.6..=1.0);
            Geometry::Rect {
                top: cy - ry,
                left: cx - rx,
                bottom: cy + ry,
                right: cx + rx,
            }
        }
        ShapeKind::Disk => Geometry::Disk { cy, cx, r },
        ShapeKind::Triangle => {
            let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let v = std::array::from_fn(|i| {
                let a = phase + i as f32 * std::f32::consts::TAU / 3.0;
                (cy + 1.3 * r * a.sin(), cx + 1.3 * r * a.cos())
            });
            Geometry::Tri { v }
        }
    }
}

/// Sample `index` of the stream: a pure function of `(cfg, index)`.
pub fn generate_one(cfg: &ShapesSceneConfig, index: u64) -> Result<(Tensor<f32>, LabelMap)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (h, w) = (cfg.height, cfg.width);
    let plane = h * w;
    let mut color = vec![BACKGROUND; plane];
    let mut labels = vec![0u32; plane];

    let count = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    for _ in 0..count {
        let ki = rng.random_range(0..cfg.kinds.len());
        let class = 1 + ki % (cfg.classes - 1);
        let fill = FILL_PALETTE[rng.random_range(0..FILL_PALETTE.len())];
        let rim = rim_color(class);
        let geom = sample_geometry(cfg.kinds[ki], cfg, &mut rng);
        for y in 0..h {
            for x in 0..w {
                let d = geom.depth(y as f32 + 0.5, x as f32 + 0.5);
                if d > 0.0 {
                    color[y * w + x] = if d <= RIM { rim } else { fill };
                    labels[y * w + x] = class as u32;
                }
            }
        }
    }

    let mut data = vec![0.0f32; 3 * plane];
    for (i, rgb) in color.iter().enumerate() {
        for c in 0..3 {
            let n = if cfg.noise > 0.0 {
                rng.random_range(-cfg.noise..=cfg.noise)
            } else {
                0.0
            };
            data[c * plane + i] = (rgb[c] + n).clamp(0.0, 1.0);
        }
    }
    Ok((
        Tensor::from_vec(Shape::new(1, 3, h, w)?, data)?,
        LabelMap::new(1, h, w, labels)?,
    ))
}

pub fn generate(cfg: &ShapesSceneConfig, count: usize) -> Result<Vec<(Tensor<f32>, LabelMap)>> {
    cfg.validate()?;
    let samples = crate::par::map_collect(count, |i| generate_one(cfg, i as u64));
    samples.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream() {
        assert!(generate(&ShapesSceneConfig::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn deterministic() {
        let cfg = ShapesSceneConfig {
            seed: 11,
            ..Default::default()
        };
        let a = generate(&cfg, 5).unwrap();
        let b = generate(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_one(&cfg, 3).unwrap(), a[3]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn histogram_covers_all_classes() {
        let cfg = ShapesSceneConfig {
            classes: 4,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Triangle],
            seed: 3,
            ..Default::default()
        };
        let mut hist = [0usize; 4];
        for (img, labels) in generate(&cfg, 100).unwrap() {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for &l in labels.data() {
                hist[l as usize] += 1;
            }
        }
        assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
    }

    #[test]
    fn config_file() {
        let cfg = ShapesSceneConfig::from_kv_text("height=32\nwidth=40\nkinds=disk,triangle\nseed=9\n").unwrap();
        assert_eq!((cfg.height, cfg.width, cfg.seed), (32, 40, 9));
        assert_eq!(cfg.kinds, vec![ShapeKind::Disk, ShapeKind::Triangle]);
        assert!(ShapesSceneConfig::from_kv_text("classes=1").is_err());
        assert!(ShapesSceneConfig::from_kv_text("colour=red").is_err());
    }

    #[test]
    fn interiors_share_fill_palette() {
        let cfg = ShapesSceneConfig {
            noise: 0.0,
            seed: 2,
            ..Default::default()
        };
        for (img, labels) in generate(&cfg, 20).unwrap() {
            let plane = 64 * 64;
            for i in 0..plane {
                let rgb = [img.data()[i], img.data()[plane + i], img.data()[2 * plane + i]];
                if labels.data()[i] == 0 {
                    assert_eq!(rgb, BACKGROUND);
                } else {
                    let class = labels.data()[i] as usize;
                    assert!(rgb == rim_color(class) || FILL_PALETTE.contains(&rgb));
                }
            }
        }
    }
}
