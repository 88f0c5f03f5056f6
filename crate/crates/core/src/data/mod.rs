//! Label maps, PPM/PGM interchange and synthetic scenes.

mod dataset;
mod pnm;
mod synth;

pub use dataset::{read_dataset, write_dataset, Sample};
pub use pnm::{read_image, read_labels, write_image, write_labels};
pub use synth::{generate, generate_one, ShapeKind, ShapesSceneConfig};

use crate::error::{Error, Result};

/// Integer class map of shape `(n, h, w)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::arg("label map extents must be >= 1"));
        }
        if data.len() != n * h * w {
            return Err(Error::arg(format!(
                "label data length {} does not match {n}x{h}x{w}",
                data.len()
            )));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u32) -> Result<Self> {
        Self::new(n, h, w, vec![value; n * h * w])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u32 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn item(&self, n: usize) -> LabelMap {
        let len = self.h * self.w;
        LabelMap {
            n: 1,
            h: self.h,
            w: self.w,
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.h || left + w > self.w {
            return Err(Error::arg(format!(
                "label crop {h}x{w} at ({top},{left}) does not fit {}x{}",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(self.n * h * w);
        for n in 0..self.n {
            for y in top..top + h {
                let row = (n * self.h + y) * self.w + left;
                data.extend_from_slice(&self.data[row..row + w]);
            }
        }
        LabelMap::new(self.n, h, w, data)
    }

    /// Border of `width` pixels filled with `value` on every side.
    pub fn pad(&self, width: usize, value: u32) -> LabelMap {
        let (h, w) = (self.h + 2 * width, self.w + 2 * width);
        let mut data = vec![value; self.n * h * w];
        for n in 0..self.n {
            for y in 0..self.h {
                let dst = (n * h + y + width) * w + width;
                let src = (n * self.h + y) * self.w;
                data[dst..dst + self.w].copy_from_slice(&self.data[src..src + self.w]);
            }
        }
        LabelMap {
            n: self.n,
            h,
            w,
            data,
        }
    }

    pub fn stack(items: &[LabelMap]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::arg("cannot stack zero label maps"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(Error::arg("cannot stack label maps of different extents"));
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(n, first.h, first.w, data)
    }
}
