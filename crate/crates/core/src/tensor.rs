//! Rank-4 dense tensors in `(n, c, h, w)` row-major layout.
//!
//! Random data comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! generator whose output is fixed across platforms for a given seed.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Scalar element type. `f32` is the production path, `f64` is used for
/// finite-difference checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn sample_uniform(rng: &mut ChaCha8Rng, low: Self, high: Self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn sample_uniform(rng: &mut ChaCha8Rng, low: Self, high: Self) -> Self {
        Uniform::new(low, high).expect("low < high").sample(rng)
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn sample_uniform(rng: &mut ChaCha8Rng, low: Self, high: Self) -> Self {
        Uniform::new(low, high).expect("low < high").sample(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let shape = Shape { n, c, h, w };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::arg(format!("all extents must be >= 1, got {self}")));
        }
        self.checked_len()
            .filter(|&len| len <= isize::MAX as usize / 8)
            .map(|_| ())
            .ok_or_else(|| Error::Size(format!("element count of {self} overflows")))
    }

    fn checked_len(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::arg(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn fill(shape: Shape, value: T) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::fill(shape, T::zero())
    }

    /// Uniform values in `[low, high)`, a pure function of all four arguments.
    pub fn random(shape: Shape, seed: u64, low: T, high: T) -> Result<Self> {
        if !(low < high) {
            return Err(Error::arg(format!(
                "random range requires low < high, got [{low:?}, {high:?})"
            )));
        }
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| T::sample_uniform(&mut rng, low, high))
            .collect();
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// The `(c, h, w)` plane block of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Spatial window `[top, top+h) x [left, left+w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(Error::arg(format!(
                "crop {h}x{w} at ({top},{left}) does not fit {s}"
            )));
        }
        let out_shape = Shape { h, w, ..s };
        let mut data = Vec::with_capacity(out_shape.len());
        for n in 0..s.n {
            for c in 0..s.c {
                for y in top..top + h {
                    let row = s.index(n, c, y, left);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    pub fn center_crop(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h > s.h || w > s.w || !(s.h - h).is_multiple_of(2) || !(s.w - w).is_multiple_of(2) {
            return Err(Error::arg(format!(
                "cannot center-crop {s} to {h}x{w}"
            )));
        }
        self.crop((s.h - h) / 2, (s.w - w) / 2, h, w)
    }

    /// Stack single-item tensors of equal shape along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::arg("cannot stack zero tensors"))?
            .shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::arg(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Self::from_vec(Shape { n, ..first }, data)
    }
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        same_shape(self, other)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }
}

fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::arg(format!(
            "shape mismatch: {} vs {}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn max_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    same_shape(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs())
        .fold(T::zero(), T::max))
}

const TENSOR_MAGIC: &[u8; 4] = b"DILT";
const TENSOR_VERSION: u32 = 1;

impl Tensor<f32> {
    /// Binary layout: `DILT`, u32 version, four u64 extents, then f32 values,
    /// all little-endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TENSOR_MAGIC)?;
        out.write_all(&TENSOR_VERSION.to_le_bytes())?;
        for e in [self.shape.n, self.shape.c, self.shape.h, self.shape.w] {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(4)? != TENSOR_MAGIC {
            return Err(Error::format(0, "bad tensor magic, expected DILT"));
        }
        let version = cur.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::format(4, format!("unsupported tensor version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let off = cur.pos;
            *d = usize::try_from(cur.u64()?)
                .map_err(|_| Error::format(off as u64, "extent does not fit usize"))?;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| Error::format(8, e.to_string()))?;
        let data = cur.f32s(shape.len())?;
        if !cur.is_done() {
            return Err(Error::format(cur.pos as u64, "trailing bytes after tensor payload"));
        }
        Tensor::from_vec(shape, data)
    }
}

/// Little-endian reader that reports the offset of truncation.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.bytes.len() as u64,
                    format!("truncated: needed {len} bytes at offset {}", self.pos),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
