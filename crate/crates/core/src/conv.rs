//! Dilated 2-D convolution.
//!
//! All kernels compute cross-correlation (no filter flip). The production
//! kernel reads the input directly at dilated tap offsets; no dilated filter is
//! ever materialized. [`conv2d_oracle`] does exactly that instead and exists
//! only as an independent reference.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter<T = f32> {
    /// `(out_channels, in_channels, kh, kw)`.
    weights: Tensor<T>,
    bias: Vec<T>,
}

impl<T: Real> ConvFilter<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let s = weights.shape();
        if s.h.is_multiple_of(2) || s.w.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "kernel extents must be odd, got {}x{}",
                s.h, s.w
            )));
        }
        if bias.len() != s.n {
            return Err(Error::arg(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                s.n
            )));
        }
        Ok(ConvFilter { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        let shape = Shape::new(out_channels, in_channels, kernel, kernel)?;
        Self::new(Tensor::zeros(shape)?, vec![T::zero(); out_channels])
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    #[inline]
    pub fn kh(&self) -> usize {
        self.weights.shape().h
    }

    #[inline]
    pub fn kw(&self) -> usize {
        self.weights.shape().w
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn parts_mut(&mut self) -> (&mut Tensor<T>, &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }

    /// Weight at output channel `b`, input channel `a`, kernel tap `(ky, kx)`.
    #[inline]
    pub fn w(&self, b: usize, a: usize, ky: usize, kx: usize) -> T {
        self.weights.at(b, a, ky, kx)
    }

    pub fn cast<U: Real>(&self) -> ConvFilter<U> {
        ConvFilter {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::of(b.as_f64())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    Reflect,
}

impl std::fmt::Display for PadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PadMode::Zero => "zero",
            PadMode::Reflect => "reflect",
        })
    }
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PadMode::Zero),
            "reflect" => Ok(PadMode::Reflect),
            other => Err(Error::arg(format!("unknown padding mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PaddingSpec {
    pub width: usize,
    pub mode: PadMode,
}

impl PaddingSpec {
    pub const NONE: PaddingSpec = PaddingSpec {
        width: 0,
        mode: PadMode::Zero,
    };

    pub fn zero(width: usize) -> Self {
        PaddingSpec {
            width,
            mode: PadMode::Zero,
        }
    }

    pub fn reflect(width: usize) -> Self {
        PaddingSpec {
            width,
            mode: PadMode::Reflect,
        }
    }
}

/// Source index for padded coordinate `i - width` in an axis of length `len`.
/// Reflection mirrors about the edge pixel without repeating it: -1 maps to 1.
#[inline]
fn reflect_index(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let j = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    j as usize
}

fn check_pad(shape: Shape, spec: PaddingSpec) -> Result<()> {
    if spec.mode == PadMode::Reflect && spec.width > 0 {
        let limit = shape.h.min(shape.w) - 1;
        if spec.width > limit {
            return Err(Error::arg(format!(
                "reflect padding width {} exceeds {} for a {}x{} image",
                spec.width, limit, shape.h, shape.w
            )));
        }
    }
    Ok(())
}

pub fn pad2d<T: Real>(x: &Tensor<T>, spec: PaddingSpec) -> Result<Tensor<T>> {
    if spec.width == 0 {
        return Ok(x.clone());
    }
    let s = x.shape();
    check_pad(s, spec)?;
    let p = spec.width;
    let out_shape = Shape::new(s.n, s.c, s.h + 2 * p, s.w + 2 * p)?;
    let mut out = Tensor::zeros(out_shape)?;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let src = x.data();
    par::for_each_chunk(out.data_mut(), out_shape.plane(), |plane, dst| {
        let src = &src[plane * s.plane()..(plane + 1) * s.plane()];
        for y in 0..oh {
            let sy = y as isize - p as isize;
            let row = &mut dst[y * ow..(y + 1) * ow];
            match spec.mode {
                PadMode::Zero => {
                    if sy >= 0 && (sy as usize) < s.h {
                        let sy = sy as usize;
                        row[p..p + s.w].copy_from_slice(&src[sy * s.w..(sy + 1) * s.w]);
                    }
                }
                PadMode::Reflect => {
                    let sy = reflect_index(sy, s.h);
                    for (x, v) in row.iter_mut().enumerate() {
                        let sx = reflect_index(x as isize - p as isize, s.w);
                        *v = src[sy * s.w + sx];
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Adjoint of [`pad2d`]: folds the gradient of a padded tensor back onto the
/// unpadded input, accumulating mirrored positions in reflect mode.
pub fn pad2d_backward<T: Real>(
    grad_padded: &Tensor<T>,
    spec: PaddingSpec,
    input_shape: Shape,
) -> Result<Tensor<T>> {
    let p = spec.width;
    let gs = grad_padded.shape();
    if gs != Shape::new(input_shape.n, input_shape.c, input_shape.h + 2 * p, input_shape.w + 2 * p)? {
        return Err(Error::arg(format!(
            "padded gradient {gs} does not match input {input_shape} with padding {p}"
        )));
    }
    if p == 0 {
        return Ok(grad_padded.clone());
    }
    check_pad(input_shape, spec)?;
    let s = input_shape;
    let mut out = Tensor::zeros(s)?;
    let g = grad_padded.data();
    par::for_each_chunk(out.data_mut(), s.plane(), |plane, dst| {
        let g = &g[plane * gs.plane()..(plane + 1) * gs.plane()];
        for y in 0..gs.h {
            let sy = y as isize - p as isize;
            for x in 0..gs.w {
                let sx = x as isize - p as isize;
                let v = g[y * gs.w + x];
                match spec.mode {
                    PadMode::Zero => {
                        if sy >= 0 && (sy as usize) < s.h && sx >= 0 && (sx as usize) < s.w {
                            dst[sy as usize * s.w + sx as usize] += v;
                        }
                    }
                    PadMode::Reflect => {
                        dst[reflect_index(sy, s.h) * s.w + reflect_index(sx, s.w)] += v;
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Output extent of a valid-mode dilated window along one axis, if any.
pub fn conv_out_extent(input: usize, kernel: usize, dilation: usize, stride: usize) -> Option<usize> {
    let span = (kernel - 1) * dilation + 1;
    (input >= span).then(|| (input - span) / stride + 1)
}

fn conv_out_shape<T: Real>(
    x: &Tensor<T>,
    f: &ConvFilter<T>,
    dilation: usize,
    stride: usize,
) -> Result<Shape> {
    if dilation == 0 || stride == 0 {
        return Err(Error::arg("dilation and stride must be >= 1"));
    }
    let s = x.shape();
    if s.c != f.in_channels() {
        return Err(Error::arg(format!(
            "input has {} channels but filter expects {}",
            s.c,
            f.in_channels()
        )));
    }
    let oh = conv_out_extent(s.h, f.kh(), dilation, stride);
    let ow = conv_out_extent(s.w, f.kw(), dilation, stride);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Shape::new(s.n, f.out_channels(), oh, ow),
        _ => Err(Error::arg(format!(
            "dilated kernel {}x{} (dilation {dilation}) spans more than the {}x{} input",
            (f.kh() - 1) * dilation + 1,
            (f.kw() - 1) * dilation + 1,
            s.h,
            s.w
        ))),
    }
}

/// Valid-mode dilated cross-correlation:
/// `out[b, p] = bias[b] + sum_a sum_t x[a, p*stride + dilation*t] * f[b, a, t]`.
///
/// Each output element is reduced in the order bias, input channel, kernel
/// row, kernel column, so the result does not depend on thread scheduling.
pub fn conv2d_dilated<T: Real>(
    x: &Tensor<T>,
    f: &ConvFilter<T>,
    dilation: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let os = conv_out_shape(x, f, dilation, stride)?;
    let is = x.shape();
    let mut out = Tensor::zeros(os)?;
    let (kh, kw) = (f.kh(), f.kw());
    let src = x.data();
    let weights = f.weights().data();
    let bias = f.bias();
    par::for_each_chunk(out.data_mut(), os.plane(), |plane, dst| {
        let (n, b) = (plane / os.c, plane % os.c);
        dst.fill(bias[b]);
        for a in 0..is.c {
            let src = &src[is.index(n, a, 0, 0)..][..is.plane()];
            let wk = &weights[(b * is.c + a) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                if kw == 3 && stride == 1 {
                    // Same per-element order as the generic loop, one pass per row.
                    let (w0, w1, w2) = (wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                    for oy in 0..os.h {
                        let row = &src[(oy + ky * dilation) * is.w..];
                        let (r0, r1, r2) = (&row[..os.w], &row[dilation..][..os.w], &row[2 * dilation..][..os.w]);
                        let out_row = &mut dst[oy * os.w..(oy + 1) * os.w];
                        for (i, o) in out_row.iter_mut().enumerate() {
                            *o = ((*o + w0 * r0[i]) + w1 * r1[i]) + w2 * r2[i];
                        }
                    }
                    continue;
                }
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    for oy in 0..os.h {
                        let row = &src[(oy * stride + ky * dilation) * is.w + kx * dilation..];
                        let out_row = &mut dst[oy * os.w..(oy + 1) * os.w];
                        if stride == 1 {
                            for (o, &v) in out_row.iter_mut().zip(row) {
                                *o += wv * v;
                            }
                        } else {
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                *o += wv * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Reference dilated convolution: builds the zero-inserted filter of extent
/// `(k-1)*dilation+1` and runs a plain strided correlation with it.
pub fn conv2d_oracle<T: Real>(
    x: &Tensor<T>,
    f: &ConvFilter<T>,
    dilation: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let os = conv_out_shape(x, f, dilation, stride)?;
    let dilated = dilate_filter(f, dilation)?;
    let ds = dilated.shape();
    let mut out = Tensor::zeros(os)?;
    let data = out.data_mut();
    for n in 0..os.n {
        for b in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = f.bias()[b];
                    for a in 0..ds.c {
                        for ty in 0..ds.h {
                            for tx in 0..ds.w {
                                acc += dilated.at(b, a, ty, tx)
                                    * x.at(n, a, oy * stride + ty, ox * stride + tx);
                            }
                        }
                    }
                    data[os.index(n, b, oy, ox)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Explicit dilated filter with zeros between taps.
pub fn dilate_filter<T: Real>(f: &ConvFilter<T>, dilation: usize) -> Result<Tensor<T>> {
    if dilation == 0 {
        return Err(Error::arg("dilation must be >= 1"));
    }
    let ws = f.weights().shape();
    let shape = Shape::new(
        ws.n,
        ws.c,
        (ws.h - 1) * dilation + 1,
        (ws.w - 1) * dilation + 1,
    )?;
    let mut out = Tensor::zeros(shape)?;
    for b in 0..ws.n {
        for a in 0..ws.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let i = shape.index(b, a, ky * dilation, kx * dilation);
                    out.data_mut()[i] = f.w(b, a, ky, kx);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Vec<T>,
}

/// Dot product over 8 interleaved partial sums, combined in a fixed order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        acc += x * y;
    }
    acc
}

/// Analytic gradients of [`conv2d_dilated`] with respect to its input, weights
/// and bias, given the gradient of the output.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    f: &ConvFilter<T>,
    dilation: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let os = conv_out_shape(x, f, dilation, stride)?;
    if grad_out.shape() != os {
        return Err(Error::arg(format!(
            "output gradient {} does not match forward output {os}",
            grad_out.shape()
        )));
    }
    let is = x.shape();
    let (kh, kw) = (f.kh(), f.kw());
    let g = grad_out.data();
    let src = x.data();
    let weights = f.weights().data();

    let grad_b: Vec<T> = par::map_collect(os.c, |b| {
        let mut acc = T::zero();
        for n in 0..os.n {
            for &v in &g[os.index(n, b, 0, 0)..][..os.plane()] {
                acc += v;
            }
        }
        acc
    });

    let mut grad_w = Tensor::zeros(f.weights().shape())?;
    par::for_each_chunk(grad_w.data_mut(), kh * kw, |i, dst| {
        let (b, a) = (i / is.c, i % is.c);
        for n in 0..os.n {
            let gp = &g[os.index(n, b, 0, 0)..][..os.plane()];
            let xp = &src[is.index(n, a, 0, 0)..][..is.plane()];
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::zero();
                    for oy in 0..os.h {
                        let row = &xp[(oy * stride + ky * dilation) * is.w + kx * dilation..];
                        let grow = &gp[oy * os.w..(oy + 1) * os.w];
                        if stride == 1 {
                            acc += dot(grow, &row[..os.w]);
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                acc += gv * row[ox * stride];
                            }
                        }
                    }
                    dst[ky * kw + kx] += acc;
                }
            }
        }
    });

    let mut grad_x = Tensor::zeros(is)?;
    par::for_each_chunk(grad_x.data_mut(), is.plane(), |plane, dst| {
        let (n, a) = (plane / is.c, plane % is.c);
        for b in 0..os.c {
            let gp = &g[os.index(n, b, 0, 0)..][..os.plane()];
            let wk = &weights[(b * is.c + a) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    for oy in 0..os.h {
                        let row = &mut dst[(oy * stride + ky * dilation) * is.w + kx * dilation..];
                        let grow = &gp[oy * os.w..(oy + 1) * os.w];
                        if stride == 1 {
                            for (o, &gv) in row.iter_mut().zip(grow) {
                                *o += wv * gv;
                            }
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                row[ox * stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    });

    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
