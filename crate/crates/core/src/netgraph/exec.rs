use crate::conv::{conv2d_backward, conv2d_dilated, conv_out_extent, pad2d, pad2d_backward};
use crate::error::{Error, Result};
use crate::netgraph::{Layer, NetworkSpec, NetworkWeights, PoolLayerSpec};
use crate::par;
use crate::tensor::{relu, Real, Shape, Tensor};

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv {
        input_shape: Shape,
        padded: Tensor<T>,
        /// Post-activation output; its positive entries form the relu mask.
        output: Tensor<T>,
    },
    Pool {
        input_shape: Shape,
        /// Per output element, the flat in-plane index of the selected input.
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub y: Tensor<T>,
    pub cache: Option<ForwardCache<T>>,
}

fn max_pool<T: Real>(x: &Tensor<T>, p: &PoolLayerSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let (oh, ow) = match (
        conv_out_extent(s.h, p.kernel, p.dilation, p.stride),
        conv_out_extent(s.w, p.kernel, p.dilation, p.stride),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => return Err(Error::arg(format!("pool window exceeds {}x{} input", s.h, s.w))),
    };
    let os = Shape::new(s.n, s.c, oh, ow)?;
    let src = x.data();
    let planes: Vec<(Vec<T>, Vec<usize>)> = par::map_collect(s.n * s.c, |plane| {
        let src = &src[plane * s.plane()..][..s.plane()];
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idx = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = oy * p.stride * s.w + ox * p.stride;
                for ky in 0..p.kernel {
                    for kx in 0..p.kernel {
                        let i = (oy * p.stride + ky * p.dilation) * s.w + ox * p.stride + kx * p.dilation;
                        // Strict comparison: the first maximum in scan order wins.
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                vals.push(src[best]);
                idx.push(best);
            }
        }
        (vals, idx)
    });
    let mut data = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    for (v, i) in planes {
        data.extend(v);
        argmax.extend(i);
    }
    Ok((Tensor::from_vec(os, data)?, argmax))
}

fn max_pool_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: Shape) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad_out.data();
    par::for_each_chunk(grad.data_mut(), input_shape.plane(), |plane, dst| {
        let range = plane * gs.plane()..(plane + 1) * gs.plane();
        for (&gv, &i) in g[range.clone()].iter().zip(&argmax[range]) {
            dst[i] += gv;
        }
    });
    Ok(grad)
}

fn in_layer<T>(i: usize, layer: &Layer, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Argument(m) => Error::Argument(format!("layer {i} ({layer}): {m}")),
        other => other,
    })
}

/// Apply the layers in order: pad, convolve, optional relu; or max-pool.
pub fn forward<T: Real>(
    net: &NetworkSpec,
    w: &NetworkWeights<T>,
    x: &Tensor<T>,
    keep_activations: bool,
) -> Result<ForwardOutput<T>> {
    w.check_against(net)?;
    net.output_shape(x.shape())?;
    let mut filters = w.filters.iter();
    let mut cache = Vec::with_capacity(if keep_activations { net.len() } else { 0 });
    let mut cur = x.clone();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                let f = filters.next().expect("weights checked against spec");
                let padded = in_layer(i, layer, pad2d(&cur, c.padding))?;
                let mut out = in_layer(i, layer, conv2d_dilated(&padded, f, c.dilation, c.stride))?;
                if c.relu {
                    out = relu(&out);
                }
                if keep_activations {
                    cache.push(LayerCache::Conv {
                        input_shape: cur.shape(),
                        padded,
                        output: out.clone(),
                    });
                }
                cur = out;
            }
            Layer::Pool(p) => {
                let (out, argmax) = in_layer(i, layer, max_pool(&cur, p))?;
                if keep_activations {
                    cache.push(LayerCache::Pool {
                        input_shape: cur.shape(),
                        argmax,
                    });
                }
                cur = out;
            }
        }
    }
    Ok(ForwardOutput {
        y: cur,
        cache: keep_activations.then_some(ForwardCache { layers: cache }),
    })
}

/// Reverse pass through the cached forward. Returns weight-shaped gradients
/// and the gradient with respect to the network input.
pub fn backward<T: Real>(
    net: &NetworkSpec,
    w: &NetworkWeights<T>,
    cache: Option<&ForwardCache<T>>,
    grad_y: &Tensor<T>,
) -> Result<(NetworkWeights<T>, Tensor<T>)> {
    let cache = cache.ok_or_else(|| Error::State("backward needs a cache from forward(.., true)".into()))?;
    w.check_against(net)?;
    if cache.layers.len() != net.len() {
        return Err(Error::State(format!(
            "cache holds {} layers but the network has {}",
            cache.layers.len(),
            net.len()
        )));
    }
    let mut grads = NetworkWeights::zeros(net)?;
    let mut fi = w.filters.len();
    let mut g = grad_y.clone();
    for (i, (layer, lc)) in net.layers().iter().zip(&cache.layers).enumerate().rev() {
        match (layer, lc) {
            (
                Layer::Conv(c),
                LayerCache::Conv {
                    input_shape,
                    padded,
                    output,
                },
            ) => {
                fi -= 1;
                if g.shape() != output.shape() {
                    return Err(Error::arg(format!(
                        "layer {i}: gradient {} does not match output {}",
                        g.shape(),
                        output.shape()
                    )));
                }
                if c.relu {
                    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                        if o <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                }
                let cg = in_layer(i, layer, conv2d_backward(padded, &w.filters[fi], c.dilation, c.stride, &g))?;
                let (gw, gb) = grads.filters[fi].parts_mut();
                *gw = cg.grad_w;
                gb.copy_from_slice(&cg.grad_b);
                g = in_layer(i, layer, pad2d_backward(&cg.grad_x, c.padding, *input_shape))?;
            }
            (Layer::Pool(_), LayerCache::Pool { input_shape, argmax }) => {
                if g.shape().len() != argmax.len() {
                    return Err(Error::arg(format!("layer {i}: gradient does not match pool output")));
                }
                g = max_pool_backward(&g, argmax, *input_shape)?;
            }
            _ => return Err(Error::State(format!("cache entry {i} does not match the layer kind"))),
        }
    }
    Ok((grads, g))
}
