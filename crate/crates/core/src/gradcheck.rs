//! Central-difference checks of the analytic gradients, in double precision.
//!
//! Networks are checked through the scalar objective `sum(r * net(x))` with a
//! fixed random projection `r`, against every weight, bias and input entry.
//! Relu and max-pool are piecewise linear, so a difference that straddles a
//! kink is not a derivative; coordinates whose perturbation flips any relu
//! mask or pool selection are left out and counted as `skipped`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::PaddingSpec;
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::netgraph::{backward, forward, ConvLayerSpec, Layer, LayerCache, NetworkSpec, NetworkWeights};
use crate::tensor::{Shape, Tensor};
use crate::train::softmax_xent;
use crate::IGNORE_LABEL;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckCase {
    pub name: String,
    pub seed: u64,
    /// `|a - n| / (|a| + |n|)` over all checked coordinates.
    pub rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        // Most coordinates must survive the kink filter for the check to mean anything.
        self.rel_error < TOLERANCE && self.checked > 0 && self.skipped * 4 <= self.checked
    }
}

impl fmt::Display for GradCheckCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} seed={} rel_err={:.3e} checked={} skipped={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.seed,
            self.rel_error,
            self.checked,
            self.skipped
        )
    }
}

#[derive(Default)]
struct Accum {
    diff: f64,
    a: f64,
    n: f64,
    checked: usize,
    skipped: usize,
}

impl Accum {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.diff += (analytic - numeric).powi(2);
        self.a += analytic * analytic;
        self.n += numeric * numeric;
        self.checked += 1;
    }

    fn finish(self, name: String, seed: u64) -> GradCheckCase {
        let denom = self.a.sqrt() + self.n.sqrt();
        GradCheckCase {
            name,
            seed,
            rel_error: if denom == 0.0 { 0.0 } else { self.diff.sqrt() / denom },
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng, scale: f64) -> Result<Tensor<f64>> {
    let data = (0..shape.len()).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data)
}

/// Check `net` on a random input with spatial extent `extent`.
pub fn check_network(net: &NetworkSpec, extent: usize, seed: u64, name: &str) -> Result<GradCheckCase> {
    let cin = net.in_channels().ok_or_else(|| Error::arg("cannot check an empty network"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = NetworkWeights::<f64>::zeros(net)?;
    for p in w.params_mut() {
        *p = rng.random_range(-0.5..0.5);
    }
    let x = uniform(Shape::new(2, cin, extent, extent)?, &mut rng, 1.0)?;
    let out_shape = net.output_shape(x.shape())?;
    let r = uniform(out_shape, &mut rng, 1.0)?;

    let objective = |w: &NetworkWeights<f64>, x: &Tensor<f64>| -> Result<(f64, Vec<u64>)> {
        let out = forward(net, w, x, true)?;
        let value = out.y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let mut sig = Vec::new();
        for layer in &out.cache.expect("kept").layers {
            match layer {
                LayerCache::Conv { output, .. } => {
                    sig.extend(output.data().chunks(64).map(|c| {
                        c.iter().enumerate().fold(0u64, |m, (i, v)| m | (u64::from(*v > 0.0) << i))
                    }));
                }
                LayerCache::Pool { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
            }
        }
        Ok((value, sig))
    };

    let base = forward(net, &w, &x, true)?;
    let (grads, grad_x) = backward(net, &w, base.cache.as_ref(), &r)?;
    let (_, sig0) = objective(&w, &x)?;
    let mut acc = Accum::default();

    let analytic_w: Vec<f64> = grads.params().copied().collect();
    for (k, &a) in analytic_w.iter().enumerate() {
        let probe = |delta: f64| -> Result<(f64, Vec<u64>)> {
            let mut wp = w.clone();
            *wp.params_mut().nth(k).expect("index in range") += delta;
            objective(&wp, &x)
        };
        let (fp, sp) = probe(STEP)?;
        let (fm, sm) = probe(-STEP)?;
        if sp != sig0 || sm != sig0 {
            acc.skipped += 1;
        } else {
            acc.push(a, (fp - fm) / (2.0 * STEP));
        }
    }
    for (k, &a) in grad_x.data().iter().enumerate() {
        let probe = |delta: f64| -> Result<(f64, Vec<u64>)> {
            let mut xp = x.clone();
            xp.data_mut()[k] += delta;
            objective(&w, &xp)
        };
        let (fp, sp) = probe(STEP)?;
        let (fm, sm) = probe(-STEP)?;
        if sp != sig0 || sm != sig0 {
            acc.skipped += 1;
        } else {
            acc.push(a, (fp - fm) / (2.0 * STEP));
        }
    }
    Ok(acc.finish(name.to_string(), seed))
}

/// One 3x3 conv layer, 2 -> 3 channels, padded to keep the extent.
pub fn conv_net(dilation: usize, padding: PaddingSpec) -> Result<NetworkSpec> {
    NetworkSpec::new(vec![Layer::Conv(
        ConvLayerSpec::new(2, 3, 3).dilation(dilation).padding(padding),
    )])
}

pub fn check_conv(dilation: usize, padding: PaddingSpec, seed: u64) -> Result<GradCheckCase> {
    let net = conv_net(dilation, padding)?;
    let name = format!("conv d={dilation} pad={}:{}", padding.width, padding.mode);
    check_network(&net, 11, seed, &name)
}

/// Reflect-padded 3x3, dilated 3x3 with zero padding, then 1x1; relu between.
pub fn composite_net() -> NetworkSpec {
    NetworkSpec::new(vec![
        Layer::Conv(ConvLayerSpec::new(2, 4, 3).padding(PaddingSpec::reflect(1)).relu(true)),
        Layer::Conv(ConvLayerSpec::new(4, 4, 3).dilation(2).padding(PaddingSpec::zero(2)).relu(true)),
        Layer::Conv(ConvLayerSpec::new(4, 3, 1)),
    ])
    .expect("valid composite")
}

/// Loss gradient on random `2x3x4x4` logits with some ignored pixels.
pub fn check_loss(seed: u64) -> Result<GradCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = uniform(Shape::new(2, 3, 4, 4)?, &mut rng, 2.0)?;
    let labels = (0..32)
        .map(|_| if rng.random_bool(0.1) { IGNORE_LABEL } else { rng.random_range(0..3) })
        .collect();
    let labels = LabelMap::new(2, 4, 4, labels)?;
    let (_, grad) = softmax_xent(&logits, &labels, IGNORE_LABEL)?;
    let mut acc = Accum::default();
    for (k, &a) in grad.data().iter().enumerate() {
        let at = |delta: f64| -> Result<f64> {
            let mut l = logits.clone();
            l.data_mut()[k] += delta;
            Ok(softmax_xent(&l, &labels, IGNORE_LABEL)?.0)
        };
        acc.push(a, (at(STEP)? - at(-STEP)?) / (2.0 * STEP));
    }
    Ok(acc.finish("softmax_xent".into(), seed))
}

/// Dilations {1, 2, 4} under both padding modes, the loss and the composite,
/// each over `seeds` seeds starting at `base_seed`; plus `extra` if given.
pub fn standard_suite(base_seed: u64, seeds: u64, extra: Option<&NetworkSpec>) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::new();
    for s in base_seed..base_seed + seeds {
        for d in [1, 2, 4] {
            out.push(check_conv(d, PaddingSpec::zero(d), s)?);
            out.push(check_conv(d, PaddingSpec::reflect(d), s)?);
        }
        out.push(check_loss(s)?);
        out.push(check_network(&composite_net(), 9, s, "composite")?);
        if let Some(net) = extra {
            let extent = net.min_input_extent().max(2 * net.input_buffer() + 1) + 2;
            out.push(check_network(net, extent, s, "user net")?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::PoolLayerSpec;

    #[test]
    fn single_seed_suite_passes() {
        for case in standard_suite(0, 1, None).unwrap() {
            assert!(case.passed(), "{case}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut acc = Accum::default();
        acc.push(1.0, 1.1);
        assert!(!acc.finish("x".into(), 0).passed());
    }

    #[test]
    fn pooled_net() {
        let net = NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(1, 2, 3).relu(true)),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(2, 2, 1)),
        ])
        .unwrap();
        let case = check_network(&net, 10, 5, "pool").unwrap();
        assert!(case.passed(), "{case}");
    }
}
