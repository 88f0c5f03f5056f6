//! The multi-scale context module and its identity initializations.
//!
//! The module is a stack of 3x3 convolutions with exponentially growing
//! dilation and no pooling, closed by a 1x1 layer. The depth-8 schedule has
//! dilations `1,1,2,4,8,16,1` plus the 1x1 layer, for a 67x67 receptive field.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{PadMode, PaddingSpec};
use crate::error::{Error, Result};
use crate::netgraph::{receptive_field, ConvLayerSpec, Layer, NetworkSpec, NetworkWeights};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// `C` channels in every layer.
    Basic,
    /// Widths `2C,2C,4C,8C,16C,32C,32C,C` at depth 8.
    Large,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "large" => Ok(Variant::Large),
            other => Err(Error::config(format!("unknown context variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextConfig {
    /// Number of feature maps entering and leaving the module.
    pub classes: usize,
    pub variant: Variant,
    /// Total conv layers: 7, 8 or 10.
    pub depth: usize,
    /// Mode of the input buffer the harness adds around the module's input.
    pub padding_mode: PadMode,
}

impl ContextConfig {
    pub fn basic(classes: usize) -> Self {
        ContextConfig {
            classes,
            variant: Variant::Basic,
            depth: 8,
            padding_mode: PadMode::Zero,
        }
    }

    pub fn large(classes: usize) -> Self {
        ContextConfig {
            variant: Variant::Large,
            ..Self::basic(classes)
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn dilations(&self) -> Result<Vec<usize>> {
        match self.depth {
            7 => Ok(vec![1, 1, 2, 4, 8, 1, 1]),
            8 => Ok(vec![1, 1, 2, 4, 8, 16, 1, 1]),
            10 => Ok(vec![1, 1, 2, 4, 8, 16, 32, 64, 1, 1]),
            d => Err(Error::config(format!("context depth must be 7, 8 or 10, got {d}"))),
        }
    }

    /// Output channels of every layer.
    pub fn widths(&self) -> Result<Vec<usize>> {
        let c = self.classes;
        match self.variant {
            Variant::Basic => Ok(vec![c; self.dilations()?.len()]),
            Variant::Large => {
                // Twice the dilation in C units, capped at 32C; the closing 3x3
                // layer keeps the width and the 1x1 layer returns to C. At depth 8
                // this is 2C,2C,4C,8C,16C,32C,32C,C.
                let d = self.dilations()?;
                let n = d.len();
                let mut w: Vec<usize> = d[..n - 2].iter().map(|&d| (2 * d).min(32) * c).collect();
                w.push(w[n - 3]);
                w.push(c);
                Ok(w)
            }
        }
    }
}

pub fn build_context(cfg: &ContextConfig) -> Result<NetworkSpec> {
    if cfg.classes == 0 {
        return Err(Error::config("context module needs at least one channel"));
    }
    let dilations = cfg.dilations()?;
    let widths = cfg.widths()?;
    if let Some(w) = widths.iter().find(|&&w| w % cfg.classes != 0) {
        return Err(Error::config(format!("width {w} is not a multiple of C = {}", cfg.classes)));
    }
    let last = dilations.len() - 1;
    let mut input = cfg.classes;
    let layers = dilations
        .iter()
        .zip(&widths)
        .enumerate()
        .map(|(i, (&d, &out))| {
            let kernel = if i == last { 1 } else { 3 };
            let layer = ConvLayerSpec::new(input, out, kernel).dilation(d).relu(i != last);
            input = out;
            Layer::Conv(layer)
        })
        .collect();
    NetworkSpec::new(layers)
}

/// Half the receptive field: the border that keeps the output at the input's
/// spatial extent. 33 for the depth-8 module.
pub fn buffer_width(net: &NetworkSpec) -> usize {
    receptive_field(net).last().map_or(0, |e| (e.rf_h - 1) / 2)
}

/// The same network with its first layer padded by the context buffer.
pub fn with_input_buffer(net: &NetworkSpec, mode: PadMode) -> Result<NetworkSpec> {
    let width = buffer_width(net);
    let mut out = net.clone();
    match out.layers_mut().first_mut() {
        Some(Layer::Conv(c)) if c.padding.width == 0 => c.padding = PaddingSpec { width, mode },
        Some(Layer::Conv(_)) => return Err(Error::arg("first layer is already padded")),
        _ => return Err(Error::arg("context module must start with a conv layer")),
    }
    Ok(out)
}

fn center(kernel: usize) -> usize {
    kernel / 2
}

/// `k_b(t, a) = 1` iff `t` is the center tap and `a == b`; biases zero.
pub fn init_identity_basic<T: Real>(net: &NetworkSpec, classes: usize) -> Result<NetworkWeights<T>> {
    let mut w = NetworkWeights::zeros(net)?;
    for (f, (i, c)) in w.filters.iter_mut().zip(net.conv_layers()) {
        if c.in_channels != classes || c.out_channels != classes {
            return Err(Error::arg(format!(
                "layer {i} is {}->{} but identity init needs {classes}->{classes}",
                c.in_channels, c.out_channels
            )));
        }
        let m = center(c.kernel);
        let shape = f.weights().shape();
        let data = f.weights_mut().data_mut();
        for b in 0..classes {
            data[shape.index(b, b, m, m)] = T::one();
        }
    }
    Ok(w)
}

/// Identity initialization across changing widths. Between layers of `c_in`
/// and `c_out` maps, the center tap from `a` to `b` is `C / c_out` whenever
/// `floor(a C / c_in) == floor(b C / c_out)`; every other entry is drawn from
/// `N(0, sigma^2)` with `sigma = sigma_scale * C / c_out`. Biases are zero.
pub fn init_identity_general<T: Real>(
    net: &NetworkSpec,
    classes: usize,
    sigma_scale: f64,
    seed: u64,
) -> Result<NetworkWeights<T>> {
    if !(sigma_scale >= 0.0 && sigma_scale.is_finite()) {
        return Err(Error::config(format!("sigma scale must be finite and >= 0, got {sigma_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = NetworkWeights::zeros(net)?;
    for (f, (i, c)) in w.filters.iter_mut().zip(net.conv_layers()) {
        let (cin, cout) = (c.in_channels, c.out_channels);
        if classes == 0 || cin % classes != 0 || cout % classes != 0 {
            return Err(Error::config(format!(
                "layer {i}: C = {classes} must divide both {cin} and {cout}"
            )));
        }
        let signal = classes as f64 / cout as f64;
        let noise = (sigma_scale > 0.0)
            .then(|| Normal::new(0.0, sigma_scale * signal).expect("finite sigma"));
        let m = center(c.kernel);
        let shape = f.weights().shape();
        let data = f.weights_mut().data_mut();
        for b in 0..cout {
            for a in 0..cin {
                for ky in 0..c.kernel {
                    for kx in 0..c.kernel {
                        let idx = shape.index(b, a, ky, kx);
                        if ky == m && kx == m && a * classes / cin == b * classes / cout {
                            data[idx] = T::of(signal);
                        } else if let Some(n) = &noise {
                            data[idx] = T::of(n.sample(&mut rng));
                        }
                    }
                }
            }
        }
    }
    Ok(w)
}

/// `(weights, biases)` summed over every conv layer.
pub fn param_count(net: &NetworkSpec) -> (usize, usize) {
    net.conv_layers()
        .fold((0, 0), |(w, b), (_, c)| (w + c.weight_count(), b + c.out_channels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::forward;
    use crate::tensor::{max_abs_diff, Shape, Tensor};

    fn dilations(net: &NetworkSpec) -> Vec<usize> {
        net.conv_layers().map(|(_, c)| c.dilation).collect()
    }

    #[test]
    fn basic_depth_8() {
        let net = build_context(&ContextConfig::basic(21)).unwrap();
        assert_eq!(net.len(), 8);
        assert_eq!(dilations(&net), vec![1, 1, 2, 4, 8, 16, 1, 1]);
        assert!(net.conv_layers().all(|(_, c)| c.in_channels == 21 && c.out_channels == 21));
        assert!(net.conv_layers().all(|(_, c)| c.padding.width == 0));
        let relu: Vec<bool> = net.conv_layers().map(|(_, c)| c.relu).collect();
        assert_eq!(relu, [true, true, true, true, true, true, true, false]);
        assert_eq!(
            receptive_field(&net).sizes(),
            vec![3, 5, 9, 17, 33, 65, 67, 67]
        );
        assert_eq!(buffer_width(&net), 33);
    }

    #[test]
    fn depth_variants() {
        let net = build_context(&ContextConfig::basic(19).with_depth(10)).unwrap();
        assert_eq!(dilations(&net), vec![1, 1, 2, 4, 8, 16, 32, 64, 1, 1]);
        let net = build_context(&ContextConfig::basic(11).with_depth(7)).unwrap();
        assert_eq!(dilations(&net), vec![1, 1, 2, 4, 8, 1, 1]);
        assert!(build_context(&ContextConfig::basic(3).with_depth(9)).is_err());
    }

    #[test]
    fn large_widths() {
        let net = build_context(&ContextConfig::large(2)).unwrap();
        let widths: Vec<usize> = net.conv_layers().map(|(_, c)| c.out_channels).collect();
        assert_eq!(widths, vec![4, 4, 8, 16, 32, 64, 64, 2]);
        assert_eq!(net.in_channels(), Some(2));
        let w7: Vec<usize> = build_context(&ContextConfig::large(1).with_depth(7)).unwrap().conv_layers().map(|(_, c)| c.out_channels).collect();
        assert_eq!(w7, vec![2, 2, 4, 8, 16, 16, 1]);
        let w10: Vec<usize> = build_context(&ContextConfig::large(1).with_depth(10)).unwrap().conv_layers().map(|(_, c)| c.out_channels).collect();
        assert_eq!(w10, vec![2, 2, 4, 8, 16, 32, 32, 32, 32, 1]);
    }

    #[test]
    fn basic_identity_weights() {
        let c = 4;
        let net = build_context(&ContextConfig::basic(c)).unwrap();
        let w = init_identity_basic::<f32>(&net, c).unwrap();
        for f in &w.filters[..7] {
            let nz: Vec<usize> = f
                .weights()
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(nz.len(), c);
            for b in 0..c {
                assert_eq!(f.w(b, b, 1, 1), 1.0);
            }
        }
        let last = &w.filters[7];
        for b in 0..c {
            for a in 0..c {
                assert_eq!(last.w(b, a, 0, 0), if a == b { 1.0 } else { 0.0 });
            }
        }
        assert!(w.filters.iter().all(|f| f.bias().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn basic_identity_rejects_wide_layers() {
        let net = build_context(&ContextConfig::large(2)).unwrap();
        assert!(init_identity_basic::<f32>(&net, 2).is_err());
    }

    #[test]
    fn general_init_doubling_layer() {
        let net = NetworkSpec::new(vec![Layer::Conv(ConvLayerSpec::new(3, 6, 3))]).unwrap();
        let w = init_identity_general::<f64>(&net, 3, 0.0, 1).unwrap();
        let f = &w.filters[0];
        for b in 0..6 {
            for a in 0..3 {
                let expect = if a == b / 2 { 0.5 } else { 0.0 };
                assert_eq!(f.w(b, a, 1, 1), expect);
            }
        }
        assert_eq!(f.weights().data().iter().filter(|&&v| v != 0.0).count(), 6);
    }

    #[test]
    fn general_init_group_sums() {
        // Each output channel's matched group has c_in / C members of weight
        // C / c_out, so the center taps sum to c_in / c_out.
        let c = 2;
        let net = build_context(&ContextConfig::large(c)).unwrap();
        let w = init_identity_general::<f64>(&net, c, 0.0, 0).unwrap();
        for (f, (_, l)) in w.filters.iter().zip(net.conv_layers()) {
            let m = l.kernel / 2;
            for b in 0..l.out_channels {
                let sum: f64 = (0..l.in_channels).map(|a| f.w(b, a, m, m)).sum();
                assert_eq!(sum, l.in_channels as f64 / l.out_channels as f64);
            }
        }
    }

    #[test]
    fn general_init_noise_isolation() {
        let c = 2;
        let net = build_context(&ContextConfig::large(c)).unwrap();
        let exact = init_identity_general::<f64>(&net, c, 0.0, 0).unwrap();
        let a = init_identity_general::<f64>(&net, c, 0.01, 1).unwrap();
        let b = init_identity_general::<f64>(&net, c, 0.01, 2).unwrap();
        assert_eq!(init_identity_general::<f64>(&net, c, 0.01, 1).unwrap(), a);
        let mut differing = 0;
        for ((e, x), y) in exact.params().zip(a.params()).zip(b.params()) {
            if *e != 0.0 {
                assert_eq!((x, y), (e, e), "signal entries must not carry noise");
            } else if x != y {
                differing += 1;
            }
        }
        assert!(differing > 0);
        assert!(init_identity_general::<f64>(&net, 3, 0.0, 0).is_err());
    }

    #[test]
    fn param_counts() {
        let basic = |c| build_context(&ContextConfig::basic(c)).unwrap();
        assert_eq!(param_count(&basic(21)).0, 28224);
        assert_eq!(param_count(&basic(1)), (64, 8));
        let one = NetworkSpec::new(vec![Layer::Conv(ConvLayerSpec::new(5, 5, 1))]).unwrap();
        assert_eq!(param_count(&one), (25, 5));
        for c in 1..=64 {
            assert_eq!(param_count(&basic(c)).0, 64 * c * c);
        }
    }

    #[test]
    fn identity_forward_passes_input_through() {
        let c = 3;
        let net = build_context(&ContextConfig::basic(c)).unwrap();
        let w = init_identity_basic::<f32>(&net, c).unwrap();
        let x = Tensor::random(Shape::new(1, c, 80, 75).unwrap(), 5, 0.0, 1.0).unwrap();
        let y = forward(&net, &w, &x, false).unwrap().y;
        let crop = x.center_crop(80 - 66, 75 - 66).unwrap();
        assert!(max_abs_diff(&y, &crop).unwrap() < 1e-6);

        let buffered = with_input_buffer(&net, PadMode::Reflect).unwrap();
        let y = forward(&buffered, &w, &x, false).unwrap().y;
        assert!(max_abs_diff(&y, &x).unwrap() < 1e-6);
    }
}
