use std::fmt;
use std::str::FromStr;

use crate::conv::{conv_out_extent, PadMode, PaddingSpec};
use crate::error::{Error, Result};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: PaddingSpec,
    /// Apply `max(., 0)` after the convolution.
    pub relu: bool,
}

impl ConvLayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvLayerSpec {
            in_channels,
            out_channels,
            kernel,
            dilation: 1,
            stride: 1,
            padding: PaddingSpec::NONE,
            relu: false,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: PaddingSpec) -> Self {
        self.padding = p;
        self
    }

    pub fn relu(mut self, on: bool) -> Self {
        self.relu = on;
        self
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Max pooling. `dilation` is 1 unless the layer sits downstream of an
/// unstrided pool after a dense rewrite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl PoolLayerSpec {
    pub fn new(kernel: usize, stride: usize) -> Self {
        PoolLayerSpec {
            kernel,
            stride,
            dilation: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    Conv(ConvLayerSpec),
    Pool(PoolLayerSpec),
}

impl Layer {
    /// `(kernel, dilation, stride)` as seen by receptive-field arithmetic.
    pub fn window(&self) -> (usize, usize, usize) {
        match *self {
            Layer::Conv(c) => (c.kernel, c.dilation, c.stride),
            Layer::Pool(p) => (p.kernel, p.dilation, p.stride),
        }
    }

    pub fn padding(&self) -> usize {
        match self {
            Layer::Conv(c) => c.padding.width,
            Layer::Pool(_) => 0,
        }
    }

    /// Output spatial extent for one axis, or `None` if the window underflows.
    pub fn out_extent(&self, input: usize) -> Option<usize> {
        let (k, d, s) = self.window();
        conv_out_extent(input + 2 * self.padding(), k, d, s)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv(c) => write!(
                f,
                "conv in={} out={} k={} d={} s={} pad={}:{} relu={}",
                c.in_channels,
                c.out_channels,
                c.kernel,
                c.dilation,
                c.stride,
                c.padding.width,
                c.padding.mode,
                u8::from(c.relu)
            ),
            Layer::Pool(p) => {
                write!(f, "pool k={} s={}", p.kernel, p.stride)?;
                if p.dilation != 1 {
                    write!(f, " d={}", p.dilation)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = NetworkSpec { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &ConvLayerSpec)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::Conv(c) => Some((i, c)),
            Layer::Pool(_) => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    pub fn in_channels(&self) -> Option<usize> {
        self.conv_layers().next().map(|(_, c)| c.in_channels)
    }

    pub fn out_channels(&self) -> Option<usize> {
        self.conv_layers().last().map(|(_, c)| c.out_channels)
    }

    /// Concatenate two networks; the channel chain must line up.
    pub fn then(&self, other: &NetworkSpec) -> Result<NetworkSpec> {
        let mut layers = self.layers.clone();
        layers.extend_from_slice(&other.layers);
        NetworkSpec::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        let mut channels: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, d, s) = layer.window();
            if k == 0 || d == 0 || s == 0 {
                return Err(Error::arg(format!(
                    "layer {i}: kernel, dilation and stride must be >= 1"
                )));
            }
            if let Layer::Conv(c) = layer {
                if c.kernel % 2 == 0 {
                    return Err(Error::arg(format!("layer {i}: conv kernel {} is even", c.kernel)));
                }
                if c.in_channels == 0 || c.out_channels == 0 {
                    return Err(Error::arg(format!("layer {i}: channel counts must be >= 1")));
                }
                if let Some(prev) = channels {
                    if prev != c.in_channels {
                        return Err(Error::arg(format!(
                            "layer {i}: expects {} input channels but previous layer produces {prev}",
                            c.in_channels
                        )));
                    }
                }
                channels = Some(c.out_channels);
            }
        }
        Ok(())
    }

    /// Output shape for an input shape, naming the first layer that underflows.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mut s = input;
        if let Some(c) = self.in_channels() {
            if c != s.c {
                return Err(Error::arg(format!(
                    "input has {} channels but the network expects {c}",
                    s.c
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (h, w) = match (layer.out_extent(s.h), layer.out_extent(s.w)) {
                (Some(h), Some(w)) => (h, w),
                _ => {
                    return Err(Error::arg(format!(
                        "layer {i} ({layer}): {}x{} input is smaller than its dilated window",
                        s.h, s.w
                    )))
                }
            };
            let c = match layer {
                Layer::Conv(c) => c.out_channels,
                Layer::Pool(_) => s.c,
            };
            s = Shape::new(s.n, c, h, w)?;
        }
        Ok(s)
    }

    /// Border to add around an input so a stride-free network returns an
    /// output of the same spatial extent. For a padding-free network this is
    /// `(receptive field - 1) / 2`.
    pub fn input_buffer(&self) -> usize {
        let mut shrink: isize = 0;
        let mut jump: isize = 1;
        for layer in &self.layers {
            let (k, d, s) = layer.window();
            shrink += ((k as isize - 1) * d as isize - 2 * layer.padding() as isize) * jump;
            jump *= s as isize;
        }
        (shrink.max(0) as usize).div_ceil(2)
    }

    /// Smallest square input extent the network accepts.
    pub fn min_input_extent(&self) -> usize {
        (1..)
            .find(|&e| {
                let mut v = e;
                self.layers.iter().all(|l| match l.out_extent(v) {
                    Some(o) => {
                        v = o;
                        true
                    }
                    None => false,
                })
            })
            .unwrap()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("`{key}` expects a nonnegative integer, got `{v}`")))
}

fn parse_conv(line: usize, fields: &[(&str, &str)]) -> Result<ConvLayerSpec> {
    let mut spec = ConvLayerSpec::new(0, 0, 0);
    let (mut seen_in, mut seen_out, mut seen_k) = (false, false, false);
    for &(key, v) in fields {
        match key {
            "in" => {
                spec.in_channels = parse_usize(line, key, v)?;
                seen_in = true;
            }
            "out" => {
                spec.out_channels = parse_usize(line, key, v)?;
                seen_out = true;
            }
            "k" => {
                spec.kernel = parse_usize(line, key, v)?;
                seen_k = true;
            }
            "d" => spec.dilation = parse_usize(line, key, v)?,
            "s" => spec.stride = parse_usize(line, key, v)?,
            "pad" => {
                let (w, mode) = v
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line, format!("`pad` expects <n>:<zero|reflect>, got `{v}`")))?;
                spec.padding = PaddingSpec {
                    width: parse_usize(line, key, w)?,
                    mode: PadMode::from_str(mode).map_err(|e| Error::parse(line, e.to_string()))?,
                };
            }
            "relu" => {
                spec.relu = match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err(Error::parse(line, format!("`relu` expects 0 or 1, got `{v}`"))),
                }
            }
            _ => return Err(Error::parse(line, format!("unknown conv field `{key}`"))),
        }
    }
    if !(seen_in && seen_out && seen_k) {
        return Err(Error::parse(line, "conv layer requires in=, out= and k="));
    }
    Ok(spec)
}

fn parse_pool(line: usize, fields: &[(&str, &str)]) -> Result<PoolLayerSpec> {
    let mut spec = PoolLayerSpec::new(0, 1);
    let mut seen_k = false;
    for &(key, v) in fields {
        match key {
            "k" => {
                spec.kernel = parse_usize(line, key, v)?;
                seen_k = true;
            }
            "s" => spec.stride = parse_usize(line, key, v)?,
            "d" => spec.dilation = parse_usize(line, key, v)?,
            _ => return Err(Error::parse(line, format!("unknown pool field `{key}`"))),
        }
    }
    if !seen_k {
        return Err(Error::parse(line, "pool layer requires k="));
    }
    Ok(spec)
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut tokens = body.split_whitespace();
            let kind = tokens.next().unwrap();
            let fields = tokens
                .map(|t| {
                    t.split_once('=')
                        .ok_or_else(|| Error::parse(line, format!("expected key=value, got `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(match kind {
                "conv" => Layer::Conv(parse_conv(line, &fields)?),
                "pool" => Layer::Pool(parse_pool(line, &fields)?),
                other => return Err(Error::parse(line, format!("unknown layer kind `{other}`"))),
            });
        }
        NetworkSpec::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let text = "\
# a small net
conv in=3 out=8 k=3 d=1 s=1 pad=1:reflect relu=1

pool k=2 s=2   # downsample
conv in=8 out=4 k=3 d=2 s=1 pad=0:zero relu=0
";
        let net: NetworkSpec = text.parse().unwrap();
        assert_eq!(net.len(), 3);
        assert_eq!(
            net.to_string(),
            "conv in=3 out=8 k=3 d=1 s=1 pad=1:reflect relu=1\npool k=2 s=2\nconv in=8 out=4 k=3 d=2 s=1 pad=0:zero relu=0\n"
        );
        let again: NetworkSpec = net.to_string().parse().unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = "conv in=3 out=3 k=3\nconv in=3 out=3 k=3 bogus=1\n"
            .parse::<NetworkSpec>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!("pool s=2".parse::<NetworkSpec>().is_err());
        assert!("conv in=3 out=3 k=3 pad=1:mirror".parse::<NetworkSpec>().is_err());
    }

    #[test]
    fn channel_chain_is_checked() {
        let err = NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(3, 4, 3)),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(5, 4, 3)),
        ]);
        assert!(err.is_err());
        assert!(NetworkSpec::new(vec![Layer::Conv(ConvLayerSpec::new(3, 4, 2))]).is_err());
    }

    #[test]
    fn output_shape_and_buffer() {
        let net = NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(1, 1, 3)),
            Layer::Conv(ConvLayerSpec::new(1, 1, 3).dilation(4)),
        ])
        .unwrap();
        let s = net.output_shape(Shape::new(1, 1, 20, 20).unwrap()).unwrap();
        assert_eq!((s.h, s.w), (10, 10));
        assert_eq!(net.input_buffer(), 5);
        assert_eq!(net.min_input_extent(), 11);
        let err = net.output_shape(Shape::new(1, 1, 9, 9).unwrap()).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }
}
