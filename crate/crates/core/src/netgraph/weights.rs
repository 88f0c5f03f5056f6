use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvFilter;
use crate::error::{Error, Result};
use crate::netgraph::NetworkSpec;
use crate::tensor::{ByteCursor, Real, Shape, Tensor};

/// One filter per conv layer, in layer order. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T = f32> {
    pub filters: Vec<ConvFilter<T>>,
}

impl<T: Real> NetworkWeights<T> {
    pub fn zeros(net: &NetworkSpec) -> Result<Self> {
        let filters = net
            .conv_layers()
            .map(|(_, c)| ConvFilter::zeros(c.out_channels, c.in_channels, c.kernel))
            .collect::<Result<_>>()?;
        Ok(NetworkWeights { filters })
    }

    /// Uniform in `±sqrt(3 / fan_in)` with `fan_in = in_channels * k * k`;
    /// biases start at zero.
    pub fn random_fan_in(net: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self::zeros(net)?;
        for f in &mut out.filters {
            let fan_in = (f.in_channels() * f.kh() * f.kw()) as f64;
            let bound = T::of((3.0 / fan_in).sqrt());
            for w in f.weights_mut().data_mut() {
                *w = T::sample_uniform(&mut rng, -bound, bound);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn check_against(&self, net: &NetworkSpec) -> Result<()> {
        if self.filters.len() != net.conv_count() {
            return Err(Error::arg(format!(
                "network has {} conv layers but {} filters were supplied",
                net.conv_count(),
                self.filters.len()
            )));
        }
        for (f, (i, c)) in self.filters.iter().zip(net.conv_layers()) {
            let ws = f.weights().shape();
            if (ws.n, ws.c, ws.h, ws.w) != (c.out_channels, c.in_channels, c.kernel, c.kernel) {
                return Err(Error::arg(format!(
                    "layer {i}: filter {ws} does not match spec {}x{}x{}x{}",
                    c.out_channels, c.in_channels, c.kernel, c.kernel
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            filters: self.filters.iter().map(ConvFilter::cast).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.filters
            .iter()
            .map(|f| f.weights().data().len() + f.bias().len())
            .sum()
    }

    /// Flat views over every weight then every bias, filter by filter.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.filters
            .iter()
            .flat_map(|f| f.weights().data().iter().chain(f.bias()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.filters.iter_mut().flat_map(|f| {
            let (w, b) = f.parts_mut();
            w.data_mut().iter_mut().chain(b.iter_mut())
        })
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"DILW";
const WEIGHTS_VERSION: u32 = 1;

impl NetworkWeights<f32> {
    /// `DILW`, u32 version, u32 layer count, then per conv layer four u32
    /// dims `(out, in, kh, kw)`, f32 weights and f32 biases, little-endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.filters.len() as u32).to_le_bytes());
        for f in &self.filters {
            let s = f.weights().shape();
            for d in [s.n, s.c, s.h, s.w] {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in f.weights().data().iter().chain(f.bias()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::format(0, "bad weights magic, expected DILW"));
        }
        let version = cur.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(4, format!("unsupported weights version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut filters = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = cur.pos as u64;
            let mut d = [0usize; 4];
            for v in &mut d {
                *v = cur.u32()? as usize;
            }
            let shape = Shape::new(d[0], d[1], d[2], d[3]).map_err(|e| Error::format(at, e.to_string()))?;
            let weights = Tensor::from_vec(shape, cur.f32s(shape.len())?)?;
            let bias = cur.f32s(d[0])?;
            filters.push(ConvFilter::new(weights, bias).map_err(|e| Error::format(at, e.to_string()))?);
        }
        if !cur.is_done() {
            return Err(Error::format(cur.pos as u64, "trailing bytes after last layer"));
        }
        Ok(NetworkWeights { filters })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{ConvLayerSpec, Layer, PoolLayerSpec};

    fn net() -> NetworkSpec {
        NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(3, 4, 3)),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(4, 2, 1)),
        ])
        .unwrap()
    }

    #[test]
    fn fan_in_bounds() {
        let w = NetworkWeights::<f32>::random_fan_in(&net(), 3).unwrap();
        w.check_against(&net()).unwrap();
        let bound = (3.0f32 / 27.0).sqrt();
        assert!(w.filters[0].weights().data().iter().all(|v| v.abs() <= bound));
        assert!(w.filters[0].bias().iter().all(|&b| b == 0.0));
        assert_eq!(w.param_count(), 4 * 27 + 4 + 8 + 2);
        assert_eq!(w.params().count(), w.param_count());
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let w = NetworkWeights::<f32>::random_fan_in(&net(), 3).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DILW");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &4u32.to_le_bytes());
        assert_eq!(NetworkWeights::read_from(&buf[..]).unwrap(), w);
        assert!(matches!(
            NetworkWeights::read_from(&buf[..buf.len() - 1]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn mismatched_weights_rejected() {
        let other = NetworkSpec::new(vec![Layer::Conv(ConvLayerSpec::new(3, 4, 3))]).unwrap();
        let w = NetworkWeights::<f32>::zeros(&other).unwrap();
        assert!(w.check_against(&net()).is_err());
    }

    #[test]
    fn params_mut_touches_everything() {
        let mut w = NetworkWeights::<f64>::zeros(&net()).unwrap();
        for p in w.params_mut() {
            *p = 1.0;
        }
        assert!(w.params().all(|&v| v == 1.0));
    }
}
