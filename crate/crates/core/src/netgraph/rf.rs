use std::fmt;

use crate::netgraph::{Layer, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RfEntry {
    pub rf_h: usize,
    pub rf_w: usize,
    /// Input-pixel spacing between adjacent elements entering this layer.
    pub jump: usize,
    /// Cumulative stride after this layer (input extent / output extent).
    pub resolution_divisor: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceptiveFieldReport {
    pub layers: Vec<Layer>,
    pub entries: Vec<RfEntry>,
}

impl ReceptiveFieldReport {
    pub fn last(&self) -> Option<&RfEntry> {
        self.entries.last()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.rf_h).collect()
    }
}

/// Receptive field after every layer, by
/// `rf += (kernel - 1) * dilation * jump; jump *= stride`.
pub fn receptive_field(net: &NetworkSpec) -> ReceptiveFieldReport {
    let mut rf = 1;
    let mut jump = 1;
    let entries = net
        .layers()
        .iter()
        .map(|layer| {
            let (k, d, s) = layer.window();
            rf += (k - 1) * d * jump;
            let entry = RfEntry {
                rf_h: rf,
                rf_w: rf,
                jump,
                resolution_divisor: jump * s,
            };
            jump *= s;
            entry
        })
        .collect();
    ReceptiveFieldReport {
        layers: net.layers().to_vec(),
        entries,
    }
}

impl fmt::Display for ReceptiveFieldReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5}  {:<6}{:>8}{:>10}{:>8}{:>12}{:>16}",
            "layer", "type", "kernel", "dilation", "stride", "truncation", "receptive field"
        )?;
        for (i, (layer, e)) in self.layers.iter().zip(&self.entries).enumerate() {
            let (kind, k, d, s, trunc) = match layer {
                Layer::Conv(c) => ("conv", c.kernel, c.dilation, c.stride, if c.relu { "yes" } else { "no" }),
                Layer::Pool(p) => ("pool", p.kernel, p.dilation, p.stride, "-"),
            };
            writeln!(
                f,
                "{:>5}  {:<6}{:>8}{:>10}{:>8}{:>12}{:>16}",
                i + 1,
                kind,
                format!("{k}x{k}"),
                d,
                s,
                trunc,
                format!("{}x{}", e.rf_h, e.rf_w)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{ConvLayerSpec, PoolLayerSpec};

    fn stack(dilations: &[usize]) -> NetworkSpec {
        NetworkSpec::new(
            dilations
                .iter()
                .map(|&d| Layer::Conv(ConvLayerSpec::new(1, 1, 3).dilation(d)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exponential_stack() {
        assert_eq!(receptive_field(&stack(&[1, 2, 4])).sizes(), vec![3, 7, 15]);
        for n in 1..=6 {
            let d: Vec<usize> = (0..n).map(|i| 1 << i).collect();
            let sizes = receptive_field(&stack(&d)).sizes();
            for (i, rf) in sizes.into_iter().enumerate() {
                assert_eq!(rf, (1 << (i + 2)) - 1);
            }
        }
    }

    #[test]
    fn pointwise_layer() {
        let net = NetworkSpec::new(vec![Layer::Conv(ConvLayerSpec::new(4, 4, 1))]).unwrap();
        assert_eq!(receptive_field(&net).sizes(), vec![1]);
    }

    #[test]
    fn strides_and_pools_grow_the_jump() {
        let net = NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(1, 1, 3)),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(1, 1, 3)),
        ])
        .unwrap();
        let r = receptive_field(&net);
        assert_eq!(r.sizes(), vec![3, 4, 8]);
        assert_eq!(r.entries[2].jump, 2);
        assert_eq!(r.entries[1].resolution_divisor, 2);
        assert!(r.sizes().windows(2).all(|w| w[0] <= w[1]));
    }
}
