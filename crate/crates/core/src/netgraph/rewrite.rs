use std::collections::BTreeSet;
use std::str::FromStr;

use crate::conv::PaddingSpec;
use crate::error::{Error, Result};
use crate::netgraph::{Layer, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewriteMode {
    /// Delete each ablated pooling layer.
    RemovePool,
    /// Keep the pooling operation but set its stride to 1.
    KeepPoolUnstride,
}

impl FromStr for RewriteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remove" | "remove_pool" => Ok(RewriteMode::RemovePool),
            "unstride" | "keep_pool_unstride" => Ok(RewriteMode::KeepPoolUnstride),
            other => Err(Error::arg(format!("unknown rewrite mode `{other}`"))),
        }
    }
}

/// Convert a strided classification network into a dense one.
///
/// Every layer downstream of an ablated pool has its dilation multiplied by
/// that pool's stride; factors compound across ablations. Padding on every
/// conv layer except the first is dropped, so the rewritten network sees the
/// same input pixels the original did.
pub fn rewrite_dense(net: &NetworkSpec, ablate: &BTreeSet<usize>, mode: RewriteMode) -> Result<NetworkSpec> {
    for &i in ablate {
        match net.layers().get(i) {
            Some(Layer::Pool(p)) if p.stride >= 2 => {}
            Some(Layer::Pool(p)) => {
                return Err(Error::arg(format!(
                    "layer {i} is a pool with stride {}; only strided pools can be ablated",
                    p.stride
                )))
            }
            Some(Layer::Conv(_)) => return Err(Error::arg(format!("layer {i} is not a pooling layer"))),
            None => {
                return Err(Error::arg(format!(
                    "layer index {i} out of range for a {}-layer network",
                    net.len()
                )))
            }
        }
    }
    if ablate.is_empty() {
        return Ok(net.clone());
    }

    let mut factor = 1;
    let mut layers = Vec::with_capacity(net.len());
    for (i, layer) in net.layers().iter().enumerate() {
        match *layer {
            Layer::Conv(mut c) => {
                c.dilation *= factor;
                if i > 0 {
                    c.padding = PaddingSpec::NONE;
                }
                layers.push(Layer::Conv(c));
            }
            Layer::Pool(mut p) => {
                p.dilation *= factor;
                if ablate.contains(&i) {
                    factor *= p.stride;
                    if mode == RewriteMode::RemovePool {
                        continue;
                    }
                    p.stride = 1;
                }
                layers.push(Layer::Pool(p));
            }
        }
    }
    NetworkSpec::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{ConvLayerSpec, PoolLayerSpec};

    fn classifier() -> NetworkSpec {
        NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(1, 2, 3).padding(PaddingSpec::zero(1))),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(2, 2, 3).padding(PaddingSpec::zero(1))),
            Layer::Pool(PoolLayerSpec::new(2, 2)),
            Layer::Conv(ConvLayerSpec::new(2, 1, 3)),
        ])
        .unwrap()
    }

    fn dilations(net: &NetworkSpec) -> Vec<usize> {
        net.conv_layers().map(|(_, c)| c.dilation).collect()
    }

    #[test]
    fn remove_both_pools() {
        let out = rewrite_dense(&classifier(), &BTreeSet::from([1, 3]), RewriteMode::RemovePool).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(dilations(&out), vec![1, 2, 4]);
        assert!(out.conv_layers().skip(1).all(|(_, c)| c.padding.width == 0));
        assert_eq!(out.conv_layers().next().unwrap().1.padding.width, 1);
    }

    #[test]
    fn unstride_keeps_pools() {
        let out =
            rewrite_dense(&classifier(), &BTreeSet::from([1, 3]), RewriteMode::KeepPoolUnstride).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(dilations(&out), vec![1, 2, 4]);
        match out.layers()[3] {
            Layer::Pool(p) => assert_eq!((p.stride, p.dilation), (1, 2)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn empty_ablation_is_identity() {
        let net = classifier();
        assert_eq!(rewrite_dense(&net, &BTreeSet::new(), RewriteMode::RemovePool).unwrap(), net);
    }

    #[test]
    fn ablating_non_pool_fails() {
        let net = classifier();
        assert!(rewrite_dense(&net, &BTreeSet::from([0]), RewriteMode::RemovePool).is_err());
        assert!(rewrite_dense(&net, &BTreeSet::from([9]), RewriteMode::RemovePool).is_err());
    }

    #[test]
    fn resolution_grows_when_pools_go() {
        use crate::tensor::Shape;
        let input = Shape::new(1, 1, 64, 64).unwrap();
        let net = classifier();
        let before = net.output_shape(input).unwrap();
        let after = rewrite_dense(&net, &BTreeSet::from([1, 3]), RewriteMode::RemovePool)
            .unwrap()
            .output_shape(input)
            .unwrap();
        // 64 -> 64 -> 32 -> 32 -> 16 -> 14 versus 64 -> 64 -> 60 -> 52.
        assert_eq!((before.h, after.h), (14, 52));
        // Four times the resolution per axis, less the unpadded border.
        assert_eq!(after.h, 4 * before.h - 4);
    }
}
