//! Straight-line network descriptions and their execution.

mod exec;
mod rewrite;
mod rf;
mod spec;
mod weights;

pub use exec::{backward, forward, ForwardCache, ForwardOutput, LayerCache};
pub use rewrite::{rewrite_dense, RewriteMode};
pub use rf::{receptive_field, ReceptiveFieldReport, RfEntry};
pub use spec::{ConvLayerSpec, Layer, NetworkSpec, PoolLayerSpec};
pub use weights::NetworkWeights;
