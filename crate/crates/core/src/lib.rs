//! Dense prediction with dilated convolutions.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] holds the rank-4 `(n, c, h, w)` storage every other module uses.
//! * [`conv`] is the dilated convolution operator, its explicit zero-inserted
//!   reference implementation, the analytic backward pass and padding.
//! * [`netgraph`] describes straight-line networks, executes them forward and
//!   backward, computes receptive fields and rewrites strided classification
//!   nets into dense ones.
//! * [`context`] builds the multi-scale context module and its identity
//!   initializations.
//! * [`train`], [`metrics`] and [`data`] supply the loss, SGD loop, mean IoU and
//!   a synthetic scene generator with PPM/PGM interchange.
//! * [`model`] wires a small front end to a context module and evaluates it;
//!   [`gradcheck`] and [`cli`] sit on top.
//!
//! With the default `parallel` feature the convolution kernels split work over
//! `(batch, channel)` planes with rayon. Every output element is still reduced
//! in a fixed order, so results are bit-identical with and without the feature.

pub mod cli;
pub mod context;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod netgraph;
mod kv;
mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};

/// Label value excluded from the loss and from metrics.
pub const IGNORE_LABEL: u32 = 255;
