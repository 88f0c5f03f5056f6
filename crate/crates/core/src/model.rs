//! Whole-model helpers: a small front end, attaching a context module,
//! dense prediction and evaluation.

use crate::context::with_input_buffer;
use crate::conv::{PadMode, PaddingSpec};
use crate::data::{LabelMap, Sample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::netgraph::{forward, ConvLayerSpec, Layer, NetworkSpec, NetworkWeights};
use crate::tensor::Tensor;
use crate::train::softmax_xent;
use crate::IGNORE_LABEL;

/// `depth - 1` same-padded 3x3 conv+relu layers of `width` maps, then a 1x1
/// layer producing `classes` scores. Reflect padding keeps the extent.
pub fn front_end_lite(in_channels: usize, width: usize, classes: usize, depth: usize) -> Result<NetworkSpec> {
    if depth < 2 {
        return Err(Error::config("front end needs at least 2 layers"));
    }
    let mut layers = Vec::with_capacity(depth);
    let mut cin = in_channels;
    for _ in 0..depth - 1 {
        layers.push(Layer::Conv(
            ConvLayerSpec::new(cin, width, 3).padding(PaddingSpec::reflect(1)).relu(true),
        ));
        cin = width;
    }
    layers.push(Layer::Conv(ConvLayerSpec::new(cin, classes, 1)));
    NetworkSpec::new(layers)
}

/// Front end followed by `context`, whose first layer gets a reflect buffer
/// so the composite keeps the front end's output extent.
pub fn attach_context(
    front: &NetworkSpec,
    front_weights: &NetworkWeights<f32>,
    context: &NetworkSpec,
    context_weights: &NetworkWeights<f32>,
) -> Result<(NetworkSpec, NetworkWeights<f32>)> {
    front_weights.check_against(front)?;
    context_weights.check_against(context)?;
    let net = front.then(&with_input_buffer(context, PadMode::Reflect)?)?;
    let filters = front_weights
        .filters
        .iter()
        .chain(&context_weights.filters)
        .cloned()
        .collect();
    Ok((net, NetworkWeights { filters }))
}

/// Per-pixel argmax over channels; ties go to the lowest channel.
pub fn argmax(scores: &Tensor<f32>) -> Result<LabelMap> {
    let s = scores.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let item = scores.item(n);
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.c {
                if item[c * plane + p] > item[best * plane + p] {
                    best = c;
                }
            }
            out.push(best as u32);
        }
    }
    LabelMap::new(s.n, s.h, s.w, out)
}

/// Dense labels for `image`, padded by the network's input buffer first.
/// Reflection is used when the image is large enough, zeros otherwise.
pub fn predict(net: &NetworkSpec, w: &NetworkWeights<f32>, image: &Tensor<f32>) -> Result<LabelMap> {
    argmax(&dense_scores(net, w, image)?)
}

fn dense_scores(net: &NetworkSpec, w: &NetworkWeights<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    let width = net.input_buffer();
    let mode = if width < s.h.min(s.w) { PadMode::Reflect } else { PadMode::Zero };
    let padded = crate::conv::pad2d(image, PaddingSpec { width, mode })?;
    let out = forward(net, w, &padded, false).map_err(|e| match e {
        Error::Argument(m) => Error::Data(m),
        other => other,
    })?;
    Ok(out.y)
}

/// Mean softmax cross-entropy over every labelled pixel of `data`, with whole
/// images scored the same way [`predict`] sees them.
pub fn dataset_loss(net: &NetworkSpec, w: &NetworkWeights<f32>, data: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    let mut pixels = 0usize;
    for (image, labels) in data {
        let scores = dense_scores(net, w, image)?;
        let (loss, _) = softmax_xent(&scores, labels, IGNORE_LABEL)?;
        let scored = labels.data().iter().filter(|&&l| l != IGNORE_LABEL).count();
        total += loss * scored as f64;
        pixels += scored;
    }
    Ok(if pixels == 0 { 0.0 } else { total / pixels as f64 })
}

/// Confusion counts of [`predict`] over a labelled set. The prediction must
/// cover the label map exactly.
pub fn evaluate(net: &NetworkSpec, w: &NetworkWeights<f32>, data: &[Sample]) -> Result<ConfusionMatrix> {
    let classes = net.out_channels().ok_or_else(|| Error::arg("empty network"))?;
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (image, labels)) in data.iter().enumerate() {
        let pred = predict(net, w, image)?;
        if pred.shape() != labels.shape() {
            return Err(Error::data(format!(
                "sample {i}: prediction {:?} does not cover labels {:?}",
                pred.shape(),
                labels.shape()
            )));
        }
        cm.accumulate(&pred, labels, IGNORE_LABEL)?;
    }
    Ok(cm)
}
