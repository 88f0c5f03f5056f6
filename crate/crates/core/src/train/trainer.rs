use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabelMap, Sample};
use crate::error::{Error, Result};
use crate::netgraph::{backward, forward, receptive_field, NetworkSpec, NetworkWeights};
use crate::tensor::Tensor;
use crate::train::{sgd_step_masked, softmax_xent, CropSampler, SgdConfig};
use crate::IGNORE_LABEL;

/// Which filters a stage updates. Layers before the plan's
/// `frontend_layers` boundary form the front end; the rest the context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    FrontEnd,
    Context,
    Joint,
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frontend" | "front-end" => Ok(ParamGroup::FrontEnd),
            "context" => Ok(ParamGroup::Context),
            "joint" => Ok(ParamGroup::Joint),
            other => Err(Error::config(format!("unknown parameter group `{other}`"))),
        }
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParamGroup::FrontEnd => "frontend",
            ParamGroup::Context => "context",
            ParamGroup::Joint => "joint",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStage {
    pub params: ParamGroup,
    pub sgd: SgdConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainStagePlan {
    pub stages: Vec<TrainStage>,
    /// Number of leading layers (conv and pool) that belong to the front end.
    pub frontend_layers: usize,
}

impl TrainStagePlan {
    pub fn single(params: ParamGroup, sgd: SgdConfig, frontend_layers: usize) -> Self {
        TrainStagePlan {
            stages: vec![TrainStage { params, sgd }],
            frontend_layers,
        }
    }

    fn trainable(&self, net: &NetworkSpec, group: ParamGroup) -> Vec<bool> {
        net.conv_layers()
            .map(|(i, _)| match group {
                ParamGroup::Joint => true,
                ParamGroup::FrontEnd => i < self.frontend_layers,
                ParamGroup::Context => i >= self.frontend_layers,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: NetworkWeights<f32>,
    /// One mean batch loss per iteration, across all stages.
    pub loss_history: Vec<f64>,
}

fn check_sample(net: &NetworkSpec, i: usize, (image, labels): &Sample) -> Result<()> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::data(format!("sample {i}: expected a single image, got {s}")));
    }
    if Some(s.c) != net.in_channels() {
        return Err(Error::data(format!(
            "sample {i}: image has {} channels, network expects {:?}",
            s.c,
            net.in_channels()
        )));
    }
    if labels.shape() != (1, s.h, s.w) {
        return Err(Error::data(format!("sample {i}: labels do not match the image extent")));
    }
    Ok(())
}

/// Labels aligned with a stride-free network's output: the centered window of
/// the crop's labels.
fn align_labels(labels: &LabelMap, out_h: usize, out_w: usize) -> Result<LabelMap> {
    let (_, h, w) = labels.shape();
    if out_h > h || out_w > w || !(h - out_h).is_multiple_of(2) || !(w - out_w).is_multiple_of(2) {
        return Err(Error::data(format!(
            "network output {out_h}x{out_w} cannot be centered in a {h}x{w} crop"
        )));
    }
    labels.crop((h - out_h) / 2, (w - out_w) / 2, out_h, out_w)
}

/// Run the stages in order. Frozen filters are bitwise untouched; each stage
/// starts with zero velocity. Deterministic given the plan and sampler seeds.
pub fn train(
    net: &NetworkSpec,
    weights: NetworkWeights<f32>,
    data: &[Sample],
    plan: &TrainStagePlan,
    crop: &mut CropSampler,
) -> Result<TrainOutcome> {
    weights.check_against(net)?;
    if plan.stages.is_empty() {
        return Err(Error::config("a training plan needs at least one stage"));
    }
    for stage in &plan.stages {
        stage.sgd.validate()?;
    }
    if plan.stages.iter().any(|s| s.sgd.iterations > 0) {
        if data.is_empty() {
            return Err(Error::data("no training samples"));
        }
        for (i, sample) in data.iter().enumerate() {
            check_sample(net, i, sample)?;
        }
        if receptive_field(net).last().map_or(1, |e| e.resolution_divisor) != 1 {
            return Err(Error::data("dense training needs a stride-free network; rewrite it first"));
        }
        if crop.crop_size < net.min_input_extent() {
            return Err(Error::config(format!(
                "crop size {} is below the network minimum input {}",
                crop.crop_size,
                net.min_input_extent()
            )));
        }
    }

    let mut w = weights;
    let mut history = Vec::new();
    for stage in &plan.stages {
        let trainable = plan.trainable(net, stage.params);
        let mut velocity = NetworkWeights::zeros(net)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stage.sgd.seed);
        for _ in 0..stage.sgd.iterations {
            let mut images = Vec::with_capacity(stage.sgd.batch_size);
            let mut labels = Vec::with_capacity(stage.sgd.batch_size);
            for _ in 0..stage.sgd.batch_size {
                let (img, lbl) = &data[rng.random_range(0..data.len())];
                let (ci, cl) = crop.sample(img, lbl)?;
                images.push(ci);
                labels.push(cl);
            }
            let batch = Tensor::stack(&images)?;
            let out = forward(net, &w, &batch, true)?;
            let ys = out.y.shape();
            let target = align_labels(&LabelMap::stack(&labels)?, ys.h, ys.w)?;
            let (loss, grad) = softmax_xent(&out.y, &target, IGNORE_LABEL)?;
            let (grads, _) = backward(net, &w, out.cache.as_ref(), &grad)?;
            sgd_step_masked(&mut w, &grads, &mut velocity, &stage.sgd, &trainable)?;
            history.push(loss);
        }
    }
    Ok(TrainOutcome {
        weights: w,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::PaddingSpec;
    use crate::netgraph::{ConvLayerSpec, Layer};
    use crate::tensor::Shape;

    fn sgd(iterations: usize) -> SgdConfig {
        SgdConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 2,
            iterations,
            seed: 4,
        }
    }

    /// Two classes told apart by the sign of the first channel.
    fn separable(count: usize) -> Vec<Sample> {
        (0..count)
            .map(|i| {
                let img = Tensor::<f32>::random(Shape::new(1, 2, 12, 12).unwrap(), i as u64, 0.0, 1.0).unwrap();
                let labels = (0..144).map(|p| u32::from(img.data()[p] > 0.5)).collect();
                (img, LabelMap::new(1, 12, 12, labels).unwrap())
            })
            .collect()
    }

    fn small_net() -> NetworkSpec {
        NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(2, 4, 3).padding(PaddingSpec::reflect(1)).relu(true)),
            Layer::Conv(ConvLayerSpec::new(4, 2, 1)),
        ])
        .unwrap()
    }

    #[test]
    fn zero_iterations_leave_weights_alone() {
        let net = small_net();
        let w = NetworkWeights::random_fan_in(&net, 1).unwrap();
        let mut crop = CropSampler::new(8, PaddingSpec::NONE, 1).unwrap();
        let out = train(&net, w.clone(), &separable(2), &TrainStagePlan::single(ParamGroup::Joint, sgd(0), 0), &mut crop).unwrap();
        assert_eq!(out.weights, w);
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn separable_problem_learns() {
        let net = small_net();
        let w = NetworkWeights::random_fan_in(&net, 1).unwrap();
        let mut crop = CropSampler::new(8, PaddingSpec::reflect(2), 3).unwrap();
        let plan = TrainStagePlan::single(ParamGroup::Joint, sgd(200), 0);
        let out = train(&net, w, &separable(8), &plan, &mut crop).unwrap();
        let h = &out.loss_history;
        assert_eq!(h.len(), 200);
        let first: f64 = h[..20].iter().sum::<f64>() / 20.0;
        let last: f64 = h[180..].iter().sum::<f64>() / 20.0;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn frozen_front_end_is_bitwise_unchanged() {
        let net = small_net();
        let w = NetworkWeights::random_fan_in(&net, 1).unwrap();
        let mut crop = CropSampler::new(8, PaddingSpec::NONE, 1).unwrap();
        let plan = TrainStagePlan::single(ParamGroup::Context, sgd(5), 1);
        let out = train(&net, w.clone(), &separable(2), &plan, &mut crop).unwrap();
        assert_eq!(out.weights.filters[0], w.filters[0]);
        assert_ne!(out.weights.filters[1], w.filters[1]);
    }

    #[test]
    fn bad_samples_rejected() {
        let net = small_net();
        let w = NetworkWeights::random_fan_in(&net, 1).unwrap();
        let mut crop = CropSampler::new(8, PaddingSpec::NONE, 1).unwrap();
        let img = Tensor::<f32>::zeros(Shape::new(1, 3, 12, 12).unwrap()).unwrap();
        let data = vec![(img, LabelMap::filled(1, 12, 12, 0).unwrap())];
        let plan = TrainStagePlan::single(ParamGroup::Joint, sgd(1), 0);
        assert!(matches!(train(&net, w, &data, &plan, &mut crop), Err(Error::Data(_))));
    }
}
