//! Loss, optimizer, crop sampling and the staged training loop.

mod config;
mod crop;
mod loss;
mod sgd;
mod trainer;

pub use config::{parse_stages, TrainConfig};
pub use crop::CropSampler;
pub use loss::softmax_xent;
pub use sgd::{sgd_step, sgd_step_masked, SgdConfig};
pub use trainer::{train, ParamGroup, TrainOutcome, TrainStage, TrainStagePlan};

/// `iter,loss` CSV with 1-based iteration numbers.
pub fn loss_csv(history: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}
