//! Training configuration files.
//!
//! ```text
//! seed = 7
//! crop_size = 48
//! crop_pad = 16
//! crop_pad_mode = reflect
//! frontend_layers = 4
//! stage.1.params = frontend
//! stage.1.learning_rate = 0.01
//! stage.1.momentum = 0.9
//! stage.1.batch_size = 4
//! stage.1.iterations = 2000
//! ```
//!
//! Stages are numbered from 1 without gaps. A stage without its own `seed`
//! uses `seed + N`.

use crate::conv::{PadMode, PaddingSpec};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::train::{CropSampler, ParamGroup, SgdConfig, TrainStage, TrainStagePlan};

const STAGE_FIELDS: [&str; 6] = ["params", "learning_rate", "momentum", "batch_size", "iterations", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub crop_size: usize,
    pub crop_pad: PaddingSpec,
    pub frontend_layers: usize,
    pub stages: Vec<TrainStage>,
}

impl TrainConfig {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.deny_unknown(&["seed", "crop_size", "crop_pad", "crop_pad_mode", "frontend_layers", "stage."])?;
        let seed = kv.require("seed")?;
        let mode: PadMode = kv.get_or("crop_pad_mode", PadMode::Reflect)?;
        let cfg = TrainConfig {
            seed,
            crop_size: kv.require("crop_size")?,
            crop_pad: PaddingSpec {
                width: kv.get_or("crop_pad", 0)?,
                mode,
            },
            frontend_layers: kv.get_or("frontend_layers", 0)?,
            stages: stages_from(&kv, seed)?,
        };
        if cfg.stages.is_empty() {
            return Err(Error::config("no stages configured; add stage.1.* keys"));
        }
        Ok(cfg)
    }

    pub fn plan(&self) -> TrainStagePlan {
        TrainStagePlan {
            stages: self.stages.clone(),
            frontend_layers: self.frontend_layers,
        }
    }

    pub fn sampler(&self) -> Result<CropSampler> {
        CropSampler::new(self.crop_size, self.crop_pad, self.seed)
    }
}

/// Parse a file holding only `stage.N.*` keys (plus an optional `seed` for
/// the per-stage defaults).
pub fn parse_stages(text: &str, default_seed: u64) -> Result<Vec<TrainStage>> {
    let kv = KvFile::parse(text)?;
    kv.deny_unknown(&["seed", "stage."])?;
    let seed = kv.get_or("seed", default_seed)?;
    let stages = stages_from(&kv, seed)?;
    if stages.is_empty() {
        return Err(Error::config("stage file defines no stages"));
    }
    Ok(stages)
}

fn stages_from(kv: &KvFile, seed: u64) -> Result<Vec<TrainStage>> {
    let mut count = 0usize;
    for key in kv.keys().filter_map(|k| k.strip_prefix("stage.")) {
        let (n, field) = key
            .split_once('.')
            .ok_or_else(|| Error::config(format!("malformed stage key `stage.{key}`")))?;
        let n: usize = n
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::config(format!("stage numbers start at 1, got `{n}`")))?;
        if !STAGE_FIELDS.contains(&field) {
            return Err(Error::config(format!("unknown stage field `{field}`")));
        }
        count = count.max(n);
    }
    (1..=count)
        .map(|n| {
            let key = |f: &str| format!("stage.{n}.{f}");
            if !kv.keys().any(|k| k.starts_with(&format!("stage.{n}."))) {
                return Err(Error::config(format!("stage {n} is missing")));
            }
            let sgd = SgdConfig {
                learning_rate: kv.require(&key("learning_rate"))?,
                momentum: kv.get_or(&key("momentum"), 0.9)?,
                batch_size: kv.require(&key("batch_size"))?,
                iterations: kv.require(&key("iterations"))?,
                seed: kv.get_or(&key("seed"), seed.wrapping_add(n as u64))?,
            };
            sgd.validate()?;
            Ok(TrainStage {
                params: kv.get_or(&key("params"), ParamGroup::Joint)?,
                sgd,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "seed = 7\ncrop_size = 32\ncrop_pad = 8\nfrontend_layers = 3\n\
        stage.1.params = frontend\nstage.1.learning_rate = 0.01\nstage.1.batch_size = 4\nstage.1.iterations = 10\n\
        stage.2.params = joint\nstage.2.learning_rate = 0.001\nstage.2.momentum = 0.99\nstage.2.batch_size = 2\nstage.2.iterations = 5\nstage.2.seed = 100\n";

    #[test]
    fn full_config() {
        let cfg = TrainConfig::from_kv_text(TEXT).unwrap();
        assert_eq!(cfg.crop_pad, PaddingSpec::reflect(8));
        assert_eq!(cfg.stages.len(), 2);
        assert_eq!(cfg.stages[0].params, ParamGroup::FrontEnd);
        assert_eq!(cfg.stages[0].sgd.seed, 8);
        assert_eq!(cfg.stages[0].sgd.momentum, 0.9);
        assert_eq!(cfg.stages[1].sgd.seed, 100);
        assert_eq!(cfg.plan().frontend_layers, 3);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(TrainConfig::from_kv_text("seed=1\ncrop_size=8\n").is_err());
        assert!(TrainConfig::from_kv_text(&format!("{TEXT}lr=3\n")).is_err());
        assert!(TrainConfig::from_kv_text(&TEXT.replace("stage.2.", "stage.3.")).is_err());
        assert!(TrainConfig::from_kv_text(&TEXT.replace("momentum = 0.99", "momentum = 1.0")).is_err());
        assert!(TrainConfig::from_kv_text(&format!("{TEXT}stage.1.decay=0\n")).is_err());
    }

    #[test]
    fn stage_file() {
        let stages = parse_stages("stage.1.learning_rate=0.1\nstage.1.batch_size=1\nstage.1.iterations=0\n", 5).unwrap();
        assert_eq!(stages[0].params, ParamGroup::Joint);
        assert_eq!(stages[0].sgd.seed, 6);
        assert!(parse_stages("crop_size=3\n", 0).is_err());
    }
}
