//! Run configuration and the training schedule.
//!
//! Config files are TOML. Dotted keys at top level (`model.d = 64`,
//! `tracker.n_m = 5`) and `[section]` tables are equivalent. Unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use ltrack_core::losses::{FocalParams, LossWeights};
use ltrack_core::model::ModelConfig;
use ltrack_core::optim::AdamConfig;
use ltrack_core::tracker::TrackerConfig;
use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};

/// Epoch count of the full schedule; desk runs compress breakpoints by
/// `epochs / FULL_EPOCHS`.
pub const FULL_EPOCHS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    /// Clips (batch size 1) per epoch.
    pub steps_per_epoch: u32,
    pub lr: f64,
    /// Last epoch at the initial rate; later epochs use `lr * lr_drop_factor`.
    pub lr_drop_epoch: u32,
    pub lr_drop_factor: f64,
    pub clip_len_initial: usize,
    /// Clip length grows by one every this many epochs.
    pub clip_len_every: u32,
    pub clip_len_max: usize,
    /// Inclusive range of the frame sampling stride.
    pub interval: [usize; 2],
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: FULL_EPOCHS,
            steps_per_epoch: 50,
            lr: 2e-4,
            lr_drop_epoch: 100,
            lr_drop_factor: 0.1,
            clip_len_initial: 2,
            clip_len_every: 50,
            clip_len_max: 5,
            interval: [1, 10],
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The full schedule squeezed into `epochs`, breakpoints scaled in proportion.
    pub fn compressed(epochs: u32) -> Self {
        let full = Self::default();
        let scale = |e: u32| ((e as f64 * epochs as f64 / FULL_EPOCHS as f64).round() as u32).clamp(1, epochs.max(1));
        Self {
            epochs,
            lr_drop_epoch: scale(full.lr_drop_epoch),
            clip_len_every: scale(full.clip_len_every),
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 || self.steps_per_epoch < 1 {
            return bad("train.epochs and train.steps_per_epoch must be at least 1".into());
        }
        if !(1..=self.epochs).contains(&self.lr_drop_epoch) {
            return bad(format!("train.lr_drop_epoch {} outside [1, {}]", self.lr_drop_epoch, self.epochs));
        }
        if !(1..=self.epochs).contains(&self.clip_len_every) {
            return bad(format!("train.clip_len_every {} outside [1, {}]", self.clip_len_every, self.epochs));
        }
        if self.clip_len_initial < 2 || self.clip_len_max < self.clip_len_initial {
            return bad("need 2 <= train.clip_len_initial <= train.clip_len_max".into());
        }
        if self.interval[0] < 1 || self.interval[0] > self.interval[1] {
            return bad(format!("train.interval {:?} must satisfy 1 <= lo <= hi", self.interval));
        }
        if !(self.lr > 0.0) || !(self.lr_drop_factor > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0 < self.augment.min_crop && self.augment.min_crop <= 1.0) {
            return bad("train.augment.min_crop must be in (0, 1]".into());
        }
        Ok(())
    }

    /// Epochs are 1-indexed.
    pub fn clip_len(&self, epoch: u32) -> usize {
        (self.clip_len_initial + (epoch / self.clip_len_every) as usize).min(self.clip_len_max)
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }

    /// Epochs after which the schedule changes, plus the final epoch.
    pub fn breakpoints(&self) -> Vec<u32> {
        let mut out: Vec<u32> = (1..self.epochs)
            .filter(|&e| self.clip_len(e + 1) != self.clip_len(e) || self.lr_at(e + 1) != self.lr_at(e))
            .collect();
        out.push(self.epochs);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Sequence directories for training.
    pub train: Vec<PathBuf>,
    /// Sequence directories for evaluation.
    pub eval: Vec<PathBuf>,
    /// Provenance tag every training sequence must carry.
    pub train_domain: String,
    /// Provenance tag every evaluation sequence must carry.
    pub eval_domain: String,
    /// Trackbook file; the built-in book when absent.
    pub trackbook: Option<PathBuf>,
    /// Optional text-encoder weight container.
    pub text_weights: Option<PathBuf>,
    /// In-memory benchmark size used when no directories are given.
    pub synth_train_sequences: usize,
    pub synth_eval_sequences: usize,
    pub synth_frames: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            eval: Vec::new(),
            train_domain: "A".into(),
            eval_domain: "B".into(),
            trackbook: None,
            text_weights: None,
            synth_train_sequences: 4,
            synth_eval_sequences: 2,
            synth_frames: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub loss: LossWeights,
    pub focal: FocalParams,
    pub adam: AdamConfig,
    pub data: DataConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            loss: LossWeights::default(),
            focal: FocalParams::default(),
            adam: AdamConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Config {
    /// Desk-scale defaults: the compressed 40-epoch schedule without the
    /// random crop, which slows convergence past a desk budget.
    pub fn desk() -> Self {
        let mut train = TrainConfig::compressed(40);
        train.steps_per_epoch = 100;
        train.augment.crop = false;
        Self { train, ..Self::default() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })?;
        // Relative data paths are resolved against the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.train.iter_mut().for_each(resolve);
        cfg.data.eval.iter_mut().for_each(resolve);
        cfg.data.trackbook.iter_mut().for_each(resolve);
        cfg.data.text_weights.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.tracker.validate()?;
        if self.data.train_domain == self.data.eval_domain {
            return Err(Error::SameDomain(self.data.train_domain.clone()));
        }
        let m = &self.model;
        if m.d == 0 || m.heads == 0 || m.d % m.heads != 0 {
            return Err(Error::Config(format!("model.d {} must be a positive multiple of model.heads {}", m.d, m.heads)));
        }
        if m.text.d != m.d {
            return Err(Error::Config("model.text.d must equal model.d".into()));
        }
        if m.n_detect == 0 {
            return Err(Error::Config("model.n_detect must be at least 1".into()));
        }
        if m.token_len < 3 || m.token_len > m.text.l_max {
            return Err(Error::Config(format!(
                "model.token_len {} must be in [3, {}]",
                m.token_len, m.text.l_max
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_schedule_examples() {
        let t = TrainConfig::default();
        assert_eq!(t.clip_len(1), 2);
        assert_eq!(t.clip_len(120), 4);
        assert_eq!(t.lr_at(100), 2e-4);
        assert!((t.lr_at(101) - 2e-5).abs() < 1e-20);
        assert_eq!(t.breakpoints(), vec![49, 99, 100, 149, 200]);
    }

    #[test]
    fn compressed_schedule_scales_breakpoints() {
        let t = TrainConfig::compressed(40);
        assert_eq!((t.lr_drop_epoch, t.clip_len_every), (20, 10));
        t.validate().unwrap();
        let tiny = TrainConfig::compressed(1);
        tiny.validate().unwrap();
    }

    proptest! {
        #[test]
        fn clip_length_formula(epoch in 1u32..=200, max in 2usize..8) {
            let t = TrainConfig { clip_len_max: max, ..Default::default() };
            prop_assert_eq!(t.clip_len(epoch), (2 + (epoch / 50) as usize).min(max));
        }
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let dotted = "seed = 3\nmodel.d = 32\nmodel.text.d = 32\ntracker.n_m = 7\ntrain.epochs = 10\ntrain.lr_drop_epoch = 5\ntrain.clip_len_every = 2\n";
        let tables = "seed = 3\n[model]\nd = 32\ntext.d = 32\n[tracker]\nn_m = 7\n[train]\nepochs = 10\nlr_drop_epoch = 5\nclip_len_every = 2\n";
        let a = Config::parse(dotted).unwrap();
        assert_eq!(a, Config::parse(tables).unwrap());
        assert_eq!(a.model.d, 32);
        assert_eq!(a.tracker.n_m, 7);
        assert_eq!(a.tracker.tau_keep, 0.6);
        assert_eq!(Config::parse(&a.to_toml()).unwrap(), a);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Config::parse("model.dd = 3").is_err());
        assert!(Config::parse("train.lr_drop_epoch = 300").is_err());
        assert!(Config::parse("tracker.tau_keep = 0.9").is_err());
        assert!(Config::parse("data.eval_domain = \"A\"").is_err());
        assert!(Config::parse("model.token_len = 40").is_err());
    }
}
