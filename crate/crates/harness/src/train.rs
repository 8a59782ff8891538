//! Training loop over synthetic clips.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ltrack_core::container::Container;
use ltrack_core::model::LTrack;
use ltrack_core::optim::Adam;
use ltrack_core::trackbook::Trackbook;
use ltrack_core::{Graph, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TrainState};
use crate::config::Config;
use crate::data::{augment, sample_clip};
use crate::error::{Error, Result};
use crate::synth::{check_provenance, SynthSequence};

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub clip_len: usize,
    pub stride: usize,
    pub source: String,
    pub loss: f64,
    pub tracking: f64,
    pub detection: f64,
    pub targets: usize,
    pub grad_norm: f64,
}

/// Builds the model a config describes: trackbook, width, seed and optional
/// text weights.
pub fn build_model(config: &Config) -> Result<LTrack> {
    let book = match &config.data.trackbook {
        Some(p) => Trackbook::load(p)?,
        None => Trackbook::default(),
    };
    let mut model = LTrack::new(config.model.clone(), book, config.seed)?;
    if let Some(p) = &config.data.text_weights {
        model.import_text_weights(&Container::read(p)?)?;
    }
    Ok(model)
}

pub struct Trainer {
    pub config: Config,
    pub model: LTrack,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed optimizer steps.
    pub step: u64,
    data: Vec<SynthSequence>,
}

impl Trainer {
    /// Every sequence must carry the configured training provenance tag.
    pub fn new(config: Config, data: Vec<SynthSequence>) -> Result<Self> {
        config.validate()?;
        check_data(&config, &data)?;
        let model = build_model(&config)?;
        let adam = Adam::new(config.adam, &model.store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
        Ok(Self {
            config,
            model,
            adam,
            rng,
            step: 0,
            data,
        })
    }

    /// Restores a checkpoint. The model is rebuilt from the stored config and
    /// then overwritten with the saved weights.
    pub fn resume(path: impl AsRef<Path>, data: Vec<SynthSequence>) -> Result<Self> {
        let config = checkpoint::read_config(&path)?;
        check_data(&config, &data)?;
        let mut model = build_model(&config)?;
        let state = checkpoint::load(&path, model.store.clone())?;
        model.store = state.store;
        model.refresh_prompts()?;
        Ok(Self {
            config: state.config,
            model,
            adam: state.adam,
            rng: state.rng,
            step: state.step,
            data,
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            step: self.step,
            store: self.model.store.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.state())
    }

    pub fn total_steps(&self) -> u64 {
        self.config.train.epochs as u64 * self.config.train.steps_per_epoch as u64
    }

    /// 1-indexed epoch of the step about to run.
    pub fn epoch(&self) -> u32 {
        (self.step / self.config.train.steps_per_epoch as u64) as u32 + 1
    }

    /// Samples a clip, runs forward and backward, and updates the weights.
    /// A non-finite loss or gradient leaves the weights untouched, writes a
    /// checkpoint of the pre-step state to `dump_dir` and returns an error.
    pub fn step_once(&mut self, dump_dir: &Path) -> Result<StepLog> {
        let t = &self.config.train;
        let epoch = self.epoch();
        let clip_len = t.clip_len(epoch);
        let lr = t.lr_at(epoch);
        let pre_step = self.state();
        let needed = (clip_len - 1) * t.interval[0] + 1;
        let eligible: Vec<usize> = (0..self.data.len()).filter(|&i| self.data[i].len() >= needed).collect();
        if eligible.is_empty() {
            return Err(Error::SequenceTooShort {
                len: self.data.iter().map(SynthSequence::len).max().unwrap_or(0),
                clip_len,
                needed,
            });
        }
        let seq = &self.data[eligible[self.rng.random_range(0..eligible.len())]];
        let clip = sample_clip(seq, clip_len, t.interval, &mut self.rng)?;
        let clip = augment(&clip, &t.augment, &mut self.rng);
        let frames = clip.to_train_frames();

        let g = Graph::new();
        let s = Session::new(&g, &self.model.store);
        let (loss, report) = self.model.clip_forward(&s, &frames, &self.config.loss, &self.config.focal)?;
        let grads = g.backward(loss);
        let param_grads = s.param_grads(&grads);
        if !report.total.is_finite() || param_grads.iter().any(|(_, gr)| !gr.is_finite()) {
            let dump = dump_dir.join(format!("nonfinite-step{:06}.ckpt", self.step + 1));
            checkpoint::save(&dump, &pre_step)?;
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                dump,
            });
        }
        let grad_norm = self.adam.update(&mut self.model.store, &param_grads, lr);
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            epoch,
            lr,
            clip_len,
            stride: clip.stride,
            source: clip.source,
            loss: report.total,
            tracking: report.frames.iter().map(|f| f.tracking).sum(),
            detection: report.frames.iter().map(|f| f.detection).sum(),
            targets: report.normalizer,
            grad_norm,
        })
    }

    /// Runs until the schedule ends or `max_steps` more steps have run.
    /// With `out_dir`, appends to `loss.jsonl` and writes a checkpoint at
    /// every schedule breakpoint and at the end.
    pub fn run(&mut self, out_dir: Option<&Path>, max_steps: Option<u64>) -> Result<Vec<StepLog>> {
        let dump_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("loss.jsonl");
                let f = File::options().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?;
                Some((BufWriter::new(f), p))
            }
            None => None,
        };
        let breakpoints = self.config.train.breakpoints();
        let spe = self.config.train.steps_per_epoch as u64;
        let end = match max_steps {
            Some(n) => (self.step + n).min(self.total_steps()),
            None => self.total_steps(),
        };
        let mut logs = Vec::new();
        while self.step < end {
            let entry = self.step_once(&dump_dir)?;
            if let Some((w, p)) = log.as_mut() {
                let line = serde_json::to_string(&entry)?;
                writeln!(w, "{line}").map_err(|e| Error::io(&*p, e))?;
            }
            logs.push(entry);
            let done_epoch = self.step % spe == 0;
            if let (Some(dir), true) = (out_dir, done_epoch) {
                let epoch = (self.step / spe) as u32;
                if breakpoints.contains(&epoch) {
                    self.save(dir.join(format!("epoch{epoch:03}.ckpt")))?;
                }
            }
        }
        if let Some((w, p)) = log.as_mut() {
            w.flush().map_err(|e| Error::io(&*p, e))?;
        }
        if let Some(dir) = out_dir {
            self.save(dir.join("last.ckpt"))?;
        }
        Ok(logs)
    }

    pub fn into_model(self) -> LTrack {
        self.model
    }
}

fn check_data(config: &Config, data: &[SynthSequence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::NoData("no training sequences".into()));
    }
    for seq in data {
        check_provenance(seq, &PathBuf::from(&seq.info.name), &config.data.train_domain)?;
    }
    Ok(())
}
