//! Train-then-evaluate runs: the cross-domain comparison against the
//! PTD-free baseline and the shared runner used by ablations.

use ltrack_core::model::LTrack;
use ltrack_metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::eval::{evaluate_model, EvalReport};
use crate::synth::{generate_split, DomainSpec, SynthSequence};
use crate::train::Trainer;

/// Benchmark sizes for one train/evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSize {
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub frames: usize,
}

impl Default for RunSize {
    fn default() -> Self {
        Self {
            train_sequences: 4,
            eval_sequences: 2,
            frames: 80,
        }
    }
}

impl RunSize {
    pub fn from_config(c: &Config) -> Self {
        Self {
            train_sequences: c.data.synth_train_sequences,
            eval_sequences: c.data.synth_eval_sequences,
            frames: c.data.synth_frames,
        }
    }
}

/// Training and evaluation splits. The data seed is kept apart from the
/// model seed so every arm of a comparison sees the same sequences.
pub fn make_splits(a: &DomainSpec, b: &DomainSpec, size: &RunSize, seed: u64) -> Result<(Vec<SynthSequence>, Vec<SynthSequence>)> {
    let train = generate_split(a, size.train_sequences, size.frames, seed.wrapping_mul(1000), "train")?;
    let eval = generate_split(b, size.eval_sequences, size.frames, seed.wrapping_mul(1000).wrapping_add(500), "eval")?;
    Ok((train, eval))
}

/// Held-out sequences from the training domain, for in-domain scores.
pub fn make_holdout(a: &DomainSpec, size: &RunSize, seed: u64) -> Result<Vec<SynthSequence>> {
    generate_split(a, size.eval_sequences, size.frames, seed.wrapping_mul(1000).wrapping_add(700), "holdout")
}

pub fn train_model(config: &Config, train: &[SynthSequence]) -> Result<LTrack> {
    let mut trainer = Trainer::new(config.clone(), train.to_vec())?;
    trainer.run(None, None)?;
    Ok(trainer.into_model())
}

/// Trains from scratch on `train` and scores on `eval`.
pub fn train_and_evaluate(config: &Config, train: &[SynthSequence], eval: &[SynthSequence]) -> Result<EvalReport> {
    let model = train_model(config, train)?;
    Ok(evaluate_model(&model, eval, config.tracker)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    /// Scores on domain B.
    pub ltrack: MetricsReport,
    pub baseline: MetricsReport,
    /// Scores on the domain-A holdout.
    pub ltrack_in_domain: MetricsReport,
    pub baseline_in_domain: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub rows: Vec<SeedRow>,
    pub median_hota_ltrack: f64,
    pub median_hota_baseline: f64,
}

impl CrossDomainReport {
    pub fn ltrack_not_worse(&self) -> bool {
        self.median_hota_ltrack >= self.median_hota_baseline
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For each seed trains the full model and the baseline (`ptd = false`,
/// everything else identical) on domain A and evaluates both on domain B
/// and on a domain-A holdout.
pub fn cross_domain(base: &Config, a: &DomainSpec, b: &DomainSpec, size: &RunSize, seeds: &[u64]) -> Result<CrossDomainReport> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let (train, eval) = make_splits(a, b, size, seed)?;
        let holdout = make_holdout(a, size, seed)?;
        let arm = |ptd: bool| -> Result<(MetricsReport, MetricsReport)> {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.ptd = ptd;
            let model = train_model(&cfg, &train)?;
            let cross = evaluate_model(&model, &eval, cfg.tracker)?.0.combined;
            let within = evaluate_model(&model, &holdout, cfg.tracker)?.0.combined;
            Ok((cross, within))
        };
        let (ltrack, ltrack_in_domain) = arm(true)?;
        let (baseline, baseline_in_domain) = arm(false)?;
        rows.push(SeedRow {
            seed,
            ltrack,
            baseline,
            ltrack_in_domain,
            baseline_in_domain,
        });
    }
    let lt: Vec<f64> = rows.iter().map(|r| r.ltrack.hota).collect();
    let bl: Vec<f64> = rows.iter().map(|r| r.baseline.hota).collect();
    Ok(CrossDomainReport {
        median_hota_ltrack: median(&lt),
        median_hota_baseline: median(&bl),
        rows,
    })
}
