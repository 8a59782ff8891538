//! The `ltrack` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltrack_metrics::{evaluate, write_mot, MetricsReport};

use crate::ablate::{self, Study};
use crate::config::{Config, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, read_mot_file, track_sequence, write_results};
use crate::experiment::{cross_domain, RunSize};
use crate::synth::{generate_split, read_split, DomainSpec, SynthSequence};
use crate::train::{build_model, Trainer};
use crate::{checkpoint, plot};

#[derive(Debug, Parser)]
#[command(name = "ltrack", version, about = "Language-guided multi-object tracking on a synthetic two-domain benchmark")]
pub struct Cli {
    /// TOML config file; keys it leaves out take the full-schedule defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the full 200-epoch schedule instead of the config's or the desk one.
    #[arg(long, global = true)]
    pub full_schedule: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sequences from a domain spec.
    Synth(SynthArgs),
    /// Train on domain-A sequences.
    Train(TrainArgs),
    /// Run a checkpoint over one sequence and write a MOT result file.
    Track(TrackArgs),
    /// Score a result file against ground truth, or a checkpoint on the
    /// configured evaluation sequences.
    Eval(EvalArgs),
    /// Run one ablation study and write its CSV, JSON and plot.
    Ablate(AblateArgs),
    /// Train LTrack and the PTD-free baseline over several seeds and
    /// compare them on domain B.
    Experiment(ExperimentArgs),
    /// Draw loss curves, metric bars or the token-length curve.
    Plot(PlotArgs),
    /// Print the resolved config as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON domain spec, or the built-in `a` / `b`.
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sequence name prefix; defaults to the domain name in lower case.
    #[arg(long)]
    pub prefix: Option<String>,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory.
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "res", conflicts_with = "checkpoint")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub res: Option<PathBuf>,
    /// Evaluate a checkpoint on `data.eval`.
    #[arg(long, required_unless_present = "gt")]
    pub checkpoint: Option<PathBuf>,
    /// Report JSON (file mode) or output directory (checkpoint mode).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// keyfeature, prompts, adapter, template or toklen.
    #[arg(long)]
    pub study: String,
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value = "runs/experiment")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotKind {
    /// Loss against step from a `loss.jsonl`.
    Loss,
    /// Metric bars from an ablation CSV.
    Bars,
    /// HOTA against token length from `toklen.csv`.
    Toklen,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Desk preset without a file; otherwise the file over full defaults.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::desk(),
    };
    if cli.full_schedule {
        cfg.train = TrainConfig {
            augment: cfg.train.augment,
            interval: cfg.train.interval,
            ..TrainConfig::default()
        };
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn domain(spec: &str) -> Result<DomainSpec> {
    match spec {
        "a" | "A" => Ok(DomainSpec::domain_a()),
        "b" | "B" => Ok(DomainSpec::domain_b()),
        path => DomainSpec::load(path),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Configured domain-A sequences, or a generated in-memory split.
fn training_data(cfg: &Config) -> Result<Vec<SynthSequence>> {
    if cfg.data.train.is_empty() {
        let size = RunSize::from_config(cfg);
        generate_split(&DomainSpec::domain_a(), size.train_sequences, size.frames, cfg.seed.wrapping_mul(1000), "train")
    } else {
        read_split(&cfg.data.train, &cfg.data.train_domain)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let spec = domain(&a.domain)?;
            let seed = cli.seed.unwrap_or(0);
            let prefix = a.prefix.clone().unwrap_or_else(|| spec.name.to_lowercase());
            for seq in generate_split(&spec, a.count, a.frames, seed, &prefix)? {
                let dir = a.out.join(&seq.info.name);
                seq.write(&dir)?;
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Train(a) => {
            let cfg = resolve_config(&cli)?;
            let data = training_data(&cfg)?;
            let mut trainer = match &a.resume {
                Some(p) => Trainer::resume(p, data)?,
                None => Trainer::new(cfg, data)?,
            };
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let cfg_path = a.out.join("config.toml");
            fs::write(&cfg_path, trainer.config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            let logs = trainer.run(Some(&a.out), a.max_steps)?;
            if let Some(last) = logs.last() {
                println!("step {} epoch {} loss {:.5}", last.step, last.epoch, last.loss);
            }
            Ok(())
        }
        Command::Track(a) => {
            let model = load_model(&a.checkpoint)?;
            let seq = SynthSequence::read(&a.seq)?;
            let res = track_sequence(&model, &seq, model_tracker(&a.checkpoint, &cli)?)?;
            write_mot(&a.out, &res)?;
            Ok(())
        }
        Command::Eval(a) => match (&a.gt, &a.res, &a.checkpoint) {
            (Some(gt), Some(res), _) => {
                let mut gt = read_mot_file(gt)?;
                let mut res = read_mot_file(res)?;
                let n = gt.num_frames().max(res.num_frames());
                gt.extend_to(n);
                res.extend_to(n);
                let report: MetricsReport = evaluate(&gt, &res)?;
                write_json(&a.out, &report)?;
                print!("{}", MetricsReport::table([("result", &report)]));
                Ok(())
            }
            (_, _, Some(ckpt)) => {
                let cfg = resolve_config(&cli)?;
                if cfg.data.eval.is_empty() {
                    return Err(Error::NoData("data.eval lists no sequences".into()));
                }
                let seqs = read_split(&cfg.data.eval, &cfg.data.eval_domain)?;
                let model = load_model(ckpt)?;
                let (report, results) = evaluate_model(&model, &seqs, model_tracker(ckpt, &cli)?)?;
                let names: Vec<String> = seqs.iter().map(|s| s.info.name.clone()).collect();
                write_results(a.out.join("results"), &names, &results)?;
                write_json(&a.out.join("report.json"), &report)?;
                let rows: Vec<(&str, &MetricsReport)> = report
                    .sequences
                    .iter()
                    .map(|s| (s.name.as_str(), &s.metrics))
                    .chain([("combined", &report.combined)])
                    .collect();
                print!("{}", MetricsReport::table(rows));
                Ok(())
            }
            _ => Err(Error::Config("eval needs --gt and --res, or --checkpoint".into())),
        },
        Command::Ablate(a) => {
            let study: Study = a.study.parse()?;
            let cfg = resolve_config(&cli)?;
            let rows = ablate::run_study(
                study,
                &cfg,
                &DomainSpec::domain_a(),
                &DomainSpec::domain_b(),
                &RunSize::from_config(&cfg),
            )?;
            for p in ablate::emit(&a.out, study, &rows)? {
                println!("{}", p.display());
            }
            print!(
                "{}",
                MetricsReport::table(rows.iter().map(|r| (r.variant.as_str(), &r.metrics)))
            );
            Ok(())
        }
        Command::Experiment(a) => {
            let cfg = resolve_config(&cli)?;
            let seeds: Vec<u64> = (0..a.seeds).map(|i| cfg.seed + i).collect();
            let report = cross_domain(
                &cfg,
                &DomainSpec::domain_a(),
                &DomainSpec::domain_b(),
                &RunSize::from_config(&cfg),
                &seeds,
            )?;
            write_json(&a.out.join("cross_domain.json"), &report)?;
            println!(
                "median HOTA on B: ltrack {:.2}  baseline {:.2}",
                100.0 * report.median_hota_ltrack,
                100.0 * report.median_hota_baseline
            );
            Ok(())
        }
        Command::Plot(a) => match a.kind {
            PlotKind::Loss => {
                let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
                let mut pts = Vec::new();
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let v: serde_json::Value = serde_json::from_str(line)
                        .map_err(|e| Error::format(&a.input, format!("line {}: {e}", n + 1)))?;
                    match (v["step"].as_f64(), v["loss"].as_f64()) {
                        (Some(s), Some(l)) => pts.push((s, l)),
                        _ => return Err(Error::format(&a.input, format!("line {}: no step/loss", n + 1))),
                    }
                }
                plot::line_chart(&a.out, "training loss", "step", "loss", &[("loss".into(), pts)])
            }
            PlotKind::Bars | PlotKind::Toklen => {
                let rows = ablate::read_csv(&a.input)?;
                let study = match a.kind {
                    PlotKind::Toklen => Study::TokLen,
                    _ => Study::KeyFeature,
                };
                ablate::plot_rows(&a.out, study, rows)
            }
        },
        Command::Config => {
            print!("{}", resolve_config(&cli)?.to_toml());
            Ok(())
        }
    }
}

/// Rebuilds the checkpoint's model and loads its weights.
fn load_model(path: &Path) -> Result<ltrack_core::model::LTrack> {
    let cfg = checkpoint::read_config(path)?;
    let mut model = build_model(&cfg)?;
    let state = checkpoint::load(path, model.store.clone())?;
    model.store = state.store;
    model.refresh_prompts()?;
    Ok(model)
}

/// Tracker thresholds: the `--config` file's when given, else the checkpoint's.
fn model_tracker(path: &Path, cli: &Cli) -> Result<ltrack_core::tracker::TrackerConfig> {
    match &cli.config {
        Some(_) => Ok(resolve_config(cli)?.tracker),
        None => Ok(checkpoint::read_config(path)?.tracker),
    }
}
