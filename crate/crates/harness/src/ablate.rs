//! Ablation studies: one trained-and-evaluated variant per table row.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ltrack_core::perception::ContextSource;
use ltrack_core::prompting::PromptMode;
use ltrack_metrics::report::COLUMNS;
use ltrack_metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::experiment::{make_splits, train_and_evaluate, RunSize};
use crate::plot;
use crate::synth::DomainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    KeyFeature,
    Prompts,
    Adapter,
    Template,
    TokLen,
}

impl Study {
    pub const ALL: [Study; 5] = [Self::KeyFeature, Self::Prompts, Self::Adapter, Self::Template, Self::TokLen];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::KeyFeature => "keyfeature",
            Self::Prompts => "prompts",
            Self::Adapter => "adapter",
            Self::Template => "template",
            Self::TokLen => "toklen",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::UnknownStudy(s.to_string()))
    }
}

pub const TOKEN_LENGTHS: [usize; 6] = [11, 13, 15, 17, 19, 21];
pub const TEMPLATES: [(&str, &str); 3] = [("A photo of", "A photo of"), ("none", ""), ("a", "a")];

#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub config: Config,
}

/// Row labels and configs of a study; every variant starts from the lite
/// base (one encoder layer).
pub fn variants(study: Study, base: &Config) -> Vec<Variant> {
    let mut lite = base.clone();
    lite.model.n_enc = 1;
    let with = |label: &str, f: &dyn Fn(&mut Config)| {
        let mut config = lite.clone();
        f(&mut config);
        Variant {
            label: label.to_string(),
            config,
        }
    };
    match study {
        Study::KeyFeature => ContextSource::ALL
            .iter()
            .map(|&c| with(c.as_str(), &|cfg| cfg.model.context = c))
            .collect(),
        Study::Prompts => [
            ("textual", PromptMode::TextualOnly),
            ("visual", PromptMode::VisualOnly),
            ("both", PromptMode::Both),
        ]
        .iter()
        .map(|&(l, m)| with(l, &|cfg| cfg.model.prompts = m))
        .collect(),
        Study::Adapter => [("w", true), ("w/o", false)]
            .iter()
            .map(|&(l, a)| with(l, &|cfg| cfg.model.adapter = a))
            .collect(),
        Study::Template => TEMPLATES
            .iter()
            .map(|&(l, t)| with(l, &|cfg| cfg.model.template = t.to_string()))
            .collect(),
        Study::TokLen => TOKEN_LENGTHS
            .iter()
            .map(|&n| with(&n.to_string(), &|cfg| cfg.model.token_len = n))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: MetricsReport,
}

/// Trains every variant on domain A and scores it on domain B. All variants
/// share the same data.
pub fn run_study(study: Study, base: &Config, a: &DomainSpec, b: &DomainSpec, size: &RunSize) -> Result<Vec<AblationRow>> {
    let (train, eval) = make_splits(a, b, size, base.seed)?;
    variants(study, base)
        .into_iter()
        .map(|v| {
            let report = train_and_evaluate(&v.config, &train, &eval)?;
            Ok(AblationRow {
                variant: v.label,
                metrics: report.combined,
            })
        })
        .collect()
}

/// `variant,HOTA,AssA,DetA,MOTA,IDF1,IDS`, scores in percent.
pub fn write_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variant"];
    header.extend(COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let v = r.metrics.row();
        let mut rec = vec![r.variant.clone()];
        rec.extend(v[..5].iter().map(|x| format!("{x:.4}")));
        rec.push(r.metrics.ids.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a study CSV back as `(variant, six values)`.
pub fn read_csv(path: &Path) -> Result<Vec<(String, [f64; 6])>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["variant".to_string()];
    expected.extend(COLUMNS.iter().map(|c| c.to_string()));
    if header != expected {
        return Err(Error::format(path, format!("header {header:?}, expected {expected:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let mut vals = [0.0; 6];
            for (i, v) in vals.iter_mut().enumerate() {
                *v = rec[i + 1]
                    .parse()
                    .map_err(|e| Error::format(path, format!("{}: {e}", &rec[i + 1])))?;
            }
            Ok((rec[0].to_string(), vals))
        })
        .collect()
}

/// Writes `{study}.csv`, `{study}.json` and `{study}.svg` into `dir`; the
/// token-length study is drawn as a HOTA curve, the others as metric bars.
pub fn emit(dir: &Path, study: Study, rows: &[AblationRow]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{study}.csv"));
    write_csv(&csv_path, rows)?;
    let json_path = dir.join(format!("{study}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(rows)?).map_err(|e| Error::io(&json_path, e))?;
    let svg_path = dir.join(format!("{study}.svg"));
    plot_rows(&svg_path, study, rows.iter().map(|r| (r.variant.clone(), r.metrics.row())).collect())?;
    Ok(vec![csv_path, json_path, svg_path])
}

pub fn plot_rows(path: &Path, study: Study, rows: Vec<(String, [f64; 6])>) -> Result<()> {
    if study == Study::TokLen {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|(l, v)| l.parse::<f64>().ok().map(|x| (x, v[0])))
            .collect();
        plot::line_chart(path, "token length", "L", "HOTA", &[("HOTA".into(), pts)])
    } else {
        let bars: Vec<(String, Vec<f64>)> = rows.into_iter().map(|(l, v)| (l, v[..5].to_vec())).collect();
        plot::bar_chart(path, study.as_str(), &COLUMNS[..5], &bars)
    }
}
