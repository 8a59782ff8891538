use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clear::clear_mot;
use crate::hota::hota;
use crate::identity::idf1;
use crate::sequence::Sequence;
use crate::Result;

pub const IOU_THRESHOLD: f64 = 0.5;

/// The six headline tracking metrics. Scores are fractions; `IDS` is a count.
/// Serialises with percentage values under the usual column names.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub hota: f64,
    pub assa: f64,
    pub deta: f64,
    pub mota: f64,
    pub idf1: f64,
    pub ids: usize,
    pub hota_per_alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    #[serde(rename = "HOTA")]
    hota: f64,
    #[serde(rename = "AssA")]
    assa: f64,
    #[serde(rename = "DetA")]
    deta: f64,
    #[serde(rename = "MOTA")]
    mota: f64,
    #[serde(rename = "IDF1")]
    idf1: f64,
    #[serde(rename = "IDS")]
    ids: usize,
    hota_per_alpha: Vec<f64>,
}

impl Serialize for MetricsReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReportJson {
            hota: 100.0 * self.hota,
            assa: 100.0 * self.assa,
            deta: 100.0 * self.deta,
            mota: 100.0 * self.mota,
            idf1: 100.0 * self.idf1,
            ids: self.ids,
            hota_per_alpha: self.hota_per_alpha.iter().map(|v| 100.0 * v).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricsReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ReportJson::deserialize(d)?;
        Ok(Self {
            hota: j.hota / 100.0,
            assa: j.assa / 100.0,
            deta: j.deta / 100.0,
            mota: j.mota / 100.0,
            idf1: j.idf1 / 100.0,
            ids: j.ids,
            hota_per_alpha: j.hota_per_alpha.iter().map(|v| v / 100.0).collect(),
        })
    }
}

pub const COLUMNS: [&str; 6] = ["HOTA", "AssA", "DetA", "MOTA", "IDF1", "IDS"];

impl MetricsReport {
    /// Column values in table order, scores as percentages.
    pub fn row(&self) -> [f64; 6] {
        [
            100.0 * self.hota,
            100.0 * self.assa,
            100.0 * self.deta,
            100.0 * self.mota,
            100.0 * self.idf1,
            self.ids as f64,
        ]
    }

    /// Aligned text table with one labelled row per report.
    pub fn table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
        let rows: Vec<_> = rows.into_iter().collect();
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "Method");
        for c in COLUMNS {
            let _ = write!(out, " {c:>7}");
        }
        out.push('\n');
        for (label, r) in rows {
            let _ = write!(out, "{label:<label_w$}");
            let v = r.row();
            for x in &v[..5] {
                let _ = write!(out, " {x:>7.1}");
            }
            let _ = writeln!(out, " {:>7}", r.ids);
        }
        out
    }
}

/// Evaluates a result against ground truth.
pub fn evaluate(gt: &Sequence, res: &Sequence) -> Result<MetricsReport> {
    let h = hota(gt, res)?;
    let c = clear_mot(gt, res, IOU_THRESHOLD)?;
    let id = idf1(gt, res, IOU_THRESHOLD);
    Ok(MetricsReport {
        hota: h.hota,
        assa: h.assa,
        deta: h.deta,
        mota: c.mota,
        idf1: id.idf1,
        ids: c.id_switches,
        hota_per_alpha: h.hota_per_alpha,
    })
}
