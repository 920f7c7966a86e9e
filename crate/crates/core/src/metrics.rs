//! AbsRel, RMSE, iRMSE and δ, per pair and per dataset.
//!
//! Validity: AbsRel and RMSE use every pixel with `gt > 0`; iRMSE and δ
//! additionally need `pred > 0`. Pixels dropped for a zero prediction are
//! counted in [`MetricReport::n_zero_pred`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid2D;

pub const DEFAULT_DELTA_THRESHOLD: f64 = 1.05;

/// Raw accumulators behind a report, kept so reports can be pooled per pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelSums {
    pub abs_rel: f64,
    pub sq_err: f64,
    pub inv_sq_err: f64,
    pub delta_hits: usize,
    pub n_valid: usize,
    pub n_ratio: usize,
}

impl PixelSums {
    fn merge(mut self, o: &PixelSums) -> Self {
        self.abs_rel += o.abs_rel;
        self.sq_err += o.sq_err;
        self.inv_sq_err += o.inv_sq_err;
        self.delta_hits += o.delta_hits;
        self.n_valid += o.n_valid;
        self.n_ratio += o.n_ratio;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub rmse: f64,
    pub irmse: f64,
    /// Percentage in `[0, 100]`.
    pub delta: f64,
    pub n_valid: usize,
    pub n_zero_pred: usize,
    pub unit_label: String,
    pub sums: PixelSums,
}

impl MetricReport {
    fn from_sums(sums: PixelSums, unit_label: &str) -> Result<Self> {
        if sums.n_valid == 0 {
            return Err(Error::NoValidPixels("ground truth has no positive pixels"));
        }
        if sums.n_ratio == 0 {
            return Err(Error::NoValidPixels("no pixel has both positive prediction and ground truth"));
        }
        let n = sums.n_valid as f64;
        let nr = sums.n_ratio as f64;
        Ok(Self {
            abs_rel: sums.abs_rel / n,
            rmse: (sums.sq_err / n).sqrt(),
            irmse: (sums.inv_sq_err / nr).sqrt(),
            delta: 100.0 * sums.delta_hits as f64 / nr,
            n_valid: sums.n_valid,
            n_zero_pred: sums.n_valid - sums.n_ratio,
            unit_label: unit_label.to_owned(),
            sums,
        })
    }
}

/// Metrics for one prediction/ground-truth pair. δ uses a strict `<`.
pub fn evaluate_pair(pred: &Grid2D, gt: &Grid2D, delta_threshold: f64, unit_label: &str) -> Result<MetricReport> {
    pred.ensure_same_shape(gt, "evaluate_pair")?;
    let mut s = PixelSums::default();
    for (&d, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if !(g > 0.0) {
            continue;
        }
        let err = d - g;
        s.n_valid += 1;
        s.abs_rel += err.abs() / g;
        s.sq_err += err * err;
        if d > 0.0 {
            s.n_ratio += 1;
            let inv = 1.0 / d - 1.0 / g;
            s.inv_sq_err += inv * inv;
            if (d / g).max(g / d) < delta_threshold {
                s.delta_hits += 1;
            }
        }
    }
    MetricReport::from_sums(s, unit_label)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of per-sample metrics.
    #[default]
    PerSample,
    /// Pool all pixels, then compute each metric once.
    PixelWeighted,
}

#[derive(Clone, Debug)]
pub struct SampleRow {
    pub id: String,
    pub result: std::result::Result<MetricReport, String>,
}

#[derive(Clone, Debug)]
pub struct DatasetReport {
    pub rows: Vec<SampleRow>,
    pub aggregate: Option<MetricReport>,
}

impl DatasetReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }

    /// Tab-separated table: header, one row per sample, then `mean`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("id\tabs_rel\trmse\tirmse\tdelta\tn_valid\tstatus\n");
        let mut row = |id: &str, r: &MetricReport| {
            let _ = writeln!(out, "{id}\t{:.9}\t{:.9}\t{:.9}\t{:.6}\t{}\tok", r.abs_rel, r.rmse, r.irmse, r.delta, r.n_valid);
        };
        for r in &self.rows {
            if let Ok(m) = &r.result {
                row(&r.id, m);
            }
        }
        if let Some(agg) = &self.aggregate {
            row("mean", agg);
        }
        for r in &self.rows {
            if let Err(e) = &r.result {
                let _ = writeln!(out, "{}\t\t\t\t\t\tfailed: {}", r.id, e.replace(['\t', '\n'], " "));
            }
        }
        out
    }
}

/// Pairwise summation so the aggregate does not depend on accumulation order
/// quirks of long sequences.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn evaluate_dataset<'a, I>(pairs: I, delta_threshold: f64, unit_label: &str, aggregation: Aggregation) -> DatasetReport
where
    I: IntoIterator<Item = (String, &'a Grid2D, &'a Grid2D)>,
{
    let rows: Vec<SampleRow> = pairs
        .into_iter()
        .map(|(id, pred, gt)| SampleRow {
            id,
            result: evaluate_pair(pred, gt, delta_threshold, unit_label).map_err(|e| e.to_string()),
        })
        .collect();
    let ok: Vec<&MetricReport> = rows.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let aggregate = if ok.is_empty() {
        None
    } else {
        match aggregation {
            Aggregation::PerSample => {
                let mean = |f: fn(&MetricReport) -> f64| pairwise_sum(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()) / ok.len() as f64;
                let sums = ok.iter().fold(PixelSums::default(), |a, r| a.merge(&r.sums));
                Some(MetricReport {
                    abs_rel: mean(|r| r.abs_rel),
                    rmse: mean(|r| r.rmse),
                    irmse: mean(|r| r.irmse),
                    delta: mean(|r| r.delta),
                    n_valid: sums.n_valid,
                    n_zero_pred: sums.n_valid - sums.n_ratio,
                    unit_label: unit_label.to_owned(),
                    sums,
                })
            }
            Aggregation::PixelWeighted => {
                let sums = ok.iter().fold(PixelSums::default(), |a, r| a.merge(&r.sums));
                MetricReport::from_sums(sums, unit_label).ok()
            }
        }
    };
    DatasetReport { rows, aggregate }
}
