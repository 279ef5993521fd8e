//! Pixel-level segmentation scores and PSNR.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub iou: f64,
}

pub fn confusion(pred: &Raster, gt: &Raster) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(invalid(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(invalid("confusion counts need binary masks"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// A zero denominator scores 1 when both masks are empty for that ratio
/// and 0 otherwise.
pub fn scores(c: &ConfusionCounts) -> Scores {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let both_empty = c.tp + c.fp + c.fn_ == 0;
    let ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else if both_empty {
            1.0
        } else {
            0.0
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let accuracy = ratio(tp + tn, tp + fp + fn_ + tn);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let iou = ratio(tp, tp + fp + fn_);
    Scores { precision, recall, accuracy, f1, iou }
}

/// `10·log10(255²/MSE)` with both maps scaled by 255; identical maps give
/// `+∞`.
pub fn psnr(pred: &Raster, gt: &Raster) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(invalid(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let n = pred.data.len().max(1) as f64;
    let se: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| {
            let d = 255.0 * (p as f64 - g as f64);
            d * d
        })
        .sum();
    let mse = se / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64 * 255.0 / mse).log10() })
}

pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRow {
    pub id: String,
    pub scores: Scores,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub iou: f64,
    /// Mean over samples with finite PSNR, `None` when there are none.
    pub psnr: Option<f64>,
    pub psnr_infinite: usize,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub rows: Vec<SampleRow>,
}

/// One item to score: probability map and binary ground truth.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub prob: &'a Raster,
    pub gt: &'a Raster,
}

/// Micro-averaged scores over the set: counts are pooled before scoring.
pub fn evaluate_set(items: &[EvalItem<'_>]) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(invalid("cannot evaluate an empty set"));
    }
    let mut pooled = ConfusionCounts::default();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let (mut psnr_sum, mut psnr_n, mut psnr_inf) = (0.0, 0usize, 0usize);
    for it in items {
        let scored = confusion(&it.prob.binarize(), it.gt).and_then(|c| Ok((c, psnr(it.prob, it.gt)?)));
        match scored {
            Ok((c, p)) => {
                pooled.merge(&c);
                if p.is_infinite() {
                    psnr_inf += 1;
                } else {
                    psnr_sum += p;
                    psnr_n += 1;
                }
                rows.push(SampleRow { id: it.id.to_string(), scores: scores(&c), psnr: p });
            }
            Err(e) => skipped.push(Skipped { id: it.id.to_string(), reason: e.to_string() }),
        }
    }
    let s = scores(&pooled);
    let report = EvalReport {
        samples: rows.len(),
        counts: pooled,
        precision: s.precision,
        recall: s.recall,
        accuracy: s.accuracy,
        f1: s.f1,
        iou: s.iou,
        psnr: (psnr_n > 0).then(|| psnr_sum / psnr_n as f64),
        psnr_infinite: psnr_inf,
        skipped,
    };
    Ok(Evaluation { report, rows })
}

pub const CSV_HEADER: [&str; 7] = ["id", "precision", "recall", "accuracy", "f1", "iou", "psnr"];

pub fn write_rows_csv(path: &Path, rows: &[SampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::error::file_err(path, e.to_string()))?;
    let mut put = |rec: Vec<String>| w.write_record(rec).map_err(|e| crate::error::file_err(path, e.to_string()));
    put(CSV_HEADER.iter().map(|s| s.to_string()).collect())?;
    for r in rows {
        let s = &r.scores;
        put(vec![
            r.id.clone(),
            format!("{:.6}", s.precision),
            format!("{:.6}", s.recall),
            format!("{:.6}", s.accuracy),
            format!("{:.6}", s.f1),
            format!("{:.6}", s.iou),
            format_psnr(r.psnr),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| crate::error::file_err(path, e.to_string()))?;
    writeln!(f).map_err(io_err(path))
}
