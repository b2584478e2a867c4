use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts for the anomaly class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, zero when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// F1 on class 1.
pub fn f1(pred: &[u8], truth: &[u8]) -> Result<f64> {
    Ok(Confusion::from_labels(pred, truth)?.f1())
}

/// Mean and 95% normal-approximation half-width `1.96·s/√n` with the sample
/// standard deviation. A single score has half-width 0.
pub fn mean_ci(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to aggregate".into()));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok((scores[0], 0.0));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Precision-weighted coverage relative to a base model, in percent:
/// `100 · (prec · tp) / (prec_base · tp_base)`.
pub fn bpwc(prec: f64, tp: u64, prec_base: f64, tp_base: u64) -> Result<f64> {
    for (name, p) in [("precision", prec), ("base precision", prec_base)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} {p} outside [0,1]")));
        }
    }
    let base = prec_base * tp_base as f64;
    if base <= 0.0 {
        return Err(Error::InvalidArgument("base precision × true positives must be > 0".into()));
    }
    Ok(100.0 * ((prec * tp as f64) / base))
}
