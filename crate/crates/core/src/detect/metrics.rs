use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const Q_LOW: f64 = 0.02;
pub const Q_HIGH: f64 = 0.98;
pub const MIN_QUANTILE_SAMPLES: usize = 50;

/// Empirical quantile with linear interpolation between order statistics at
/// position `q·(n−1)`. `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Flags a transport cost outside the clean [q_low, q_high] quantile band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileCostDetector {
    pub low: f64,
    pub high: f64,
    pub q_low: f64,
    pub q_high: f64,
}

pub fn fit_quantile_detector(clean_costs: &[f64]) -> Result<QuantileCostDetector> {
    if clean_costs.len() < MIN_QUANTILE_SAMPLES {
        return Err(Error::contract(format!(
            "quantile detector needs at least {MIN_QUANTILE_SAMPLES} clean costs, got {}",
            clean_costs.len()
        )));
    }
    if clean_costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite transport cost".into()));
    }
    let mut s = clean_costs.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(QuantileCostDetector {
        low: quantile(&s, Q_LOW),
        high: quantile(&s, Q_HIGH),
        q_low: Q_LOW,
        q_high: Q_HIGH,
    })
}

impl QuantileCostDetector {
    pub fn predict(&self, cost: f64) -> u8 {
        u8::from(cost < self.low || cost > self.high)
    }
}

/// Mann–Whitney AUROC with midranks: P(pos > neg) + ½·P(pos = neg).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::contract("labels must be 0 or 1"));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUROC needs both labels present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks are 1-based; doubled so midranks stay integral
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank2 += mid2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // 2·U = Σ 2·rank − p(p+1)
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Counts of a binary detector against ground truth (1 = adversarial).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

/// `num/den`, or 0 for an empty denominator.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
