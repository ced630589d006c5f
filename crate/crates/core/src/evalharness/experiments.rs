use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::detect::{
    auroc, extract_features, fit_ensemble, fit_quantile_detector, ratio, Confusion, DetectionSample, EnsembleDetector,
    ForestConfig, QuantileCostDetector, DEFAULT_MIN_CLASS_SAMPLES,
};
use crate::error::{Error, Result};
use crate::evalharness::bundle::{split_indices, BundleEntry, DetectionBundle};
use crate::evalharness::Dataset;
use crate::model::ResidualNet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub forest: ForestConfig,
    pub min_class_samples: usize,
    /// Add noisy copies of the clean points, labelled clean.
    pub with_noise: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            forest: ForestConfig::default(),
            min_class_samples: DEFAULT_MIN_CLASS_SAMPLES,
            with_noise: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub accuracy: f64,
    /// Detection rate on adversarials that fool the net and whose clean
    /// source is classified correctly.
    pub tpr_successful: f64,
    /// Detection rate on every positive.
    pub tpr_all: f64,
    pub fpr: f64,
    /// General-forest score only; absent for the quantile detector.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Attack name, or `ood`.
    pub name: String,
    pub n_negative: usize,
    pub n_positive: usize,
    /// Positives counted by `tpr_successful`.
    pub n_successful: usize,
    /// Share of test adversarials that changed the prediction.
    pub attack_success_rate: f64,
    pub forest: DetectorMetrics,
    pub quantile: DetectorMetrics,
    pub quantile_low: f64,
    pub quantile_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub classifier_test_accuracy: f64,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn to_document(&self) -> String {
        crate::textfmt::to_string(self)
    }

    /// Every rate lies in [0, 1].
    pub fn rates_in_range(&self) -> bool {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        ok(self.classifier_test_accuracy)
            && self.rows.iter().all(|r| {
                ok(r.attack_success_rate)
                    && [r.forest, r.quantile].iter().all(|m| {
                        ok(m.accuracy) && ok(m.tpr_successful) && ok(m.tpr_all) && ok(m.fpr) && m.auroc.is_none_or(ok)
                    })
            })
    }
}

/// A point to score: `truth` 1 for positives; `counted` marks positives in
/// the restricted TPR.
#[derive(Debug, Clone)]
pub struct Scored<T> {
    pub point: Vec<T>,
    pub truth: u8,
    pub counted: bool,
    pub attack_success: bool,
}

impl<T: Scalar> From<&BundleEntry<T>> for Scored<T> {
    fn from(e: &BundleEntry<T>) -> Self {
        Scored {
            point: e.point.clone(),
            truth: u8::from(e.is_adversarial()),
            counted: e.is_adversarial() && e.attack_success && e.source_correct,
            attack_success: e.attack_success,
        }
    }
}

/// Features and transport costs of a set of points, in order.
pub fn detection_samples<T: Scalar>(
    net: &ResidualNet<T>,
    pts: &[Scored<T>],
) -> Result<(Vec<DetectionSample>, Vec<f64>)> {
    let out: Vec<(DetectionSample, f64)> = pts
        .par_iter()
        .map(|s| {
            let t = net.forward(&s.point)?;
            Ok((
                DetectionSample {
                    features: extract_features(&t),
                    label: s.truth,
                    predicted_class: t.predicted,
                },
                t.transport_cost().as_f64(),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn metrics(pred: &[u8], pts: &[(u8, bool)], scores: Option<&[f64]>) -> Result<DetectorMetrics> {
    let truth: Vec<u8> = pts.iter().map(|p| p.0).collect();
    let c = Confusion::from_labels(pred, &truth);
    let counted: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].1).collect();
    let hit = counted.iter().filter(|&&i| pred[i] == 1).count();
    Ok(DetectorMetrics {
        accuracy: c.accuracy(),
        tpr_successful: ratio(hit, counted.len()),
        tpr_all: c.tpr(),
        fpr: c.fpr(),
        auroc: scores.map(|s| auroc(s, &truth)).transpose()?,
    })
}

/// Scores `pts` with both detectors.
pub fn evaluate<T: Scalar>(
    net: &ResidualNet<T>,
    det: &EnsembleDetector,
    qdet: &QuantileCostDetector,
    name: &str,
    pts: &[Scored<T>],
) -> Result<ReportRow> {
    let (samples, costs) = detection_samples(net, pts)?;
    let n_positive = pts.iter().filter(|p| p.truth == 1).count();
    if n_positive == 0 || n_positive == pts.len() {
        return Err(Error::contract("a detection test set needs clean and positive points"));
    }
    let verdicts: Vec<_> = samples
        .iter()
        .map(|s| det.predict(&s.features.values, s.predicted_class))
        .collect();
    let labels: Vec<u8> = verdicts.iter().map(|v| v.label).collect();
    let general: Vec<f64> = verdicts.iter().map(|v| v.general_score).collect();
    let qlabels: Vec<u8> = costs.iter().map(|&c| qdet.predict(c)).collect();
    let truth: Vec<(u8, bool)> = pts.iter().map(|p| (p.truth, p.counted)).collect();
    let positives: Vec<&Scored<T>> = pts.iter().filter(|p| p.truth == 1).collect();
    Ok(ReportRow {
        name: name.to_string(),
        n_negative: pts.len() - n_positive,
        n_positive,
        n_successful: pts.iter().filter(|p| p.counted).count(),
        attack_success_rate: ratio(positives.iter().filter(|p| p.attack_success).count(), positives.len()),
        forest: metrics(&labels, &truth, Some(&general))?,
        quantile: metrics(&qlabels, &truth, None)?,
        quantile_low: qdet.low,
        quantile_high: qdet.high,
    })
}

/// Fits the ensemble on `train` and the quantile detector on the costs of
/// its clean (label 0, non-noisy) points.
pub fn fit_detectors<T: Scalar>(
    net: &ResidualNet<T>,
    train: &[Scored<T>],
    clean_for_quantiles: &[Scored<T>],
    cfg: &DetectConfig,
) -> Result<(EnsembleDetector, QuantileCostDetector)> {
    let (samples, _) = detection_samples(net, train)?;
    if samples.iter().all(|s| s.label == samples[0].label) {
        return Err(Error::contract("detector training set has a single label"));
    }
    let det = fit_ensemble(&samples, &cfg.forest, cfg.min_class_samples)?;
    let (_, costs) = detection_samples(net, clean_for_quantiles)?;
    Ok((det, fit_quantile_detector(&costs)?))
}

fn bundle_detectors<T: Scalar>(
    net: &ResidualNet<T>,
    bundle: &DetectionBundle<T>,
    cfg: &DetectConfig,
) -> Result<(EnsembleDetector, QuantileCostDetector)> {
    let train: Vec<Scored<T>> = bundle.train().into_iter().map(Scored::from).collect();
    let clean: Vec<Scored<T>> = bundle.b1.iter().map(Scored::from).collect();
    fit_detectors(net, &train, &clean, cfg)
}

fn test_points<T: Scalar>(bundle: &DetectionBundle<T>) -> Vec<Scored<T>> {
    bundle.test().into_iter().map(Scored::from).collect()
}

fn clean_accuracy<T: Scalar>(bundle: &DetectionBundle<T>) -> f64 {
    let all: Vec<&BundleEntry<T>> = bundle.b1.iter().chain(&bundle.b2).collect();
    ratio(all.iter().filter(|e| e.source_correct).count(), all.len())
}

fn report(experiment: &str, accuracy: f64, rows: Vec<ReportRow>) -> ExperimentReport {
    ExperimentReport {
        experiment: experiment.into(),
        classifier_test_accuracy: accuracy,
        seeds: BTreeMap::new(),
        config: serde_json::Value::Null,
        rows,
    }
}

/// Detector trained and tested on the same attack.
pub fn run_seen<T: Scalar>(
    net: &ResidualNet<T>,
    bundle: &DetectionBundle<T>,
    cfg: &DetectConfig,
) -> Result<ExperimentReport> {
    let (det, q) = bundle_detectors(net, bundle, cfg)?;
    let row = evaluate(net, &det, &q, bundle.attack.kind.name(), &test_points(bundle))?;
    Ok(report("seen", clean_accuracy(bundle), vec![row]))
}

/// Detector trained on an FGM bundle, tested on the test split of every
/// other bundle.
pub fn run_unseen<T: Scalar>(
    net: &ResidualNet<T>,
    train_bundle: &DetectionBundle<T>,
    test_bundles: &[DetectionBundle<T>],
    cfg: &DetectConfig,
) -> Result<ExperimentReport> {
    if train_bundle.attack.kind != AttackKind::Fgm {
        return Err(Error::contract("the unseen-attack detector is trained on FGM"));
    }
    let (det, q) = bundle_detectors(net, train_bundle, cfg)?;
    let rows = test_bundles
        .iter()
        .map(|b| evaluate(net, &det, &q, b.attack.kind.name(), &test_points(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(report("unseen", clean_accuracy(train_bundle), rows))
}

/// Detector trained to tell `first` (label 0) from `second` (label 1),
/// tested on held-out `first` against `third`. Every set is split 0.9/0.1
/// with `split_seed`.
pub fn run_ood<T: Scalar>(
    net: &ResidualNet<T>,
    first: &Dataset<T>,
    second: &Dataset<T>,
    third: &Dataset<T>,
    cfg: &DetectConfig,
    split_seed: u64,
) -> Result<ExperimentReport> {
    for d in [first, second, third] {
        if d.dim() != net.dim() {
            return Err(Error::contract(format!(
                "distribution has d = {}, net expects {}",
                d.dim(),
                net.dim()
            )));
        }
    }
    let scored = |d: &Dataset<T>, idx: &[usize], truth: u8| -> Vec<Scored<T>> {
        idx.iter()
            .map(|&i| Scored {
                point: d.points[i].clone(),
                truth,
                counted: truth == 1,
                attack_success: false,
            })
            .collect()
    };
    let (f1, f2) = split_indices(first.len(), split_seed);
    let (s1, _) = split_indices(second.len(), split_seed);
    let (_, t2) = split_indices(third.len(), split_seed);
    let clean_train = scored(first, &f1, 0);
    let mut train = clean_train.clone();
    train.extend(scored(second, &s1, 1));
    let (det, q) = fit_detectors(net, &train, &clean_train, cfg)?;
    let mut test = scored(first, &f2, 0);
    test.extend(scored(third, &t2, 1));
    let row = evaluate(net, &det, &q, "ood", &test)?;
    let (pred, _) = net.predict_batch(&first.points)?;
    let acc = ratio(
        pred.iter().zip(&first.labels).filter(|(p, y)| p == y).count(),
        first.len(),
    );
    Ok(report("ood", acc, vec![row]))
}
