//! Trajectory features, random-forest detectors and detection metrics.

mod ensemble;
mod features;
mod forest;
mod metrics;

pub use ensemble::{fit_ensemble, EnsembleDetector, Verdict, DEFAULT_MIN_CLASS_SAMPLES};
pub use features::{
    extract_features, feature_header, read_feature_csv, write_feature_csv, DetectionSample, FeatureVector,
};
pub use forest::{fit_forest, ForestConfig, Node, RandomForest, Tree};
pub use metrics::{
    auroc, fit_quantile_detector, quantile, ratio, Confusion, QuantileCostDetector, MIN_QUANTILE_SAMPLES, Q_HIGH, Q_LOW,
};
