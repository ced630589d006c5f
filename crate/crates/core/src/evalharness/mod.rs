//! Data generation and ingestion, the detection-dataset protocol, and the
//! seen / unseen / out-of-distribution experiments.

mod bundle;
mod datafile;
mod experiments;
mod idx;
mod pipeline;
mod synthetic;

pub use bundle::{build_bundle, split_indices, BundleEntry, DetectionBundle};
pub use datafile::{clean_records, dataset_from_records, read_dataset_csv, write_dataset_csv, Origin, Record};
pub use experiments::{
    detection_samples, evaluate, fit_detectors, run_ood, run_seen, run_unseen, DetectConfig, DetectorMetrics,
    ExperimentReport, ReportRow, Scored,
};
pub use idx::{load_idx, parse_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use pipeline::{Classifier, ExperimentConfig, PipelineConfig, Prepared, Seeds};
pub use synthetic::{gen_synthetic, BoundingBox, Dataset, SyntheticKind, SyntheticSpec};
