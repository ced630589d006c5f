use std::io::Write;

use crate::error::{Error, Result};
use crate::model::Trajectory;
use crate::scalar::Scalar;

/// Per-block (mean squared residue, cosine with the ones vector), flattened
/// as `norm_0, cos_0, norm_1, cos_1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn num_blocks(&self) -> usize {
        self.values.len() / 2
    }

    pub fn norm(&self, block: usize) -> f64 {
        self.values[2 * block]
    }

    pub fn cosine(&self, block: usize) -> f64 {
        self.values[2 * block + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub features: FeatureVector,
    /// 0 clean, 1 adversarial.
    pub label: u8,
    pub predicted_class: usize,
}

fn block_features<T: Scalar>(r: &[T]) -> (f64, f64) {
    let sq: f64 = r.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    let sum: f64 = r.iter().map(|v| v.as_f64()).sum();
    let d = r.len() as f64;
    let cos = if sq > 0.0 {
        // ‖1‖ = √d
        (sum / (sq.sqrt() * d.sqrt())).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    (sq / d, cos)
}

pub fn extract_features<T: Scalar>(traj: &Trajectory<T>) -> FeatureVector {
    let mut values = Vec::with_capacity(2 * traj.residues.len());
    for r in &traj.residues {
        let (n, c) = block_features(r);
        values.push(n);
        values.push(c);
    }
    FeatureVector { values }
}

pub fn feature_header(blocks: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..blocks)
        .flat_map(|m| [format!("block_{m}_norm"), format!("block_{m}_cos")])
        .collect();
    h.push("label".into());
    h.push("predicted_class".into());
    h
}

pub fn write_feature_csv<W: Write>(out: W, samples: &[DetectionSample]) -> Result<()> {
    let blocks = samples.first().map_or(0, |s| s.features.num_blocks());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header(blocks))?;
    for s in samples {
        if s.features.num_blocks() != blocks {
            return Err(Error::dim("feature vectors differ in length"));
        }
        let mut rec: Vec<String> = s
            .features
            .values
            .iter()
            .map(|&v| crate::textfmt::format_real(v))
            .collect();
        rec.push(s.label.to_string());
        rec.push(s.predicted_class.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: std::io::Read>(input: R) -> Result<Vec<DetectionSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 2 || (cols - 2) % 2 != 0 || header.iter().collect::<Vec<_>>() != feature_header((cols - 2) / 2) {
        return Err(Error::Document("feature CSV header is malformed".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Document(format!("feature CSV row {}: bad {what}", i + 1));
        let values = rec
            .iter()
            .take(cols - 2)
            .map(|v| v.parse::<f64>().map_err(|_| bad("real")))
            .collect::<Result<Vec<_>>>()?;
        let label: u8 = rec[cols - 2].parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(bad("label"));
        }
        let predicted_class = rec[cols - 1].parse().map_err(|_| bad("predicted_class"))?;
        out.push(DetectionSample {
            features: FeatureVector { values },
            label,
            predicted_class,
        });
    }
    Ok(out)
}
