use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::Dataset;
use crate::scalar::Scalar;
use crate::textfmt::format_real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Clean,
    Adversarial,
    Noisy,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Clean => "clean",
            Origin::Adversarial => "adversarial",
            Origin::Noisy => "noisy",
        }
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Origin::Clean),
            "adversarial" => Ok(Origin::Adversarial),
            "noisy" => Ok(Origin::Noisy),
            _ => Err(Error::Document(format!("unknown origin tag {s:?}"))),
        }
    }
}

/// One labelled point of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub point: Vec<T>,
    pub label: usize,
    pub origin: Origin,
}

/// CSV with header `x0,…,x{d-1},label,origin`.
pub fn write_dataset_csv<T: Scalar, W: Write>(out: W, records: &[Record<T>]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.point.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("origin".into());
    w.write_record(&header)?;
    for r in records {
        if r.point.len() != d {
            return Err(Error::dim("records differ in dimension"));
        }
        let mut row: Vec<String> = r.point.iter().map(|v| format_real(v.as_f64())).collect();
        row.push(r.label.to_string());
        row.push(r.origin.name().into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<Record<T>>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    let ok = cols >= 3
        && header
            .iter()
            .take(cols - 2)
            .enumerate()
            .all(|(i, h)| h == format!("x{i}"))
        && &header[cols - 2] == "label"
        && &header[cols - 1] == "origin";
    if !ok {
        return Err(Error::Document("dataset CSV header must be x0,…,label,origin".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Document(format!("dataset CSV row {}: bad {what}", i + 1));
        let point = rec
            .iter()
            .take(cols - 2)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(T::of)
                    .ok_or_else(|| bad("coordinate"))
            })
            .collect::<Result<Vec<T>>>()?;
        out.push(Record {
            point,
            label: rec[cols - 2].parse().map_err(|_| bad("label"))?,
            origin: rec[cols - 1].parse()?,
        });
    }
    Ok(out)
}

pub fn clean_records<T: Scalar>(d: &Dataset<T>) -> Vec<Record<T>> {
    d.points
        .iter()
        .zip(&d.labels)
        .map(|(p, &label)| Record {
            point: p.clone(),
            label,
            origin: Origin::Clean,
        })
        .collect()
}

/// Dataset from the clean records of a file.
pub fn dataset_from_records<T: Scalar>(records: &[Record<T>]) -> Result<Dataset<T>> {
    let clean: Vec<&Record<T>> = records.iter().filter(|r| r.origin == Origin::Clean).collect();
    Dataset::new(
        clean.iter().map(|r| r.point.clone()).collect(),
        clean.iter().map(|r| r.label).collect(),
    )
}
