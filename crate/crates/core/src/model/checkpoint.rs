use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ResidualBlock, ResidualNet};
use crate::scalar::Scalar;
use crate::textfmt;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    d: usize,
    w: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    h: f64,
    blocks: Vec<BlockDoc>,
    head: HeadDoc,
}

fn matrix<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.shape()[0])
        .map(|r| t.row_slice(r).iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn vector<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn tensor_from<T: Scalar>(what: &str, rows: &[Vec<f64>], shape: [usize; 2]) -> Result<Tensor<T>> {
    if rows.len() != shape[0] || rows.iter().any(|r| r.len() != shape[1]) {
        return Err(Error::dim(format!("{what} is not {}x{}", shape[0], shape[1])));
    }
    let data = rows.iter().flatten().map(|&v| T::of(v)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Serializes a net as a structured-text document.
pub fn save_checkpoint<T: Scalar>(net: &ResidualNet<T>) -> String {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        d: net.dim(),
        w: net.width(),
        m: net.num_blocks(),
        k: net.num_classes(),
        h: net.step().as_f64(),
        blocks: net
            .blocks()
            .iter()
            .map(|b| BlockDoc {
                w1: matrix(&b.w1),
                b1: vector(&b.b1),
                w2: matrix(&b.w2),
                b2: vector(&b.b2),
            })
            .collect(),
        head: HeadDoc {
            weights: matrix(&net.head_w),
            bias: vector(&net.head_b),
        },
    };
    textfmt::to_string(&doc)
}

/// Parses a checkpoint and validates every shape against its header.
pub fn load_checkpoint<T: Scalar>(text: &str) -> Result<ResidualNet<T>> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Document(format!(
            "unsupported checkpoint format_version {}",
            doc.format_version
        )));
    }
    if doc.blocks.len() != doc.m {
        return Err(Error::dim(format!(
            "header says M = {} but {} blocks are stored",
            doc.m,
            doc.blocks.len()
        )));
    }
    let (d, w, k) = (doc.d, doc.w, doc.k);
    let blocks = doc
        .blocks
        .iter()
        .enumerate()
        .map(|(m, b)| {
            ResidualBlock::new(
                tensor_from(&format!("block {m} w1"), &b.w1, [d, w])?,
                tensor_from(&format!("block {m} b1"), std::slice::from_ref(&b.b1), [1, w])?,
                tensor_from(&format!("block {m} w2"), &b.w2, [w, d])?,
                tensor_from(&format!("block {m} b2"), std::slice::from_ref(&b.b2), [1, d])?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualNet::new(
        blocks,
        T::of(doc.h),
        tensor_from("head weights", &doc.head.weights, [d, k])?,
        tensor_from("head bias", std::slice::from_ref(&doc.head.bias), [1, k])?,
    )
}
