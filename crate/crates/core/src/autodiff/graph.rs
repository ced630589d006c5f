use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Parameter,
    Data,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf(LeafKind),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[n × m] + [1 × m]` broadcast over rows.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Scale(NodeId, T),
    SumSq(NodeId),
    /// Mean softmax cross-entropy; caches the softmax for backward.
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        softmax: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Tape of eagerly evaluated operations.
///
/// Nodes are appended in evaluation order, so every parent index precedes
/// its child and the tape is already topologically sorted for the reverse
/// sweep.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar output with respect to every leaf of the graph.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor<T>> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor<T>> {
        self.by_leaf.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor<T>)> {
        self.by_leaf.iter()
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, kind: LeafKind) -> NodeId {
        self.push(Op::Leaf(kind), value)
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, LeafKind::Parameter)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, LeafKind::Data)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Adds a `[1 × m]` row to every row of an `[n × m]` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        let (n, m) = av.dims2()?;
        let (one, m2) = rv.dims2()?;
        if one != 1 || m != m2 {
            return Err(Error::dim(format!(
                "row broadcast of {:?} onto {:?}",
                rv.shape(),
                av.shape()
            )));
        }
        let mut out = av.data().to_vec();
        for i in 0..n {
            for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let v = Tensor::from_parts(vec![n, m], out);
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).relu();
        self.push(Op::Relu(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum_sq());
        self.push(Op::SumSq(a), v)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, evaluated with
    /// max-subtraction so large logits do not overflow.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        let (n, k) = z.dims2()?;
        if labels.len() != n {
            return Err(Error::dim(format!(
                "{} labels for a batch of {n} logit rows",
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Index(format!("label {l} at position {i} but only {k} classes")));
        }
        let mut softmax = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = z.row_slice(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let denom: T = exps.iter().copied().sum();
            total += denom.ln() - (row[label] - max);
            softmax.extend(exps.iter().map(|&e| e / denom));
        }
        let v = Tensor::scalar(total / T::of_usize(n));
        let softmax = Tensor::from_parts(vec![n, k], softmax);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
            v,
        ))
    }

    /// Inputs of every ReLU node, in tape order. Used to detect kinks.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.nodes.iter().filter_map(move |n| match n.op {
            Op::Relu(a) => Some(self.value(a)),
            _ => None,
        })
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Every leaf receives a gradient, zero-filled when the output does not
    /// depend on it.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.shape(), T::one()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(_) => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let (n, m) = (g.shape()[0], g.shape()[1]);
                    let mut gr = vec![T::zero(); m];
                    for i in 0..n {
                        for (s, &v) in gr.iter_mut().zip(g.row_slice(i)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *row, Tensor::from_parts(vec![1, m], gr));
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    // subgradient 0 at the kink
                    let x = self.value(*a);
                    let ga = g.zip_with(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.scale(*c));
                }
                Op::SumSq(a) => {
                    let s = g.data()[0] + g.data()[0];
                    let ga = self.value(*a).scale(s);
                    accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    softmax,
                } => {
                    let n = labels.len();
                    let k = softmax.shape()[1];
                    let coef = g.data()[0] / T::of_usize(n);
                    let mut d = softmax.data().to_vec();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * k + l] -= T::one();
                    }
                    for v in d.iter_mut() {
                        *v *= coef;
                    }
                    accumulate(&mut grads, *logits, Tensor::from_parts(vec![n, k], d));
                }
            }
        }

        let by_leaf = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf(_)))
            .map(|(i, n)| {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (NodeId(i), g)
            })
            .collect();
        Ok(Gradients { by_leaf })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
