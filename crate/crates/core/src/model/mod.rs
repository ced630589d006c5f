//! Residual classifier `x_{m+1} = x_m + h·r_m(x_m)` with an affine head,
//! plus per-input trajectory recording and transport cost.
//!
//! Only the plain residual form is provided. Variants that apply an
//! activation after the skip connection, or non-residual nets read through
//! `x_{m+1} - x_m`, are not implemented.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Input (and embedding) dimension `d`.
    pub dim: usize,
    /// Hidden width `w` of each block.
    pub width: usize,
    /// Number of residual blocks `M`.
    pub blocks: usize,
    /// Number of classes `K`.
    pub classes: usize,
    /// Euler step `h`.
    pub step: f64,
    /// Gain of the orthogonal block initialization.
    pub init_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            dim: 2,
            width: 16,
            blocks: 9,
            classes: 2,
            step: 1.0,
            init_gain: 0.05,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.width == 0 {
            return Err(Error::contract("dim and width must be positive"));
        }
        if self.blocks == 0 {
            return Err(Error::contract("a residual net needs at least one block"));
        }
        if self.classes < 2 {
            return Err(Error::contract("a classifier needs at least two classes"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::contract("step h must be positive"));
        }
        Ok(())
    }
}

/// `r(x) = relu(x·W1 + b1)·W2 + b2`, mapping ℝ^d to ℝ^d (row vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(w1: Tensor<T>, b1: Tensor<T>, w2: Tensor<T>, b2: Tensor<T>) -> Result<Self> {
        let (d, w) = w1.dims2()?;
        let (w_, d_) = w2.dims2()?;
        if w != w_ || d != d_ || b1.shape() != [1, w] || b2.shape() != [1, d] {
            return Err(Error::dim(format!(
                "block shapes W1 {:?}, b1 {:?}, W2 {:?}, b2 {:?} do not form a map R^d -> R^d",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        Ok(ResidualBlock { w1, b1, w2, b2 })
    }

    pub fn zeros(dim: usize, width: usize) -> Self {
        ResidualBlock {
            w1: Tensor::zeros(&[dim, width]),
            b1: Tensor::zeros(&[1, width]),
            w2: Tensor::zeros(&[width, dim]),
            b2: Tensor::zeros(&[1, dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.w1.shape()[1]
    }

    /// Residue of a `[n × d]` batch of rows.
    fn residue(&self, x: &Tensor<T>) -> Tensor<T> {
        let pre = add_bias(&x.matmul(&self.w1).expect("validated block"), &self.b1);
        add_bias(&pre.relu().matmul(&self.w2).expect("validated block"), &self.b2)
    }
}

fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (x.shape()[0], x.shape()[1]);
    let mut out = x.data().to_vec();
    for i in 0..n {
        for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// Record of one input's path through the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `x_0 .. x_M`.
    pub embeddings: Vec<Vec<T>>,
    /// `r_0(x_0) .. r_{M-1}(x_{M-1})`.
    pub residues: Vec<Vec<T>>,
    pub logits: Vec<T>,
    pub predicted: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn num_blocks(&self) -> usize {
        self.residues.len()
    }

    /// Discrete kinetic energy `Σ_m ‖r_m(x_m)‖²`.
    pub fn transport_cost(&self) -> T {
        self.residues
            .iter()
            .map(|r| r.iter().fold(T::zero(), |s, &v| s + v * v))
            .sum()
    }
}

/// Index of the largest logit; ties go to the lowest class id.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Graph nodes produced by [`ResidualNet::build`].
#[derive(Debug, Clone)]
pub struct NetNodes {
    /// `[n × d]` residue of every block.
    pub residues: Vec<NodeId>,
    /// `[n × K]`.
    pub logits: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet<T> {
    blocks: Vec<ResidualBlock<T>>,
    step: T,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Scalar> ResidualNet<T> {
    pub fn new(blocks: Vec<ResidualBlock<T>>, step: T, head_w: Tensor<T>, head_b: Tensor<T>) -> Result<Self> {
        let d = blocks
            .first()
            .ok_or_else(|| Error::contract("a residual net needs at least one block"))?
            .dim();
        if let Some(m) = blocks.iter().position(|b| b.dim() != d) {
            return Err(Error::dim(format!(
                "block {m} has dimension {} but block 0 has {d}",
                blocks[m].dim()
            )));
        }
        if !(step > T::zero()) {
            return Err(Error::contract("step h must be positive"));
        }
        let (hd, k) = head_w.dims2()?;
        if hd != d || head_b.shape() != [1, k] {
            return Err(Error::dim(format!(
                "head {:?} + {:?} does not map R^{d} to class logits",
                head_w.shape(),
                head_b.shape()
            )));
        }
        if k < 2 {
            return Err(Error::contract("a classifier needs at least two classes"));
        }
        Ok(ResidualNet {
            blocks,
            step,
            head_w,
            head_b,
        })
    }

    /// All-zero weights: every residue vanishes and the head outputs zeros.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        ResidualNet::new(
            (0..cfg.blocks)
                .map(|_| ResidualBlock::zeros(cfg.dim, cfg.width))
                .collect(),
            T::of(cfg.step),
            Tensor::zeros(&[cfg.dim, cfg.classes]),
            Tensor::zeros(&[1, cfg.classes]),
        )
    }

    /// Orthogonal initialization scaled by `cfg.init_gain` on block weights,
    /// unit-gain orthogonal head, zero biases.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = T::of(cfg.init_gain);
        let blocks = (0..cfg.blocks)
            .map(|_| ResidualBlock {
                w1: orthogonal(&mut rng, cfg.dim, cfg.width, gain),
                b1: Tensor::zeros(&[1, cfg.width]),
                w2: orthogonal(&mut rng, cfg.width, cfg.dim, gain),
                b2: Tensor::zeros(&[1, cfg.dim]),
            })
            .collect();
        let head_w = orthogonal(&mut rng, cfg.dim, cfg.classes, T::one());
        ResidualNet::new(blocks, T::of(cfg.step), head_w, Tensor::zeros(&[1, cfg.classes]))
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn width(&self) -> usize {
        self.blocks[0].width()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.shape()[1]
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn blocks(&self) -> &[ResidualBlock<T>] {
        &self.blocks
    }

    pub fn head(&self) -> (&Tensor<T>, &Tensor<T>) {
        (&self.head_w, &self.head_b)
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            dim: self.dim(),
            width: self.width(),
            blocks: self.num_blocks(),
            classes: self.num_classes(),
            step: self.step.as_f64(),
            init_gain: NetConfig::default().init_gain,
        }
    }

    /// Parameters in canonical order: per block `W1, b1, W2, b2`, then the
    /// head weight and bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.blocks.iter().flat_map(|b| [&b.w1, &b.b1, &b.w2, &b.b2]).collect();
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self
            .blocks
            .iter_mut()
            .flat_map(|b| [&mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2])
            .collect();
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Adds every parameter to `g` as a parameter leaf, in canonical order.
    pub fn param_leaves(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params().into_iter().map(|p| g.param(p.clone())).collect()
    }

    /// Records the batched forward pass of a `[n × d]` input node.
    pub fn build(&self, g: &mut Graph<T>, params: &[NodeId], input: NodeId) -> Result<NetNodes> {
        if params.len() != 4 * self.blocks.len() + 2 {
            return Err(Error::contract(format!(
                "{} parameter nodes for a net with {} parameters",
                params.len(),
                4 * self.blocks.len() + 2
            )));
        }
        let mut x = input;
        let mut residues = Vec::with_capacity(self.blocks.len());
        for p in params[..4 * self.blocks.len()].chunks(4) {
            let pre = g.matmul(x, p[0])?;
            let pre = g.add_row(pre, p[1])?;
            let hidden = g.relu(pre);
            let r = g.matmul(hidden, p[2])?;
            let r = g.add_row(r, p[3])?;
            residues.push(r);
            let step = g.scale(r, self.step);
            x = g.add(x, step)?;
        }
        let n = params.len();
        let logits = g.matmul(x, params[n - 2])?;
        let logits = g.add_row(logits, params[n - 1])?;
        Ok(NetNodes { residues, logits })
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "input has {} coordinates, net expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Trajectory<T>> {
        self.check_dim(x)?;
        let mut cur = Tensor::row(x);
        let mut embeddings = Vec::with_capacity(self.blocks.len() + 1);
        let mut residues = Vec::with_capacity(self.blocks.len());
        embeddings.push(x.to_vec());
        for block in &self.blocks {
            let r = block.residue(&cur);
            cur = cur.zip_with(&r, |a, b| a + self.step * b);
            residues.push(r.into_data());
            embeddings.push(cur.data().to_vec());
        }
        let logits = add_bias(&cur.matmul(&self.head_w)?, &self.head_b).into_data();
        let predicted = argmax(&logits);
        Ok(Trajectory {
            embeddings,
            residues,
            logits,
            predicted,
        })
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(self.forward(x)?.predicted)
    }

    /// Forward pass of every input, order preserved.
    pub fn predict_batch<X: AsRef<[T]>>(&self, xs: &[X]) -> Result<(Vec<usize>, Vec<Trajectory<T>>)> {
        let trajs = xs
            .iter()
            .map(|x| self.forward(x.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok((trajs.iter().map(|t| t.predicted).collect(), trajs))
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever are
/// fewer), scaled by `gain`.
fn orthogonal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: T) -> Tensor<T> {
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vecs.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            vecs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut data = vec![T::zero(); rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, &a) in v.iter().enumerate() {
            let (r, c) = if rows <= cols { (i, j) } else { (j, i) };
            data[r * cols + c] = T::of(a) * gain;
        }
    }
    Tensor::from_parts(vec![rows, cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg() -> NetConfig {
        NetConfig {
            dim: 3,
            width: 5,
            blocks: 4,
            classes: 3,
            step: 1.0,
            init_gain: 0.8,
        }
    }

    /// Independent loop-based evaluation of the same architecture.
    fn naive_embeddings(net: &ResidualNet<f64>, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![x.to_vec()];
        let mut cur = x.to_vec();
        for b in net.blocks() {
            let (d, w) = (b.dim(), b.width());
            let mut hidden = vec![0.0; w];
            for j in 0..w {
                let mut s = b.b1.data()[j];
                for p in 0..d {
                    s += cur[p] * b.w1.at(p, j);
                }
                hidden[j] = s.max(0.0);
            }
            let mut next = cur.clone();
            for i in 0..d {
                let mut s = b.b2.data()[i];
                for j in 0..w {
                    s += hidden[j] * b.w2.at(j, i);
                }
                next[i] += net.step() * s;
            }
            cur = next;
            out.push(cur.clone());
        }
        out
    }

    #[test]
    fn zero_net_keeps_inputs_fixed() {
        let net = ResidualNet::<f64>::zeros(&small_cfg()).unwrap();
        let t = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(t.embeddings.last().unwrap(), &vec![0.3, -1.0, 2.0]);
        assert!(t.residues.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(t.transport_cost(), 0.0);
        // all logits tie at zero
        assert_eq!(t.predicted, 0);
    }

    #[test]
    fn circles_demo_configuration() {
        let net = ResidualNet::<f64>::init(&NetConfig::default(), 1).unwrap();
        assert_eq!((net.num_blocks(), net.dim(), net.width()), (9, 2, 16));
        let t = net.forward(&[0.5, -0.5]).unwrap();
        assert_eq!(t.embeddings.len(), 10);
        assert_eq!(t.residues.len(), 9);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let net = ResidualNet::<f64>::init(&small_cfg(), 9).unwrap();
        for x in [[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5], [3.0, -0.7, -2.2]] {
            let t = net.forward(&x).unwrap();
            for (a, b) in t.embeddings.iter().zip(naive_embeddings(&net, &x)) {
                for (u, v) in a.iter().zip(b) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = ResidualNet::<f64>::zeros(&small_cfg()).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn transport_cost_of_single_block() {
        let t = Trajectory {
            embeddings: vec![vec![0.0, 0.0], vec![3.0, 4.0]],
            residues: vec![vec![3.0, 4.0]],
            logits: vec![0.0, 1.0],
            predicted: 1,
        };
        assert_eq!(t.transport_cost(), 25.0);
    }

    #[test]
    fn graph_forward_agrees_with_plain_forward() {
        let net = ResidualNet::<f64>::init(&small_cfg(), 21).unwrap();
        let xs = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]];
        let mut g = Graph::new();
        let params = net.param_leaves(&mut g);
        let input = g.input(Tensor::from_rows(&xs).unwrap());
        let nodes = net.build(&mut g, &params, input).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let t = net.forward(x).unwrap();
            assert_eq!(g.value(nodes.logits).row_slice(i), t.logits.as_slice());
            for (m, r) in nodes.residues.iter().enumerate() {
                assert_eq!(g.value(*r).row_slice(i), t.residues[m].as_slice());
            }
        }
    }

    #[test]
    fn predict_batch_is_a_loop_of_forwards() {
        let net = ResidualNet::<f64>::init(&small_cfg(), 4).unwrap();
        let empty: Vec<Vec<f64>> = Vec::new();
        let (p, t) = net.predict_batch(&empty).unwrap();
        assert!(p.is_empty() && t.is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let (preds, trajs) = net.predict_batch(&xs).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let t = net.forward(x).unwrap();
            assert_eq!(preds[i], t.predicted);
            assert_eq!(trajs[i], t);
        }
        let (one, _) = net.predict_batch(&xs[..1]).unwrap();
        assert_eq!(one, vec![net.predict(&xs[0]).unwrap()]);

        let mut rev = xs.clone();
        rev.reverse();
        let (rp, _) = net.predict_batch(&rev).unwrap();
        let mut expected = preds.clone();
        expected.reverse();
        assert_eq!(rp, expected);
    }

    #[test]
    fn batch_transport_cost_matches_direct_sum() {
        let net = ResidualNet::<f64>::init(&small_cfg(), 8).unwrap();
        let (_, trajs) = net.predict_batch(&[vec![1.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]]).unwrap();
        for t in trajs {
            let mut direct = 0.0;
            for r in &t.residues {
                for v in r {
                    direct += v * v;
                }
            }
            assert!((t.transport_cost() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Tensor<f64> = orthogonal(&mut rng, 3, 7, 1.0);
        let gram = w.matmul_t(&w);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let net = ResidualNet::<f32>::init(&small_cfg(), 3).unwrap();
        let t = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(t.embeddings.len(), 5);
    }

    proptest! {
        #[test]
        fn recomputation_identity_is_exact(seed in 0u64..500, x in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let mut cfg = small_cfg();
            cfg.step = 0.7;
            let net = ResidualNet::<f64>::init(&cfg, seed).unwrap();
            let t = net.forward(&x).unwrap();
            for m in 0..t.num_blocks() {
                for i in 0..3 {
                    prop_assert_eq!(t.embeddings[m + 1][i], t.embeddings[m][i] + net.step() * t.residues[m][i]);
                }
            }
        }

        #[test]
        fn transport_cost_ignores_block_order(seed in 0u64..500, x in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let net = ResidualNet::<f64>::init(&small_cfg(), seed).unwrap();
            let t = net.forward(&x).unwrap();
            let mut permuted = t.clone();
            permuted.residues.reverse();
            prop_assert!((t.transport_cost() - permuted.transport_cost()).abs() <= 1e-12 * t.transport_cost().max(1.0));
        }

        #[test]
        fn argmax_invariant_under_logit_shift(logits in proptest::collection::vec(-5.0f64..5.0, 2..6), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            // shifting can merge nearly equal logits through rounding; compare with a margin
            let best = argmax(&logits);
            let second = logits.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(logits[best] - second > 1e-9);
            prop_assert_eq!(argmax(&shifted), best);
        }
    }
}
