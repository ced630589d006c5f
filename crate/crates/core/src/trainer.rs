//! Cross-entropy training and transport-regularized (LAP) training.
//!
//! LAP training solves `min 𝒞(θ) s.t. ℒ(θ) = 0` with a method of
//! multipliers: `s` SGD steps on `𝒞(θ) + λ_i·ℒ(θ)`, then
//! `λ_{i+1} = λ_i + τ·ℒ(θ_{i+1})`, where `ℒ(θ_{i+1})` is the cross-entropy
//! of the current mini-batch re-evaluated after the step. `𝒞` is the batch
//! mean of per-sample transport cost. The SGD steps on `𝒞 + λ_i·ℒ` use the
//! step size `learning_rate / λ_i`, which leaves the arg-min unchanged and
//! keeps the classification step bounded while λ grows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::ResidualNet;
use crate::scalar::Scalar;

/// Loss level above which training is aborted as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Vanilla,
    Lap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Growth factor of the multiplier.
    pub tau: f64,
    /// SGD steps per multiplier update.
    pub s: usize,
    /// Initial weight of the classification loss.
    pub lambda0: f64,
    /// Rescale the full gradient to at most this L2 norm; `0` disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Vanilla,
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 32,
            tau: 1.0,
            s: 1,
            lambda0: 1.0,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::contract("tau must be positive"));
        }
        if self.s == 0 {
            return Err(Error::contract("s must be positive"));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::contract("lambda0 must be positive"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::contract("grad_clip must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    /// Per-epoch mean cross-entropy (pre-step batch values).
    pub loss_history: Vec<T>,
    /// Per-epoch mean transport cost.
    pub cost_history: Vec<T>,
    /// `λ_0, λ_1, ...`; only `λ_0` for vanilla training.
    pub lambda_trace: Vec<T>,
    /// The `ℒ(θ_{i+1})` used for each multiplier update.
    pub multiplier_losses: Vec<T>,
    pub final_train_accuracy: f64,
}

#[derive(Serialize)]
struct TrainReportDoc {
    loss_history: Vec<f64>,
    cost_history: Vec<f64>,
    lambda_trace: Vec<f64>,
    multiplier_losses: Vec<f64>,
    final_train_accuracy: f64,
}

impl<T: Scalar> TrainReport<T> {
    /// Structured-text rendering with per-epoch arrays.
    pub fn to_document(&self) -> String {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        crate::textfmt::to_string(&TrainReportDoc {
            loss_history: f(&self.loss_history),
            cost_history: f(&self.cost_history),
            lambda_trace: f(&self.lambda_trace),
            multiplier_losses: f(&self.multiplier_losses),
            final_train_accuracy: self.final_train_accuracy,
        })
    }
}

/// Value of `𝒞 + λ·ℒ` and its two parts on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<T> {
    pub total: T,
    pub loss: T,
    pub cost: T,
}

/// `λ + τ·ℒ`.
pub fn multiplier_update<T: Scalar>(lambda: T, tau: T, loss: T) -> T {
    lambda + tau * loss
}

struct BatchGraph<T> {
    graph: Graph<T>,
    params: Vec<NodeId>,
    total: NodeId,
    loss: NodeId,
    cost: NodeId,
}

fn batch_graph<T: Scalar>(
    net: &ResidualNet<T>,
    xs: &[&[T]],
    labels: &[usize],
    lambda: Option<T>,
) -> Result<BatchGraph<T>> {
    let mut g = Graph::new();
    let params = net.param_leaves(&mut g);
    let input = g.input(Tensor::from_rows(xs)?);
    let nodes = net.build(&mut g, &params, input)?;
    let loss = g.cross_entropy(nodes.logits, labels)?;
    let mut cost_sum = g.sum_sq(nodes.residues[0]);
    for &r in &nodes.residues[1..] {
        let c = g.sum_sq(r);
        cost_sum = g.add(cost_sum, c)?;
    }
    let cost = g.scale(cost_sum, T::one() / T::of_usize(xs.len()));
    let total = match lambda {
        Some(l) => {
            let weighted = g.scale(loss, l);
            g.add(cost, weighted)?
        }
        None => loss,
    };
    Ok(BatchGraph {
        graph: g,
        params,
        total,
        loss,
        cost,
    })
}

fn check_data<T: Scalar, X: AsRef<[T]>>(net: &ResidualNet<T>, xs: &[X], labels: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    if xs.len() != labels.len() {
        return Err(Error::dim(format!("{} inputs but {} labels", xs.len(), labels.len())));
    }
    if let Some(i) = xs.iter().position(|x| x.as_ref().len() != net.dim()) {
        return Err(Error::dim(format!(
            "sample {i} has {} coordinates, net expects {}",
            xs[i].as_ref().len(),
            net.dim()
        )));
    }
    if let Some(i) = labels.iter().position(|&l| l >= net.num_classes()) {
        return Err(Error::Index(format!(
            "label {} of sample {i} exceeds {} classes",
            labels[i],
            net.num_classes()
        )));
    }
    Ok(())
}

/// `𝒞 + λ·ℒ` on one batch, with `total == cost + λ·loss` bit for bit.
pub fn objective<T: Scalar, X: AsRef<[T]>>(
    net: &ResidualNet<T>,
    xs: &[X],
    labels: &[usize],
    lambda: T,
) -> Result<Objective<T>> {
    if lambda < T::zero() {
        return Err(Error::contract("lambda must be non-negative"));
    }
    check_data(net, xs, labels)?;
    let rows: Vec<&[T]> = xs.iter().map(|x| x.as_ref()).collect();
    let bg = batch_graph(net, &rows, labels, Some(lambda))?;
    Ok(Objective {
        total: bg.graph.value(bg.total).to_scalar()?,
        loss: bg.graph.value(bg.loss).to_scalar()?,
        cost: bg.graph.value(bg.cost).to_scalar()?,
    })
}

pub fn accuracy<T: Scalar, X: AsRef<[T]>>(net: &ResidualNet<T>, xs: &[X], labels: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(labels) {
        if net.predict(x.as_ref())? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// `θ ← θ - lr·u` with `u = scale·∇total`, `u` rescaled to norm `clip`
/// when it is longer.
fn sgd_step<T: Scalar>(net: &mut ResidualNet<T>, bg: &BatchGraph<T>, lr: T, scale: T, clip: T) -> Result<()> {
    let mut grads = bg.graph.backward(bg.total)?;
    let mut lr = lr * scale;
    if clip > T::zero() {
        let norm = scale * grads.iter().map(|(_, g)| g.sum_sq()).sum::<T>().sqrt();
        if norm > clip {
            lr = lr * clip / norm;
        }
    }
    for (p, &leaf) in net.params_mut().into_iter().zip(&bg.params) {
        let g = grads.take(leaf).expect("every parameter is a leaf");
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Trains `net` in place with mini-batch SGD.
pub fn train<T: Scalar, X: AsRef<[T]>>(
    net: &mut ResidualNet<T>,
    xs: &[X],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    check_data(net, xs, labels)?;
    let lr = T::of(cfg.learning_rate);
    let tau = T::of(cfg.tau);
    let lap = cfg.mode == TrainMode::Lap;
    let limit = T::of(DIVERGENCE_LIMIT);
    let clip = T::of(cfg.grad_clip);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut lambda = T::of(cfg.lambda0);
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(cfg.epochs),
        cost_history: Vec::with_capacity(cfg.epochs),
        lambda_trace: vec![lambda],
        multiplier_losses: Vec::new(),
        final_train_accuracy: 0.0,
    };
    let mut steps_since_update = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut cost_sum) = (T::zero(), T::zero());
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[T]> = chunk.iter().map(|&i| xs[i].as_ref()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let bg = batch_graph(net, &rows, &ys, lap.then_some(lambda))?;
            let loss = bg.graph.value(bg.loss).to_scalar()?;
            let total = bg.graph.value(bg.total).to_scalar()?;
            if !total.is_finite() || !loss.is_finite() || loss > limit || total > limit {
                return Err(Error::Divergence {
                    epoch,
                    loss: total.as_f64(),
                });
            }
            let weight = T::of_usize(chunk.len());
            loss_sum += loss * weight;
            cost_sum += bg.graph.value(bg.cost).to_scalar()? * weight;
            let scale = if lap { T::one() / lambda } else { T::one() };
            sgd_step(net, &bg, lr, scale, clip)?;

            if lap {
                steps_since_update += 1;
                if steps_since_update == cfg.s {
                    steps_since_update = 0;
                    let after = batch_graph(net, &rows, &ys, None)?;
                    let new_loss = after.graph.value(after.loss).to_scalar()?;
                    if !new_loss.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            loss: new_loss.as_f64(),
                        });
                    }
                    lambda = multiplier_update(lambda, tau, new_loss);
                    report.lambda_trace.push(lambda);
                    report.multiplier_losses.push(new_loss);
                }
            }
        }
        let n = T::of_usize(xs.len());
        report.loss_history.push(loss_sum / n);
        report.cost_history.push(cost_sum / n);
    }
    report.final_train_accuracy = accuracy(net, xs, labels)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetConfig;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        // two classes centred at (±3σ, 0): separation 6σ with σ = 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let cx = if y == 0 { -1.5 } else { 1.5 };
            xs.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
            ys.push(y);
        }
        (xs, ys)
    }

    fn small_net(seed: u64) -> ResidualNet<f64> {
        let cfg = NetConfig {
            blocks: 2,
            width: 8,
            ..NetConfig::default()
        };
        ResidualNet::init(&cfg, seed).unwrap()
    }

    #[test]
    fn multiplier_update_substitution() {
        assert_eq!(multiplier_update(1.0, 1.0, 0.5), 1.5);
    }

    #[test]
    fn vanilla_separates_gaussian_blobs() {
        let (xs, ys) = blobs(200, 4);
        // threshold oracle: x0 = 0 separates every sample
        let oracle = xs.iter().zip(&ys).filter(|(x, &y)| (x[0] > 0.0) == (y == 1)).count();
        assert_eq!(oracle, 200, "blobs are not separable by the hand-fit threshold");

        let mut net = small_net(1);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &xs, &ys, &cfg).unwrap();
        assert_eq!(report.final_train_accuracy, 1.0);
        assert_eq!(report.loss_history.len(), 50);
        assert_eq!(report.lambda_trace, vec![1.0]);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (xs, ys) = blobs(20, 1);
        let mut net = small_net(2);
        let before = net.clone();
        let cfg = TrainConfig {
            epochs: 0,
            mode: TrainMode::Lap,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &xs, &ys, &cfg).unwrap();
        assert_eq!(net, before);
        assert!(report.loss_history.is_empty() && report.cost_history.is_empty());
        assert!(report.multiplier_losses.is_empty());
    }

    #[test]
    fn lap_bookkeeping_is_exact() {
        let (xs, ys) = blobs(64, 3);
        let mut net = small_net(5);
        let cfg = TrainConfig {
            mode: TrainMode::Lap,
            epochs: 3,
            batch_size: 16,
            s: 2,
            tau: 0.5,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &xs, &ys, &cfg).unwrap();
        // 4 batches per epoch, one update every 2 steps
        assert_eq!(report.multiplier_losses.len(), 6);
        assert_eq!(report.lambda_trace.len(), 7);
        for (i, l) in report.multiplier_losses.iter().enumerate() {
            assert_eq!(report.lambda_trace[i + 1], report.lambda_trace[i] + 0.5 * l);
            assert!(report.lambda_trace[i + 1] >= report.lambda_trace[i]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = blobs(50, 9);
        let cfg = TrainConfig {
            mode: TrainMode::Lap,
            epochs: 4,
            seed: 12,
            ..TrainConfig::default()
        };
        let mut a = small_net(7);
        let mut b = small_net(7);
        let ra = train(&mut a, &xs, &ys, &cfg).unwrap();
        let rb = train(&mut b, &xs, &ys, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.to_document(), rb.to_document());
    }

    #[test]
    fn objective_pieces_recombine() {
        let (xs, ys) = blobs(10, 2);
        let net = small_net(3);
        let o = objective(&net, &xs, &ys, 0.0).unwrap();
        assert_eq!(o.total, o.cost);

        let zero = ResidualNet::<f64>::zeros(&NetConfig::default()).unwrap();
        let o = objective(&zero, &xs, &ys, 2.5).unwrap();
        assert_eq!(o.cost, 0.0);
        assert_eq!(o.total, 2.5 * o.loss);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let lambda: f64 = rng.random_range(0.0..10.0);
            let o = objective(&net, &xs, &ys, lambda).unwrap();
            // independent pieces: mean per-sample transport cost and mean CE
            let (_, trajs) = net.predict_batch(&xs).unwrap();
            let cost: f64 = trajs.iter().map(|t| t.transport_cost()).sum::<f64>() / 10.0;
            let loss: f64 = trajs
                .iter()
                .zip(&ys)
                .map(|(t, &y)| {
                    let m = t.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = t.logits.iter().map(|v| (v - m).exp()).sum();
                    s.ln() + m - t.logits[y]
                })
                .sum::<f64>()
                / 10.0;
            assert!((o.total - (cost + lambda * loss)).abs() < 1e-12);
            assert_eq!(o.total, o.cost + lambda * o.loss);
        }
        assert!(objective(&net, &xs, &ys, -1.0).is_err());
    }

    #[test]
    fn contract_and_divergence_errors() {
        let mut net = small_net(1);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(
            train(&mut net, &empty, &[], &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            train(&mut net, &[vec![0.0, 0.0]], &[5], &TrainConfig::default()),
            Err(Error::Index(_))
        ));

        let (xs, ys) = blobs(40, 1);
        let xs: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| v * 1e3).collect()).collect();
        let cfg = TrainConfig {
            learning_rate: 1e3,
            epochs: 20,
            ..TrainConfig::default()
        };
        let mut net = small_net(1);
        assert!(matches!(train(&mut net, &xs, &ys, &cfg), Err(Error::Divergence { .. })));
    }
}
