//! Untargeted gradient attacks: FGM, BIM, PGD (random start) and DeepFool.
//!
//! FGM/BIM/PGD ascend the cross-entropy of the given label inside an ε-ball
//! (L∞ or L2) around the clean input. DeepFool walks to the linearized
//! nearest decision boundary with no budget. When a domain box is supplied
//! every iterate is clipped to it; the box is widened to contain the clean
//! input so clipping never breaks the ε budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::evalharness::BoundingBox;
use crate::model::{argmax, ResidualNet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgm,
    Bim,
    Pgd,
    Deepfool,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgm => "fgm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Deepfool => "deepfool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "linf")]
    Linf,
    #[serde(rename = "l2")]
    L2,
}

impl Norm {
    pub fn of<T: Scalar>(self, v: &[T]) -> T {
        match self {
            Norm::Linf => v.iter().fold(T::zero(), |m, x| m.max(x.abs())),
            Norm::L2 => {
                // scaled so tiny gradients do not underflow when squared
                let m = Norm::Linf.of(v);
                if m == T::zero() || !m.is_finite() {
                    return m;
                }
                m * v.iter().fold(T::zero(), |s, &x| s + (x / m) * (x / m)).sqrt()
            }
        }
    }

    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        let d: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        self.of(&d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Budget ε; ignored by DeepFool.
    pub epsilon: f64,
    pub norm: Norm,
    /// Iterations; defaults to 10 for BIM/PGD and 100 for DeepFool.
    pub steps: Option<usize>,
    /// Per-iteration step; defaults to ε/4.
    pub step_size: Option<f64>,
    /// PGD only.
    pub random_start: bool,
    /// DeepFool only.
    pub overshoot: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Fgm,
            epsilon: 0.3,
            norm: Norm::Linf,
            steps: None,
            step_size: None,
            random_start: true,
            overshoot: 0.02,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64, norm: Norm) -> Self {
        AttackConfig {
            kind,
            epsilon,
            norm,
            ..AttackConfig::default()
        }
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(match self.kind {
            AttackKind::Deepfool => 100,
            AttackKind::Fgm => 1,
            AttackKind::Bim | AttackKind::Pgd => 10,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != AttackKind::Deepfool && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::contract("attack epsilon must be positive"));
        }
        if self.steps() == 0 {
            return Err(Error::contract("attack steps must be at least 1"));
        }
        if self.kind != AttackKind::Deepfool && !(self.step_size() > 0.0 && self.step_size().is_finite()) {
            return Err(Error::contract("attack step_size must be positive"));
        }
        if !(self.overshoot >= 0.0 && self.overshoot.is_finite()) {
            return Err(Error::contract("overshoot must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult<T> {
    pub adversarial: Vec<T>,
    /// The net's prediction changed.
    pub success: bool,
    /// `‖adversarial - x‖` in the configured norm.
    pub perturbation_norm: T,
    /// Forward/backward evaluations spent.
    pub queries: usize,
    pub original_class: usize,
    pub adversarial_class: usize,
    /// Set when the attack failed with an error inside a batch run.
    pub error: Option<String>,
}

/// Gradient of the cross-entropy of label `y` with respect to the input.
pub fn loss_gradient<T: Scalar>(net: &ResidualNet<T>, x: &[T], y: usize) -> Result<Vec<T>> {
    if x.len() != net.dim() {
        return Err(Error::dim(format!(
            "input has {} coordinates, net expects {}",
            x.len(),
            net.dim()
        )));
    }
    let mut g = Graph::new();
    let params = net.param_leaves(&mut g);
    let input = g.input(Tensor::row(x));
    let nodes = net.build(&mut g, &params, input)?;
    let loss = g.cross_entropy(nodes.logits, &[y])?;
    let grad = g
        .backward(loss)?
        .take(input)
        .expect("input leaf receives a gradient")
        .into_data();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("input gradient is not finite".into()));
    }
    Ok(grad)
}

/// Unit ascent direction: `sign(g)` for L∞, `g/‖g‖₂` for L2. `None` when
/// the gradient vanishes.
fn ascent_direction<T: Scalar>(grad: &[T], norm: Norm) -> Option<Vec<T>> {
    match norm {
        Norm::Linf => {
            if grad.iter().all(|v| *v == T::zero()) {
                return None;
            }
            Some(
                grad.iter()
                    .map(|&v| {
                        if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            )
        }
        Norm::L2 => {
            let n = Norm::L2.of(grad);
            (n > T::zero()).then(|| grad.iter().map(|&v| v / n).collect())
        }
    }
}

/// Closest point of the ε-ball around `center` to `x`: a componentwise clamp
/// for L∞, a radial rescale for L2.
pub fn project<T: Scalar>(center: &[T], x: &mut [T], epsilon: T, norm: Norm) {
    match norm {
        Norm::Linf => {
            for (v, &c) in x.iter_mut().zip(center) {
                *v = v.max(c - epsilon).min(c + epsilon);
            }
        }
        Norm::L2 => {
            let d = Norm::L2.distance(x, center);
            if d > epsilon {
                let s = epsilon / d;
                for (v, &c) in x.iter_mut().zip(center) {
                    *v = c + (*v - c) * s;
                }
            }
        }
    }
}

/// Clips `x` to `domain` widened to contain `center`.
fn clip_to_domain<T: Scalar>(domain: Option<&BoundingBox<T>>, center: &[T], x: &mut [T]) {
    if let Some(b) = domain {
        for (i, v) in x.iter_mut().enumerate() {
            let lo = b.lo[i].min(center[i]);
            let hi = b.hi[i].max(center[i]);
            *v = v.max(lo).min(hi);
        }
    }
}

fn finish<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    adversarial: Vec<T>,
    original_class: usize,
    norm: Norm,
    queries: usize,
) -> Result<AttackResult<T>> {
    let adversarial_class = net.predict(&adversarial)?;
    Ok(AttackResult {
        perturbation_norm: norm.distance(&adversarial, x),
        success: adversarial_class != original_class,
        adversarial,
        queries: queries + 1,
        original_class,
        adversarial_class,
        error: None,
    })
}

/// Fast gradient method: one step of length ε along the ascent direction.
pub fn fgm<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<AttackResult<T>> {
    cfg.validate()?;
    let original = net.predict(x)?;
    let grad = loss_gradient(net, x, y)?;
    let eps = T::of(cfg.epsilon);
    let adv = match ascent_direction(&grad, cfg.norm) {
        Some(dir) => {
            let mut adv: Vec<T> = x.iter().zip(&dir).map(|(&v, &d)| v + eps * d).collect();
            clip_to_domain(domain, x, &mut adv);
            adv
        }
        None => x.to_vec(),
    };
    finish(net, x, adv, original, cfg.norm, 2)
}

/// Starting point of PGD: uniform in the ε-ball (cube for L∞, ball for L2).
pub fn random_start_point<T: Scalar>(x: &[T], epsilon: T, norm: Norm, rng: &mut ChaCha8Rng) -> Vec<T> {
    match norm {
        Norm::Linf => x
            .iter()
            .map(|&v| v + epsilon * T::of(rng.random_range(-1.0..=1.0)))
            .collect(),
        Norm::L2 => {
            let dir: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = rng.random::<f64>().powf(1.0 / x.len() as f64);
            let mut out: Vec<T> = x
                .iter()
                .zip(&dir)
                .map(|(&v, &d)| v + epsilon * T::of(radius * d / n.max(f64::MIN_POSITIVE)))
                .collect();
            project(x, &mut out, epsilon, norm);
            out
        }
    }
}

fn iterate<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
    start: Vec<T>,
) -> Result<AttackResult<T>> {
    let original = net.predict(x)?;
    let eps = T::of(cfg.epsilon);
    let alpha = T::of(cfg.step_size());
    let mut cur = start;
    let mut queries = 1;
    for _ in 0..cfg.steps() {
        let grad = loss_gradient(net, &cur, y)?;
        queries += 1;
        if let Some(dir) = ascent_direction(&grad, cfg.norm) {
            for (v, d) in cur.iter_mut().zip(dir) {
                *v += alpha * d;
            }
            project(x, &mut cur, eps, cfg.norm);
            clip_to_domain(domain, x, &mut cur);
        }
    }
    finish(net, x, cur, original, cfg.norm, queries)
}

/// Basic iterative method: projected FGM steps of size `step_size`.
pub fn bim<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<AttackResult<T>> {
    cfg.validate()?;
    iterate(net, x, y, cfg, domain, x.to_vec())
}

/// BIM from a uniform random point of the ε-ball when `random_start`.
pub fn pgd<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<AttackResult<T>> {
    cfg.validate()?;
    let start = if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = random_start_point(x, T::of(cfg.epsilon), cfg.norm, &mut rng);
        clip_to_domain(domain, x, &mut s);
        s
    } else {
        x.to_vec()
    };
    iterate(net, x, y, cfg, domain, start)
}

/// Logits and the input gradient of `f_k - f_class` for every `k != class`.
fn logit_gaps<T: Scalar>(net: &ResidualNet<T>, x: &[T], class: usize) -> Result<(Vec<T>, Vec<(usize, T, Vec<T>)>)> {
    let mut g = Graph::new();
    let params = net.param_leaves(&mut g);
    let input = g.input(Tensor::row(x));
    let nodes = net.build(&mut g, &params, input)?;
    let logits = g.value(nodes.logits).data().to_vec();
    let k = net.num_classes();
    let mut out = Vec::with_capacity(k - 1);
    for other in (0..k).filter(|&c| c != class) {
        let mut sel = vec![T::zero(); k];
        sel[other] = T::one();
        sel[class] = -T::one();
        let sel = g.input(Tensor::column(&sel));
        let gap = g.matmul(nodes.logits, sel)?;
        let grad = g
            .backward(gap)?
            .take(input)
            .expect("input leaf receives a gradient")
            .into_data();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("logit gradient is not finite".into()));
        }
        out.push((other, logits[other] - logits[class], grad));
    }
    Ok((logits, out))
}

/// DeepFool: repeatedly step to the nearest linearized class boundary,
/// scaling the accumulated perturbation by `1 + overshoot`.
///
/// An input the net already misclassifies (prediction differs from `y`) is
/// returned unchanged with `success = false`.
pub fn deepfool<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<AttackResult<T>> {
    cfg.validate()?;
    let original = net.predict(x)?;
    if original != y {
        return finish(net, x, x.to_vec(), original, cfg.norm, 0);
    }
    let scale = T::one() + T::of(cfg.overshoot);
    let mut total = vec![T::zero(); x.len()];
    let mut cur = x.to_vec();
    let mut queries = 0;
    for _ in 0..cfg.steps() {
        let (logits, gaps) = logit_gaps(net, &cur, original)?;
        queries += 1;
        if argmax(&logits) != original {
            break;
        }
        let best = gaps
            .iter()
            .filter_map(|(_, f, w)| {
                let wn = Norm::L2.of(w);
                (wn > T::zero()).then(|| (f.abs() / wn, f.abs(), wn, w))
            })
            .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
        let Some((_, fabs, wn, w)) = best else {
            // flat logits everywhere: no boundary to walk to
            return finish(net, x, x.to_vec(), original, cfg.norm, queries);
        };
        let coef = fabs / (wn * wn);
        for (t, &wi) in total.iter_mut().zip(w) {
            *t += coef * wi;
        }
        cur = x.iter().zip(&total).map(|(&v, &t)| v + scale * t).collect();
        clip_to_domain(domain, x, &mut cur);
    }
    finish(net, x, cur, original, cfg.norm, queries)
}

/// Dispatches on `cfg.kind`.
pub fn run_attack<T: Scalar>(
    net: &ResidualNet<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<AttackResult<T>> {
    match cfg.kind {
        AttackKind::Fgm => fgm(net, x, y, cfg, domain),
        AttackKind::Bim => bim(net, x, y, cfg, domain),
        AttackKind::Pgd => pgd(net, x, y, cfg, domain),
        AttackKind::Deepfool => deepfool(net, x, y, cfg, domain),
    }
}

/// Attacks every sample, in parallel on the current rayon pool.
///
/// Sample `i` runs with seed `cfg.seed ^ i`, so results do not depend on
/// scheduling. A failing sample yields an unsuccessful result carrying the
/// clean input and the error text.
pub fn attack_batch<T: Scalar, X: AsRef<[T]> + Sync>(
    net: &ResidualNet<T>,
    xs: &[X],
    ys: &[usize],
    cfg: &AttackConfig,
    domain: Option<&BoundingBox<T>>,
) -> Result<Vec<AttackResult<T>>> {
    if xs.len() != ys.len() {
        return Err(Error::dim(format!("{} inputs but {} labels", xs.len(), ys.len())));
    }
    cfg.validate()?;
    Ok(xs
        .par_iter()
        .zip(ys.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| {
            let x = x.as_ref();
            let sample_cfg = AttackConfig {
                seed: cfg.seed ^ i as u64,
                ..cfg.clone()
            };
            run_attack(net, x, y, &sample_cfg, domain).unwrap_or_else(|e| {
                let class = net.predict(x).unwrap_or(usize::MAX);
                AttackResult {
                    adversarial: x.to_vec(),
                    success: false,
                    perturbation_norm: T::zero(),
                    queries: 0,
                    original_class: class,
                    adversarial_class: class,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect())
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    config: &'a AttackConfig,
    samples: usize,
    success_rate: f64,
    success: Vec<bool>,
    perturbation_norms: Vec<f64>,
    errors: Vec<(usize, String)>,
}

/// Structured-text summary of a batch run.
pub fn attack_manifest<T: Scalar>(cfg: &AttackConfig, results: &[AttackResult<T>]) -> String {
    let hits = results.iter().filter(|r| r.success).count();
    crate::textfmt::to_string(&ManifestDoc {
        config: cfg,
        samples: results.len(),
        success_rate: if results.is_empty() {
            0.0
        } else {
            hits as f64 / results.len() as f64
        },
        success: results.iter().map(|r| r.success).collect(),
        perturbation_norms: results.iter().map(|r| r.perturbation_norm.as_f64()).collect(),
        errors: results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.error.clone().map(|e| (i, e)))
            .collect(),
    })
}
