use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box recorded with a dataset; attacks clip to it.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("bounding box corners differ in dimension"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::contract("bounding box has lo > hi"));
        }
        Ok(BoundingBox { lo, hi })
    }

    /// Smallest box holding every point.
    pub fn enclosing<X: AsRef<[T]>>(points: &[X]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::contract("cannot bound an empty point set"))?
            .as_ref();
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in points {
            let p = p.as_ref();
            if p.len() != lo.len() {
                return Err(Error::dim("points differ in dimension"));
            }
            for (i, &v) in p.iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        Ok(BoundingBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clip(&self, x: &mut [T]) {
        for ((v, &l), &h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.max(l).min(h);
        }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }
}

/// Labelled points with the box attacks are confined to.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub points: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub bounds: BoundingBox<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(points: Vec<Vec<T>>, labels: Vec<usize>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let bounds = BoundingBox::enclosing(&points)?;
        Ok(Dataset { points, labels, bounds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            bounds: self.bounds.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Circles,
    Moons,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub noise: f64,
    pub seed: u64,
    /// Inner/outer radius ratio for circles.
    pub factor: f64,
    /// Distance between the two blob centres.
    pub separation: f64,
    /// Offset applied to every generated point.
    pub shift: [f64; 2],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Circles,
            n: 2000,
            noise: 0.08,
            seed: 0,
            factor: 0.5,
            separation: 3.0,
            shift: [0.0, 0.0],
        }
    }
}

impl SyntheticSpec {
    pub fn circles(n: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Circles,
            n,
            noise,
            seed,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::contract("a synthetic dataset needs n >= 2"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::contract("noise must be a non-negative real"));
        }
        if self.kind == SyntheticKind::Circles && !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::contract("circles factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Two-class 2-D toy data: concentric circles (outer class 0 at radius 1),
/// interleaved moons, or two Gaussian blobs. Class sizes differ by at most
/// one; the order is shuffled with the spec's seed.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let n_out = spec.n / 2;
    let n_in = spec.n - n_out;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw: Vec<([f64; 2], usize)> = Vec::with_capacity(spec.n);
    match spec.kind {
        SyntheticKind::Circles => {
            for i in 0..n_out {
                let a = 2.0 * PI * i as f64 / n_out as f64;
                raw.push(([a.cos(), a.sin()], 0));
            }
            for i in 0..n_in {
                let a = 2.0 * PI * i as f64 / n_in as f64;
                raw.push(([spec.factor * a.cos(), spec.factor * a.sin()], 1));
            }
        }
        SyntheticKind::Moons => {
            let lin = |i: usize, n: usize| if n > 1 { PI * i as f64 / (n - 1) as f64 } else { 0.0 };
            for i in 0..n_out {
                let a = lin(i, n_out);
                raw.push(([a.cos(), a.sin()], 0));
            }
            for i in 0..n_in {
                let a = lin(i, n_in);
                raw.push(([1.0 - a.cos(), 1.0 - a.sin() - 0.5], 1));
            }
        }
        SyntheticKind::Blobs => {
            let half = spec.separation / 2.0;
            raw.extend((0..n_out).map(|_| ([-half, 0.0], 0)));
            raw.extend((0..n_in).map(|_| ([half, 0.0], 1)));
        }
    }
    raw.shuffle(&mut rng);
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("validated noise");
        for (p, _) in raw.iter_mut() {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    let (points, labels) = raw
        .into_iter()
        .map(|(p, y)| (vec![T::of(p[0] + spec.shift[0]), T::of(p[1] + spec.shift[1])], y))
        .unzip();
    Dataset::new(points, labels)
}
