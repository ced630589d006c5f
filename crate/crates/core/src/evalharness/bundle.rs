use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{attack_batch, random_start_point, AttackConfig};
use crate::error::{Error, Result};
use crate::evalharness::datafile::{Origin, Record};
use crate::evalharness::Dataset;
use crate::model::ResidualNet;
use crate::scalar::Scalar;

/// A point of a detection set with the bookkeeping the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry<T> {
    pub point: Vec<T>,
    /// True class of the clean source point.
    pub class_label: usize,
    pub origin: Origin,
    /// Index of the clean source point in the test set.
    pub source: usize,
    /// Adversarials only: the attack changed the prediction.
    pub attack_success: bool,
    /// The clean source point is classified correctly.
    pub source_correct: bool,
}

impl<T: Scalar> BundleEntry<T> {
    pub fn is_adversarial(&self) -> bool {
        self.origin == Origin::Adversarial
    }

    pub fn record(&self) -> Record<T> {
        Record {
            point: self.point.clone(),
            label: self.class_label,
            origin: self.origin,
        }
    }
}

/// Clean splits `b1`/`b2` of a test set, one adversarial per clean point in
/// `d1`/`d2`, and optional noisy copies `c1`/`c2` labelled clean.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBundle<T> {
    pub attack: AttackConfig,
    pub b1: Vec<BundleEntry<T>>,
    pub b2: Vec<BundleEntry<T>>,
    pub c1: Vec<BundleEntry<T>>,
    pub c2: Vec<BundleEntry<T>>,
    pub d1: Vec<BundleEntry<T>>,
    pub d2: Vec<BundleEntry<T>>,
}

impl<T: Scalar> DetectionBundle<T> {
    pub fn train(&self) -> Vec<&BundleEntry<T>> {
        self.b1.iter().chain(&self.c1).chain(&self.d1).collect()
    }

    pub fn test(&self) -> Vec<&BundleEntry<T>> {
        self.b2.iter().chain(&self.c2).chain(&self.d2).collect()
    }

    pub fn records(&self) -> Vec<Record<T>> {
        [&self.b1, &self.b2, &self.c1, &self.c2, &self.d1, &self.d2]
            .into_iter()
            .flatten()
            .map(BundleEntry::record)
            .collect()
    }

    /// Checks the split bookkeeping: disjoint clean splits covering the test
    /// set, one adversarial per clean point, matching sources.
    pub fn validate(&self, test_len: usize) -> Result<()> {
        let mut seen = vec![false; test_len];
        for e in self.b1.iter().chain(&self.b2) {
            if e.source >= test_len || std::mem::replace(&mut seen[e.source], true) {
                return Err(Error::contract(format!(
                    "clean source {} repeated or out of range",
                    e.source
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::contract("clean splits do not cover the test set"));
        }
        for (b, d) in [(&self.b1, &self.d1), (&self.b2, &self.d2)] {
            if b.len() != d.len() || b.iter().zip(d.iter()).any(|(x, y)| x.source != y.source) {
                return Err(Error::contract("adversarial set does not mirror its clean split"));
            }
        }
        for (b, c) in [(&self.b1, &self.c1), (&self.b2, &self.c2)] {
            if !c.is_empty() && c.len() != b.len() {
                return Err(Error::contract("noisy set does not mirror its clean split"));
            }
        }
        Ok(())
    }
}

/// Shuffled index split with `floor(0.9·n)` indices in the first part.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n1 = 9 * n / 10;
    let b = idx.split_off(n1);
    (idx, b)
}

/// Attacks every test point (successful or not) with `attack` using the
/// true label, clipped to the dataset box, and splits 0.9/0.1.
pub fn build_bundle<T: Scalar>(
    net: &ResidualNet<T>,
    test: &Dataset<T>,
    attack: &AttackConfig,
    split_seed: u64,
    with_noise: bool,
) -> Result<DetectionBundle<T>> {
    if test.dim() != net.dim() {
        return Err(Error::dim(format!(
            "test data has d = {}, net expects {}",
            test.dim(),
            net.dim()
        )));
    }
    let (i1, i2) = split_indices(test.len(), split_seed);
    if i1.is_empty() || i2.is_empty() {
        return Err(Error::contract("test set too small to split 0.9/0.1"));
    }
    let (predicted, _) = net.predict_batch(&test.points)?;
    let results = attack_batch(net, &test.points, &test.labels, attack, Some(&test.bounds))?;
    let clean = |i: usize| BundleEntry {
        point: test.points[i].clone(),
        class_label: test.labels[i],
        origin: Origin::Clean,
        source: i,
        attack_success: false,
        source_correct: predicted[i] == test.labels[i],
    };
    let adv = |i: usize| BundleEntry {
        point: results[i].adversarial.clone(),
        origin: Origin::Adversarial,
        attack_success: results[i].success,
        ..clean(i)
    };
    let noisy = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        rng.set_stream(i as u64 + 1);
        let x = &test.points[i];
        let mut p = random_start_point(x, T::of(attack.epsilon), attack.norm, &mut rng);
        for (k, v) in p.iter_mut().enumerate() {
            *v = v.max(test.bounds.lo[k].min(x[k])).min(test.bounds.hi[k].max(x[k]));
        }
        BundleEntry {
            point: p,
            origin: Origin::Noisy,
            ..clean(i)
        }
    };
    let noise_for = |idx: &[usize]| -> Vec<BundleEntry<T>> {
        if with_noise {
            idx.iter().map(|&i| noisy(i)).collect()
        } else {
            Vec::new()
        }
    };
    let bundle = DetectionBundle {
        attack: attack.clone(),
        b1: i1.iter().map(|&i| clean(i)).collect(),
        b2: i2.iter().map(|&i| clean(i)).collect(),
        c1: noise_for(&i1),
        c2: noise_for(&i2),
        d1: i1.iter().map(|&i| adv(i)).collect(),
        d2: i2.iter().map(|&i| adv(i)).collect(),
    };
    bundle.validate(test.len())?;
    Ok(bundle)
}
