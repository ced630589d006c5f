use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detect::features::DetectionSample;
use crate::detect::forest::{fit_forest, ForestConfig, RandomForest};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_CLASS_SAMPLES: usize = 20;

/// A class-agnostic forest plus one forest per predicted class, OR-combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDetector {
    pub general: RandomForest,
    pub per_class: BTreeMap<usize, RandomForest>,
    pub min_class_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub label: u8,
    /// Larger of the two forests' scores.
    pub score: f64,
    /// General forest alone, used for AUROC.
    pub general_score: f64,
}

/// Classes with fewer than `min_class_samples` samples get no forest of
/// their own. Per-class forests use seed `cfg.seed ^ (class + 1)`.
pub fn fit_ensemble(
    samples: &[DetectionSample],
    cfg: &ForestConfig,
    min_class_samples: usize,
) -> Result<EnsembleDetector> {
    if samples.is_empty() {
        return Err(Error::contract("cannot fit a detector on no samples"));
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.features.values.clone()).collect();
    let ys: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let general = fit_forest(&xs, &ys, cfg)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.predicted_class).or_default().push(i);
    }
    let mut per_class = BTreeMap::new();
    for (class, idx) in by_class {
        if idx.len() < min_class_samples {
            continue;
        }
        let cx: Vec<Vec<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
        let cy: Vec<u8> = idx.iter().map(|&i| ys[i]).collect();
        let ccfg = ForestConfig {
            seed: cfg.seed ^ (class as u64 + 1),
            ..cfg.clone()
        };
        per_class.insert(class, fit_forest(&cx, &cy, &ccfg)?);
    }
    Ok(EnsembleDetector {
        general,
        per_class,
        min_class_samples,
    })
}

impl EnsembleDetector {
    pub fn predict(&self, features: &[f64], predicted_class: usize) -> Verdict {
        let g = self.general.score(features);
        let c = self.per_class.get(&predicted_class).map(|f| f.score(features));
        let score = c.map_or(g, |c| g.max(c));
        Verdict {
            label: u8::from(score >= 0.5),
            score,
            general_score: g,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::features::FeatureVector;
    use crate::detect::forest::{Node, Tree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump(feature: usize, threshold: f64, above: u8) -> Tree {
        let f = |l: u8| Node::Leaf {
            fractions: if l == 1 { [0.0, 1.0] } else { [1.0, 0.0] },
        };
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                f(1 - above),
                f(above),
            ],
        }
    }

    fn forest(trees: Vec<Tree>) -> RandomForest {
        RandomForest {
            n_features: 2,
            config: ForestConfig::default(),
            trees,
        }
    }

    #[test]
    fn or_rule_and_fallback() {
        let det = EnsembleDetector {
            general: forest(vec![stump(0, 0.0, 1)]),
            per_class: BTreeMap::from([(1, forest(vec![stump(1, 0.0, 1)]))]),
            min_class_samples: 20,
        };
        // general flags, per-class does not
        assert_eq!(det.predict(&[1.0, -1.0], 1).label, 1);
        // only per-class flags
        assert_eq!(det.predict(&[-1.0, 1.0], 1).label, 1);
        assert_eq!(det.predict(&[-1.0, -1.0], 1).label, 0);
        // class 0 has no forest: general only
        assert_eq!(det.predict(&[-1.0, 1.0], 0).label, 0);
        assert_eq!(det.predict(&[1.0, 1.0], 0).label, 1);
    }

    #[test]
    fn half_the_votes_flag_an_attack() {
        let det = EnsembleDetector {
            general: forest(vec![stump(0, 0.0, 1), stump(0, 0.0, 0)]),
            per_class: BTreeMap::new(),
            min_class_samples: 20,
        };
        let v = det.predict(&[1.0, 0.0], 0);
        assert_eq!(v.score, 0.5);
        assert_eq!(v.label, 1);
    }

    fn walk(tree: &Tree, x: &[f64]) -> u8 {
        // independent recursive walk
        fn go(nodes: &[Node], i: usize, x: &[f64]) -> [f64; 2] {
            match &nodes[i] {
                Node::Leaf { fractions } => *fractions,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] > *threshold {
                        go(nodes, *right, x)
                    } else {
                        go(nodes, *left, x)
                    }
                }
            }
        }
        let f = go(&tree.nodes, 0, x);
        if f[1] >= f[0] {
            1
        } else {
            0
        }
    }

    #[test]
    fn matches_brute_force_forest_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<DetectionSample> = (0..300)
            .map(|_| {
                let values: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = u8::from(values[0] + 0.3 * values[2] > 0.1);
                DetectionSample {
                    predicted_class: usize::from(values[3] > 0.6) * 2 + usize::from(values[1] > 0.0),
                    features: FeatureVector { values },
                    label,
                }
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 15,
            ..ForestConfig::default()
        };
        let det = fit_ensemble(&samples, &cfg, 40).unwrap();
        assert!(!det.per_class.is_empty());
        for s in &samples {
            let votes = |f: &RandomForest| {
                f.trees
                    .iter()
                    .map(|t| walk(t, &s.features.values) as usize)
                    .sum::<usize>()
                    * 2
                    >= f.trees.len()
            };
            let want = votes(&det.general) || det.per_class.get(&s.predicted_class).is_some_and(votes);
            let v = det.predict(&s.features.values, s.predicted_class);
            assert_eq!(v.label == 1, want);
            // dominance over the general forest
            assert!(v.label >= det.general.predict(&s.features.values));
        }
        for (c, _) in &det.per_class {
            assert!(samples.iter().filter(|s| s.predicted_class == *c).count() >= 40);
        }
    }
}
