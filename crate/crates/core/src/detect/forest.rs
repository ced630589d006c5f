use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Defaults to ⌈√(feature count)⌉.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::contract("a forest needs at least one tree"));
        }
        if self.min_leaf == 0 {
            return Err(Error::contract("min_leaf must be at least 1"));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::contract("features_per_split must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `fractions[c]` is the share of label `c` among the node's samples.
    Leaf { fractions: [f64; 2] },
}

/// Nodes stored flat; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { fractions } => return *fractions,
            }
        }
    }

    /// Majority label of the reached leaf; an even leaf votes 1.
    pub fn vote(&self, x: &[f64]) -> u8 {
        let f = self.leaf_for(x);
        u8::from(f[1] >= f[0])
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomForest {
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Fraction of trees voting 1.
    pub fn score(&self, x: &[f64]) -> f64 {
        let votes: usize = self.trees.iter().map(|t| t.vote(x) as usize).sum();
        votes as f64 / self.trees.len() as f64
    }

    /// 1 when at least half the trees vote 1.
    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.score(x) >= 0.5)
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        let p1 = pos as f64 / idx.len() as f64;
        self.nodes.push(Node::Leaf {
            fractions: [1.0 - p1, p1],
        });
        self.nodes.len() - 1
    }

    /// Best (impurity, feature, threshold) over a random feature subset.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        let parent = gini(total_pos, n);
        let nf = self.xs[idx[0]].len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in sample(rng, nf, self.mtry.min(nf)).into_iter() {
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(self.ys[order[k - 1]] == 1);
                let lo = self.xs[order[k - 1]][f];
                let hi = self.xs[order[k]][f];
                if lo == hi || k < self.cfg.min_leaf || n - k < self.cfg.min_leaf {
                    continue;
                }
                let imp =
                    (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(total_pos - left_pos, n - k)) / n as f64;
                if imp < parent - 1e-12 && best.is_none_or(|b| imp < b.0) {
                    let mid = lo + (hi - lo) / 2.0;
                    let thr = if mid < hi { mid } else { lo };
                    best = Some((imp, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        if depth >= self.cfg.max_depth || pos == 0 || pos == idx.len() || idx.len() < 2 * self.cfg.min_leaf {
            return self.leaf(&idx);
        }
        let Some((feature, threshold)) = self.best_split(&idx, rng) else {
            return self.leaf(&idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.xs[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { fractions: [0.0, 0.0] });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Bootstrap-aggregated Gini trees. Tree `t` draws from its own stream of a
/// generator seeded with `cfg.seed`, so the fit is independent of scheduling.
pub fn fit_forest(xs: &[Vec<f64>], ys: &[u8], cfg: &ForestConfig) -> Result<RandomForest> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::contract("cannot fit a forest on no samples"));
    }
    if xs.len() != ys.len() {
        return Err(Error::dim(format!("{} samples but {} labels", xs.len(), ys.len())));
    }
    let nf = xs[0].len();
    if nf == 0 || xs.iter().any(|x| x.len() != nf) {
        return Err(Error::dim("feature vectors must share a non-zero length"));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature".into()));
    }
    if ys.iter().any(|&y| y > 1) {
        return Err(Error::contract("detection labels must be 0 or 1"));
    }
    let mtry = cfg
        .features_per_split
        .unwrap_or_else(|| (nf as f64).sqrt().ceil() as usize);
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let n = xs.len();
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                xs,
                ys,
                cfg,
                mtry,
                nodes: Vec::new(),
            };
            b.grow(idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RandomForest {
        n_features: nf,
        config: cfg.clone(),
        trees,
    })
}
