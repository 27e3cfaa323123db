//! CART decision tree over integer counters, Gini impurity, exact split scoring.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many features a split may look at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    All,
    /// `ceil(sqrt(F))`
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: None, min_samples_split: 2, max_features: MaxFeatures::All }
    }
}

/// `[benign, malicious]` sample counts.
pub type ClassCounts = [u64; 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        counts: ClassCounts,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: u32,
        counts: ClassCounts,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn counts(&self) -> ClassCounts {
        match self {
            Node::Leaf { counts } | Node::Split { counts, .. } => *counts,
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

/// Majority class of a leaf; ties go to benign.
pub fn majority(counts: ClassCounts) -> bool {
    counts[1] > counts[0]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub params: TreeParams,
    pub root: Node,
}

impl DecisionTree {
    pub fn predict_one(&self, x: &[u32]) -> bool {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { counts } => return majority(*counts),
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, rows: &[Vec<u32>]) -> Vec<bool> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_leaves(&self) -> usize {
        self.root.leaves()
    }
}

/// Exact non-negative fraction for comparing split scores without rounding.
#[derive(Clone, Copy, Debug)]
struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    fn cmp(&self, other: &Frac) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn sum_sq(c: ClassCounts) -> u128 {
    (c[0] as u128).pow(2) + (c[1] as u128).pow(2)
}

/// `sum_k n_k^2 / n` summed over children. Larger is purer; minimizing the
/// weighted Gini of the children is the same as maximizing this.
fn split_score(left: ClassCounts, right: ClassCounts) -> Frac {
    let nl = (left[0] + left[1]) as u128;
    let nr = (right[0] + right[1]) as u128;
    Frac { num: sum_sq(left) * nr + sum_sq(right) * nl, den: nl * nr }
}

fn node_score(c: ClassCounts) -> Frac {
    Frac { num: sum_sq(c), den: (c[0] + c[1]) as u128 }
}

struct Builder<'a, R> {
    rows: &'a [Vec<u32>],
    labels: &'a [bool],
    params: TreeParams,
    n_features: usize,
    rng: Option<&'a mut R>,
}

struct BestSplit {
    feature: usize,
    threshold: u32,
    score: Frac,
}

impl<R: Rng> Builder<'_, R> {
    fn counts(&self, idx: &[usize]) -> ClassCounts {
        let mut c = [0u64; 2];
        for &i in idx {
            c[self.labels[i] as usize] += 1;
        }
        c
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let k = self.params.max_features.resolve(self.n_features);
        match self.rng.as_deref_mut() {
            Some(rng) if k < self.n_features => {
                let mut f = sample(rng, self.n_features, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize], parent: ClassCounts) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(u32, bool)> = Vec::with_capacity(idx.len());
        for f in self.candidate_features() {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.rows[i][f], self.labels[i])));
            sorted.sort_unstable_by_key(|p| p.0);
            let mut left = [0u64; 2];
            for w in 0..sorted.len() - 1 {
                left[sorted[w].1 as usize] += 1;
                let (v, next) = (sorted[w].0, sorted[w + 1].0);
                if v == next {
                    continue;
                }
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let score = split_score(left, right);
                // strict: earlier feature / lower threshold wins ties
                if best.as_ref().map_or(true, |b| score.cmp(&b.score) == Ordering::Greater) {
                    let threshold = ((v as u64 + next as u64) / 2) as u32;
                    best = Some(BestSplit { feature: f, threshold, score });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> Node {
        let counts = self.counts(&idx);
        let pure = counts[0] == 0 || counts[1] == 0;
        let too_small = idx.len() < self.params.min_samples_split.max(2);
        let too_deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return Node::Leaf { counts };
        }
        let Some(best) = self.best_split(&idx, counts) else {
            return Node::Leaf { counts };
        };
        if best.score.cmp(&node_score(counts)) != Ordering::Greater {
            return Node::Leaf { counts };
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        let left = Box::new(self.grow(l, depth + 1));
        let right = Box::new(self.grow(r, depth + 1));
        Node::Split { feature: best.feature, threshold: best.threshold, counts, left, right }
    }
}

fn check_rows(rows: &[Vec<u32>], labels: &[bool]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != labels.len() {
        return Err(Error::Invalid(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let nf = rows[0].len();
    if rows.iter().any(|r| r.len() != nf) {
        return Err(Error::InconsistentFeatures("ragged feature rows".into()));
    }
    Ok(nf)
}

/// Grow a tree on the rows listed in `idx` (repeats allowed, as in a bootstrap).
///
/// When `rng` is given and `params.max_features` is below the feature count,
/// each split looks at a fresh random feature subset.
pub fn grow_tree<R: Rng>(
    rows: &[Vec<u32>],
    labels: &[bool],
    idx: Vec<usize>,
    params: TreeParams,
    rng: Option<&mut R>,
) -> Result<DecisionTree> {
    let n_features = check_rows(rows, labels)?;
    if idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut b = Builder { rows, labels, params, n_features, rng };
    let root = b.grow(idx, 0);
    Ok(DecisionTree { n_features, params, root })
}

pub fn train_tree(rows: &[Vec<u32>], labels: &[bool], params: TreeParams) -> Result<DecisionTree> {
    grow_tree::<rand_chacha::ChaCha8Rng>(rows, labels, (0..rows.len()).collect(), params, None)
}
