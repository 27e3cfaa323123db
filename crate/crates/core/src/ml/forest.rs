//! Bagged CART ensemble with majority vote.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, DecisionTree, MaxFeatures, TreeParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
            tree: TreeParams { max_features: MaxFeatures::Sqrt, ..TreeParams::default() },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    /// RNG stream of each tree, derived from the master seed.
    pub tree_streams: Vec<u64>,
    pub trees: Vec<DecisionTree>,
}

/// Per-tree generator: master seed, one ChaCha stream per tree. Independent of
/// scheduling, so parallel and serial training agree bit for bit.
fn tree_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn train_forest(rows: &[Vec<u32>], labels: &[bool], params: ForestParams) -> Result<RandomForest> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(Error::Invalid("a forest needs at least one tree".into()));
    }
    let n = rows.len();
    let streams: Vec<u64> = (0..params.n_trees as u64).collect();
    let trees = streams
        .par_iter()
        .map(|&s| {
            let mut rng = tree_rng(params.seed, s);
            let idx: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
            grow_tree(rows, labels, idx, params.tree, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest { params, tree_streams: streams, trees })
}

impl RandomForest {
    /// Number of trees voting malicious.
    pub fn votes(&self, x: &[u32]) -> usize {
        self.trees.iter().filter(|t| t.predict_one(x)).count()
    }

    /// Strict majority; a tied vote is benign.
    pub fn predict_one(&self, x: &[u32]) -> bool {
        majority_vote(self.votes(x), self.trees.len())
    }

    pub fn predict(&self, rows: &[Vec<u32>]) -> Vec<bool> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

pub fn majority_vote(malicious_votes: usize, n_trees: usize) -> bool {
    2 * malicious_votes > n_trees
}
