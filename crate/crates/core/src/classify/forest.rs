use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::majority;
use super::tree::{DecisionTree, FeatureSampler, TreeParams};
use super::Samples;
use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(d))` features per split.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(&self, dim: usize) -> usize {
        match *self {
            MaxFeatures::Sqrt => ((dim as f64).sqrt().ceil() as usize).max(1),
            MaxFeatures::All => dim,
            MaxFeatures::Count(n) => n.clamp(1, dim.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

/// Bagged CART trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub seed: u64,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Tree `i` draws its bootstrap and feature subsets from stream `i` of
    /// a generator seeded with `seed`, so trees can be grown in parallel.
    pub fn fit(samples: &Samples, params: &ForestParams, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(usage("cannot fit a random forest on an empty training set"));
        }
        if params.n_trees == 0 {
            return Err(usage("a forest needs at least one tree"));
        }
        let n = samples.len();
        let max_features = params.max_features.resolve(samples.dim);
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let sampler = FeatureSampler { rng: &mut rng, max_features };
                DecisionTree::fit_indices(samples, &idx, &params.tree, Some(sampler))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params: *params, seed, trees })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn votes(&self, x: &[f64]) -> Result<BTreeMap<u32, usize>> {
        let mut votes = BTreeMap::new();
        for t in &self.trees {
            *votes.entry(t.predict(x)?).or_default() += 1;
        }
        Ok(votes)
    }

    /// Majority vote over trees, lowest tag on ties.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        Ok(majority(&self.votes(x)?))
    }
}
