use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// `distribution` holds `(tag, count)` for the training samples reaching the leaf.
    Leaf { tag: u32, distribution: Vec<(u32, u64)> },
}

/// CART classification tree grown greedily on Gini impurity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    dim: usize,
    nodes: Vec<Node>,
}

/// Random per-split feature subsets for forests.
pub(crate) struct FeatureSampler<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub max_features: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl DecisionTree {
    pub fn fit(samples: &Samples, params: &TreeParams) -> Result<Self> {
        let idx: Vec<usize> = (0..samples.len()).collect();
        Self::fit_indices(samples, &idx, params, None)
    }

    /// Grows a tree on `idx` (which may repeat rows, as in a bootstrap).
    pub(crate) fn fit_indices(
        samples: &Samples,
        idx: &[usize],
        params: &TreeParams,
        mut sampler: Option<FeatureSampler<'_>>,
    ) -> Result<Self> {
        if idx.is_empty() {
            return Err(usage("cannot fit a decision tree on an empty training set"));
        }
        let classes = samples.classes();
        let class_of = |tag: u32| classes.binary_search(&tag).expect("tag listed in classes");
        let labels: Vec<usize> = samples.tags.iter().map(|&t| class_of(t)).collect();

        let mut tree = DecisionTree { dim: samples.dim, nodes: Vec::new() };
        // (node slot, sample indices, depth)
        let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, idx.to_vec(), 0)];
        tree.nodes.push(Node::Leaf { tag: 0, distribution: Vec::new() });
        while let Some((slot, rows, depth)) = stack.pop() {
            let mut counts = vec![0u64; classes.len()];
            for &r in &rows {
                counts[labels[r]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = params.max_depth.is_none_or(|d| depth < d);
            let split = if !pure && depth_ok && rows.len() >= params.min_samples_split.max(2) {
                best_split(samples, &labels, classes.len(), &rows, sampler.as_mut())
            } else {
                None
            };
            match split {
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| samples.row(i)[s.feature] < s.threshold);
                    debug_assert!(!l.is_empty() && !r.is_empty());
                    let left = tree.nodes.len();
                    tree.nodes.push(Node::Leaf { tag: 0, distribution: Vec::new() });
                    tree.nodes.push(Node::Leaf { tag: 0, distribution: Vec::new() });
                    tree.nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right: left + 1 };
                    stack.push((left + 1, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
                None => {
                    let mut best = 0;
                    for c in 1..counts.len() {
                        if counts[c] > counts[best] {
                            best = c;
                        }
                    }
                    let distribution = counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &n)| n > 0)
                        .map(|(c, &n)| (classes[c], n))
                        .collect();
                    tree.nodes[slot] = Node::Leaf { tag: classes[best], distribution };
                }
            }
        }
        Ok(tree)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        if x.len() != self.dim {
            return Err(usage(format!("query has {} features, tree has {}", x.len(), self.dim)));
        }
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] < *threshold { *left } else { *right };
                }
                Node::Leaf { tag, .. } => return Ok(*tag),
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Lowest weighted child Gini over candidate features. Features are scanned
/// in ascending index order and thresholds in ascending order; the first
/// minimum wins.
fn best_split(
    samples: &Samples,
    labels: &[usize],
    n_classes: usize,
    rows: &[usize],
    sampler: Option<&mut FeatureSampler<'_>>,
) -> Option<Split> {
    let d = samples.dim;
    let batches: Vec<Vec<usize>> = match sampler {
        Some(s) if s.max_features < d => {
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(s.rng);
            let mut head = perm[..s.max_features].to_vec();
            let mut tail = perm[s.max_features..].to_vec();
            head.sort_unstable();
            tail.sort_unstable();
            vec![head, tail]
        }
        _ => vec![(0..d).collect()],
    };
    let mut sorted = rows.to_vec();
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    for features in batches {
        let mut best: Option<Split> = None;
        for f in features {
            sorted.sort_by(|&a, &b| samples.row(a)[f].total_cmp(&samples.row(b)[f]));
            left.fill(0);
            right.fill(0);
            for &r in &sorted {
                right[labels[r]] += 1;
            }
            let n = sorted.len() as f64;
            let mut sq_l = 0.0f64;
            let mut sq_r: f64 = right.iter().map(|&c| (c * c) as f64).sum();
            for i in 0..sorted.len() - 1 {
                let c = labels[sorted[i]];
                sq_l += (2 * left[c] + 1) as f64;
                sq_r -= (2 * right[c] - 1) as f64;
                left[c] += 1;
                right[c] -= 1;
                let a = samples.row(sorted[i])[f];
                let b = samples.row(sorted[i + 1])[f];
                if a == b {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = n - nl;
                let impurity = (nl - sq_l / nl + nr - sq_r / nr) / n;
                if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if a < mid { mid } else { b };
                    best = Some(Split { feature: f, threshold, impurity });
                }
            }
        }
        if best.is_some() {
            return best;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn samples(rows: &[&[f64]], tags: &[u32]) -> Samples {
        Samples::new(rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect(), tags.to_vec()).unwrap()
    }

    #[test]
    fn single_label_is_one_leaf() {
        let s = samples(&[&[1.0], &[2.0], &[3.0]], &[4, 4, 4]);
        let t = DecisionTree::fit(&s, &TreeParams::default()).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[-9.0]).unwrap(), 4);
    }

    #[test]
    fn separable_one_split() {
        let s = samples(&[&[-2.0], &[-1.0], &[-0.5], &[0.0], &[1.0], &[3.0]], &[1, 1, 1, 2, 2, 2]);
        let t = DecisionTree::fit(&s, &TreeParams::default()).unwrap();
        assert_eq!(t.nodes().len(), 3);
        match t.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!(-0.5 < threshold && threshold <= 0.0);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(t.predict(&[-0.3]).unwrap(), 1);
        assert_eq!(t.predict(&[-0.1]).unwrap(), 2);
        assert_eq!(t.predict(&[0.0]).unwrap(), 2);
    }

    #[test]
    fn xor_needs_zero_gain_split() {
        let s = samples(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]], &[1, 2, 2, 1]);
        let t = DecisionTree::fit(&s, &TreeParams::default()).unwrap();
        for i in 0..4 {
            assert_eq!(t.predict(s.row(i)).unwrap(), s.tags[i]);
        }
    }

    #[test]
    fn depth_limit_and_modal_leaf() {
        let s = samples(&[&[0.0], &[1.0], &[2.0], &[3.0]], &[3, 3, 1, 1]);
        let t = DecisionTree::fit(&s, &TreeParams { max_depth: Some(0), min_samples_split: 2 }).unwrap();
        assert_eq!(t.nodes().len(), 1);
        // 2-2 tie resolves to the lowest tag
        assert_eq!(t.predict(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn random_consistent_data_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        let mut tags = Vec::new();
        for _ in 0..50 {
            let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            data.extend(row);
            tags.push(rng.random_range(1..4));
        }
        let s = Samples::new(4, data, tags).unwrap();
        let t = DecisionTree::fit(&s, &TreeParams::default()).unwrap();
        for i in 0..s.len() {
            assert_eq!(t.predict(s.row(i)).unwrap(), s.tags[i]);
        }
        // every split partitions its samples into two non-empty sides
        for n in t.nodes() {
            if let Node::Split { left, right, .. } = n {
                assert_ne!(left, right);
            }
        }
    }
}
