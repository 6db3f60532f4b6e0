use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{usage, Result};

/// Exact k-nearest-neighbour classifier over flattened windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    train: Samples,
}

impl KnnModel {
    pub fn fit(samples: &Samples, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(usage("k must be at least 1"));
        }
        if k > samples.len() {
            return Err(usage(format!("k = {k} exceeds the {} training rows", samples.len())));
        }
        Ok(Self { k, train: samples.clone() })
    }

    /// Indices of the `k` nearest training rows by Euclidean distance,
    /// nearest first; equal distances go to the lower row index.
    pub fn neighbors(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.train.dim {
            return Err(usage(format!("query has {} features, model has {}", x.len(), self.train.dim)));
        }
        let mut dist: Vec<(f64, usize)> = (0..self.train.len())
            .map(|i| {
                let d = self.train.row(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (d, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(cmp);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }

    /// Majority tag among the neighbours; vote ties go to the lowest tag.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for i in self.neighbors(x)? {
            *votes.entry(self.train.tags[i]).or_default() += 1;
        }
        Ok(majority(&votes))
    }
}

/// Tag with the most votes, lowest tag on ties.
pub(crate) fn majority(votes: &BTreeMap<u32, usize>) -> u32 {
    let mut best = (0u32, 0usize);
    for (&tag, &n) in votes {
        if n > best.1 {
            best = (tag, n);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(rows: &[&[f64]], tags: &[u32]) -> Samples {
        Samples::new(rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect(), tags.to_vec()).unwrap()
    }

    #[test]
    fn exact_match_k1() {
        let s = samples(&[&[0.0, 0.0], &[1.0, 1.0], &[5.0, 5.0]], &[3, 7, 9]);
        let m = KnnModel::fit(&s, 1).unwrap();
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 7);
    }

    #[test]
    fn majority_vote() {
        let s = samples(&[&[0.0], &[0.1], &[0.2], &[10.0]], &[2, 9, 2, 9]);
        let m = KnnModel::fit(&s, 3).unwrap();
        assert_eq!(m.predict(&[0.05]).unwrap(), 2);
    }

    #[test]
    fn ties() {
        // equidistant neighbours: lower index wins the last slot
        let s = samples(&[&[-1.0], &[1.0], &[3.0]], &[4, 2, 2]);
        let m = KnnModel::fit(&s, 1).unwrap();
        assert_eq!(m.neighbors(&[0.0]).unwrap(), vec![0]);
        // vote tie 1-1: lowest tag
        let m = KnnModel::fit(&s, 2).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), 2);
    }

    #[test]
    fn k_equal_to_rows_is_global_mode() {
        let s = samples(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]], &[5, 1, 5, 1, 5]);
        let m = KnnModel::fit(&s, 5).unwrap();
        for q in [-100.0, 0.0, 2.5, 1e9] {
            assert_eq!(m.predict(&[q]).unwrap(), 5);
        }
    }

    #[test]
    fn errors() {
        let s = samples(&[&[0.0], &[1.0]], &[1, 2]);
        assert!(KnnModel::fit(&s, 3).is_err());
        assert!(KnnModel::fit(&s, 0).is_err());
        assert!(KnnModel::fit(&s, 1).unwrap().predict(&[0.0, 1.0]).is_err());
    }
}
