//! Alarm-code classifiers over flattened alarm windows and the recall-based
//! choice between them.

mod forest;
mod knn;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use forest::{ForestParams, MaxFeatures, RandomForest};
pub use knn::KnnModel;
pub use tree::{DecisionTree, Node, TreeParams};

use crate::error::{usage, Error, Result};
use crate::evaluate::multiclass_micro;
use crate::windowing::WindowedSet;

/// Row-major training matrix of flattened windows with their alarm tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub dim: usize,
    pub data: Vec<f64>,
    pub tags: Vec<u32>,
}

impl Samples {
    pub fn new(dim: usize, data: Vec<f64>, tags: Vec<u32>) -> Result<Self> {
        if dim == 0 || data.len() != dim * tags.len() {
            return Err(usage(format!(
                "{} values do not form {} rows of width {dim}",
                data.len(),
                tags.len()
            )));
        }
        if tags.contains(&0) {
            return Err(usage("classifier training tags must be >= 1"));
        }
        Ok(Self { dim, data, tags })
    }

    /// Flattens every window of `ws` with its tag target. Windows whose
    /// target carries no alarm are skipped.
    pub fn from_windows(ws: &WindowedSet) -> Self {
        let mut data = Vec::new();
        let mut tags = Vec::new();
        for (g, w) in ws.windows().enumerate() {
            if ws.y2[g] > 0 {
                data.extend_from_slice(w);
                tags.push(ws.y2[g]);
            }
        }
        Self { dim: ws.spec.flat_len(), data, tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Distinct tags in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.tags.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    #[serde(rename = "dt")]
    DecisionTree,
    #[serde(rename = "rf")]
    RandomForest,
}

impl ModelKind {
    /// Selection priority on equal recall, strongest first.
    pub const PRIORITY: [ModelKind; 3] = [ModelKind::RandomForest, ModelKind::DecisionTree, ModelKind::Knn];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::DecisionTree => "dt",
            ModelKind::RandomForest => "rf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVerdict {
    pub predictions: BTreeMap<ModelKind, Vec<u32>>,
    /// Micro-averaged recall per model; `None` when there is nothing to score.
    pub recalls: BTreeMap<ModelKind, Option<f64>>,
    pub chosen: ModelKind,
}

impl EnsembleVerdict {
    pub fn final_predictions(&self) -> &[u32] {
        &self.predictions[&self.chosen]
    }
}

/// Picks the model with the highest micro-averaged recall, breaking ties
/// by [`ModelKind::PRIORITY`].
pub fn bagged_select(per_model: &BTreeMap<ModelKind, Vec<u32>>, truth: &[u32]) -> Result<EnsembleVerdict> {
    if per_model.is_empty() {
        return Err(usage("no model predictions to select from"));
    }
    let mut recalls = BTreeMap::new();
    for (&kind, preds) in per_model {
        if preds.len() != truth.len() {
            return Err(usage(format!("{kind}: {} predictions for {} truth tags", preds.len(), truth.len())));
        }
        let recall = if truth.is_empty() { None } else { multiclass_micro(preds, truth)?.recall };
        recalls.insert(kind, recall);
    }
    let mut chosen: Option<(ModelKind, f64)> = None;
    for kind in ModelKind::PRIORITY {
        if let Some(r) = recalls.get(&kind) {
            let r = r.unwrap_or(f64::NEG_INFINITY);
            if chosen.is_none_or(|(_, best)| r > best) {
                chosen = Some((kind, r));
            }
        }
    }
    Ok(EnsembleVerdict {
        predictions: per_model.clone(),
        recalls,
        chosen: chosen.expect("at least one model").0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub knn_k: usize,
    pub tree: TreeParams,
    pub forest: ForestParams,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self { knn_k: 5, tree: TreeParams::default(), forest: ForestParams::default() }
    }
}

pub const ARTIFACT_FORMAT: &str = "afc-classifiers";
pub const ARTIFACT_VERSION: u32 = 1;

/// The three fitted classifiers, stored together on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSet {
    pub format: String,
    pub version: u32,
    pub knn: KnnModel,
    pub dt: DecisionTree,
    pub rf: RandomForest,
}

impl ClassifierSet {
    pub fn fit(samples: &Samples, params: &ClassifierParams, seed: u64) -> Result<Self> {
        let (dt, (knn, rf)) = rayon::join(
            || DecisionTree::fit(samples, &params.tree),
            || {
                (
                    KnnModel::fit(samples, params.knn_k),
                    RandomForest::fit(samples, &params.forest, seed),
                )
            },
        );
        Ok(Self {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            knn: knn?,
            dt: dt?,
            rf: rf?,
        })
    }

    pub fn predict(&self, kind: ModelKind, x: &[f64]) -> Result<u32> {
        match kind {
            ModelKind::Knn => self.knn.predict(x),
            ModelKind::DecisionTree => self.dt.predict(x),
            ModelKind::RandomForest => self.rf.predict(x),
        }
    }

    pub fn predict_all<'a>(&self, windows: impl Iterator<Item = &'a [f64]> + Clone) -> Result<BTreeMap<ModelKind, Vec<u32>>> {
        ModelKind::PRIORITY
            .iter()
            .map(|&kind| Ok((kind, windows.clone().map(|w| self.predict(kind, w)).collect::<Result<Vec<_>>>()?)))
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.format != ARTIFACT_FORMAT || s.version != ARTIFACT_VERSION {
            return Err(Error::Parse(format!("unsupported classifier artifact {} v{}", s.format, s.version)));
        }
        Ok(s)
    }
}
