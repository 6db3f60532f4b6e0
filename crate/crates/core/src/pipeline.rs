//! Configuration and the staged end-to-end driver.
//!
//! Stages communicate through files in the output directory:
//!
//! ```text
//! out/
//!   codebook.json retention.json scaler.json nan_stats.csv
//!   data/<turbine>.afcd              scaled, imputed, retained datasets
//!   fw<f>/regressor.json classifiers.json loss_trace.csv train_summary.json
//!   fw<f>/reports/<turbine>.json|.csv
//!   summary.csv summary.json contingency.csv
//!   sweep_fw.csv sweep_depth.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{bagged_select, ClassifierParams, ClassifierSet, MaxFeatures, ModelKind, Samples};
use crate::config::{parse_list, KvFile};
use crate::error::{data, usage, Error, Result};
use crate::evaluate::{
    binary_contingency, confusion_matrix, contingency_fractions, final_accuracy, fmt_metric, metrics,
    multiclass_micro, per_alarm_breakdown, ContingencyCounts, ContingencyFractions, MetricReport,
    RegressionSection, SummaryTable, TurbineReport,
};
use crate::ingest::{self, AlarmCodebook, AlarmEvent, MergedDataset, ScadaTable};
use crate::preprocess::{self, RetentionMask, ScalerParams};
use crate::regressor::{self, EpochRecord, LstmStack, RegressorArtifact, TrainConfig, DEFAULT_WIDTHS};
use crate::windowing::{build_windows, select_alarm_windows, WindowSpec, WindowedSet, MAX_FORECAST_OFFSET};

/// Fraction of turbines (by ascending id) assigned to training by default.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    /// Explicit turbine ids; discovered from `*.scada.csv` in `data_dir` when empty.
    pub turbines: Vec<String>,
    pub scada_paths: BTreeMap<String, PathBuf>,
    pub alarm_paths: BTreeMap<String, PathBuf>,
    pub train_turbines: Vec<String>,
    pub test_turbines: Vec<String>,
    pub reference_turbine: Option<String>,
    pub nan_threshold: f64,
    pub window_length: usize,
    pub fw: usize,
    pub layer_widths: Vec<usize>,
    pub train: TrainConfig,
    pub classifiers: ClassifierParams,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("."),
            turbines: Vec::new(),
            scada_paths: BTreeMap::new(),
            alarm_paths: BTreeMap::new(),
            train_turbines: Vec::new(),
            test_turbines: Vec::new(),
            reference_turbine: None,
            nan_threshold: preprocess::DEFAULT_NAN_THRESHOLD,
            window_length: 12,
            fw: 1,
            layer_widths: DEFAULT_WIDTHS.to_vec(),
            train: TrainConfig::default(),
            classifiers: ClassifierParams::default(),
            out_dir: PathBuf::from("afc-out"),
            seed: 0,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "data_dir",
    "turbines",
    "train_turbines",
    "test_turbines",
    "reference_turbine",
    "nan_threshold",
    "window_length",
    "fw",
    "layer_widths",
    "epochs_per_dataset",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_epsilon",
    "batch_size",
    "decision_threshold",
    "gradient_clip_norm",
    "knn_k",
    "dt_max_depth",
    "dt_min_samples_split",
    "rf_n_trees",
    "rf_max_features",
    "rf_bootstrap",
    "out_dir",
    "seed",
];

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_kv(&text, base).map_err(|e| e.context(path.display()))
    }

    /// Parses the flat config format; relative paths resolve against `base`.
    pub fn from_kv(text: &str, base: &Path) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        for (key, line) in kv.keys() {
            let known = KNOWN_KEYS.contains(&key) || key.starts_with("scada.") || key.starts_with("alarms.");
            if !known {
                return Err(usage(format!("line {line}: unknown key {key}")));
            }
        }
        let path = |v: &str| base.join(v);
        let ids = |v: &str| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        let mut c = Self::default();
        if let Some(v) = kv.get("data_dir") {
            c.data_dir = path(v);
        } else {
            c.data_dir = base.to_path_buf();
        }
        if let Some(v) = kv.get("out_dir") {
            c.out_dir = path(v);
        } else {
            c.out_dir = base.join("afc-out");
        }
        c.turbines = kv.get("turbines").map(ids).unwrap_or_default();
        c.train_turbines = kv.get("train_turbines").map(ids).unwrap_or_default();
        c.test_turbines = kv.get("test_turbines").map(ids).unwrap_or_default();
        c.reference_turbine = kv.get("reference_turbine").map(String::from);
        for (id, v) in kv.with_prefix("scada") {
            c.scada_paths.insert(id.to_string(), path(v));
        }
        for (id, v) in kv.with_prefix("alarms") {
            c.alarm_paths.insert(id.to_string(), path(v));
        }
        kv.set_from("nan_threshold", &mut c.nan_threshold)?;
        kv.set_from("window_length", &mut c.window_length)?;
        kv.set_from("fw", &mut c.fw)?;
        if let Some(v) = kv.get("layer_widths") {
            c.layer_widths = parse_list("layer_widths", v)?;
        }
        let t = &mut c.train;
        kv.set_from("epochs_per_dataset", &mut t.epochs_per_dataset)?;
        kv.set_from("learning_rate", &mut t.learning_rate)?;
        kv.set_from("beta1", &mut t.beta1)?;
        kv.set_from("beta2", &mut t.beta2)?;
        kv.set_from("adam_epsilon", &mut t.epsilon)?;
        kv.set_from("batch_size", &mut t.batch_size)?;
        kv.set_from("decision_threshold", &mut t.decision_threshold)?;
        kv.set_from("gradient_clip_norm", &mut t.gradient_clip_norm)?;
        let cl = &mut c.classifiers;
        kv.set_from("knn_k", &mut cl.knn_k)?;
        if let Some(v) = kv.get("dt_max_depth") {
            let depth = if v == "none" { None } else { Some(crate::config::parse_scalar("dt_max_depth", v)?) };
            cl.tree.max_depth = depth;
            cl.forest.tree.max_depth = depth;
        }
        kv.set_from("dt_min_samples_split", &mut cl.tree.min_samples_split)?;
        cl.forest.tree.min_samples_split = cl.tree.min_samples_split;
        kv.set_from("rf_n_trees", &mut cl.forest.n_trees)?;
        kv.set_from("rf_bootstrap", &mut cl.forest.bootstrap)?;
        if let Some(v) = kv.get("rf_max_features") {
            cl.forest.max_features = match v {
                "sqrt" => MaxFeatures::Sqrt,
                "all" => MaxFeatures::All,
                n => MaxFeatures::Count(crate::config::parse_scalar("rf_max_features", n)?),
            };
        }
        kv.set_from("seed", &mut c.seed)?;
        c.train.seed = c.seed;
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn scada_path(&self, id: &str) -> PathBuf {
        self.scada_paths
            .get(id)
            .cloned()
            .unwrap_or_else(|| self.data_dir.join(format!("{id}.scada.csv")))
    }

    pub fn alarm_path(&self, id: &str) -> PathBuf {
        self.alarm_paths
            .get(id)
            .cloned()
            .unwrap_or_else(|| self.data_dir.join(format!("{id}.alarms.csv")))
    }

    /// Fills in the turbine list and the train/test split and checks the
    /// configuration for consistency.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.turbines.is_empty() {
            let mut ids: Vec<String> = c.scada_paths.keys().cloned().collect();
            if ids.is_empty() {
                let dir = std::fs::read_dir(&c.data_dir).map_err(|e| Error::io(&c.data_dir, e))?;
                for entry in dir {
                    let name = entry.map_err(|e| Error::io(&c.data_dir, e))?.file_name();
                    if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".scada.csv")) {
                        ids.push(id.to_string());
                    }
                }
            }
            c.turbines = ids;
        }
        c.turbines.sort();
        c.turbines.dedup();
        if c.turbines.len() < 2 && (c.train_turbines.is_empty() || c.test_turbines.is_empty()) {
            return Err(usage("at least two turbines are needed for a train/test split"));
        }
        if c.train_turbines.is_empty() && c.test_turbines.is_empty() {
            let n = c.turbines.len();
            let n_train = ((n as f64 * DEFAULT_TRAIN_FRACTION).ceil() as usize).clamp(1, n - 1);
            c.train_turbines = c.turbines[..n_train].to_vec();
            c.test_turbines = c.turbines[n_train..].to_vec();
        } else if c.test_turbines.is_empty() {
            c.test_turbines = c.turbines.iter().filter(|t| !c.train_turbines.contains(t)).cloned().collect();
        } else if c.train_turbines.is_empty() {
            c.train_turbines = c.turbines.iter().filter(|t| !c.test_turbines.contains(t)).cloned().collect();
        }
        c.train_turbines.sort();
        c.test_turbines.sort();
        if c.train_turbines.is_empty() || c.test_turbines.is_empty() {
            return Err(usage("train and test turbine sets must both be non-empty"));
        }
        if let Some(t) = c.train_turbines.iter().find(|t| c.test_turbines.contains(t)) {
            return Err(usage(format!("turbine {t} is in both the train and test sets")));
        }
        for t in c.train_turbines.iter().chain(&c.test_turbines) {
            if !c.turbines.contains(t) {
                c.turbines.push(t.clone());
            }
        }
        c.turbines.sort();
        if let Some(r) = &c.reference_turbine {
            if !c.train_turbines.contains(r) {
                return Err(usage(format!("reference turbine {r} must be a training turbine")));
            }
        }
        if c.fw > MAX_FORECAST_OFFSET {
            return Err(usage(format!("fw {} outside the supported range 0-{MAX_FORECAST_OFFSET}", c.fw)));
        }
        if c.window_length == 0 {
            return Err(usage("window_length must be positive"));
        }
        if c.layer_widths.is_empty() || c.layer_widths.contains(&0) {
            return Err(usage("layer_widths must be a non-empty list of positive integers"));
        }
        if !(0.0..=1.0).contains(&c.nan_threshold) {
            return Err(usage("nan_threshold must lie in [0, 1]"));
        }
        c.train.seed = c.seed;
        c.train.validate()?;
        Ok(c)
    }
}

/// Raw inputs of one turbine.
#[derive(Debug, Clone)]
pub struct RawTurbine {
    pub scada: ScadaTable,
    pub events: Vec<AlarmEvent>,
}

pub fn load_raw(cfg: &PipelineConfig) -> Result<Vec<RawTurbine>> {
    cfg.turbines
        .par_iter()
        .map(|id| {
            let sp = cfg.scada_path(id);
            let mut scada = ingest::parse_scada(&sp).map_err(|e| e.context(format!("turbine {id}")))?;
            scada.turbine_id = id.clone();
            let ap = cfg.alarm_path(id);
            let events = ingest::parse_alarm_log(&ap).map_err(|e| e.context(format!("turbine {id}")))?;
            Ok(RawTurbine { scada, events })
        })
        .collect()
}

/// Raw inputs equivalent to writing `out` to disk and reading it back.
pub fn raw_from_synth(out: &crate::synth::SynthOutput) -> Vec<RawTurbine> {
    out.turbines
        .iter()
        .map(|t| RawTurbine { scada: ScadaTable::from(&t.dataset), events: t.events.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanStats {
    pub param_ids: Vec<String>,
    /// Per turbine, NaN fraction of every raw parameter (NaN when absent).
    pub fractions: BTreeMap<String, Vec<f64>>,
}

impl NanStats {
    pub fn to_csv(&self, mask: &RetentionMask) -> String {
        let mut out = String::from("param");
        for t in self.fractions.keys() {
            let _ = write!(out, ",{t}");
        }
        out.push_str(",retained\n");
        for (j, p) in self.param_ids.iter().enumerate() {
            out.push_str(p);
            for f in self.fractions.values() {
                let v = f[j];
                if v.is_nan() {
                    out.push(',');
                } else {
                    let _ = write!(out, ",{v}");
                }
            }
            let _ = writeln!(out, ",{}", u8::from(mask.retained.contains(p)));
        }
        out
    }
}

/// Everything produced by preprocessing, ready for windowing.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub codebook: AlarmCodebook,
    pub mask: RetentionMask,
    pub scaler: ScalerParams,
    pub nan_stats: NanStats,
    pub train: Vec<MergedDataset>,
    pub test: Vec<MergedDataset>,
}

/// Re-tags, merges, retains, imputes and scales. Only training turbines
/// contribute to the retention mask and the scaler.
pub fn prepare(cfg: &PipelineConfig, raw: Vec<RawTurbine>) -> Result<Prepared> {
    let codebook = ingest::build_codebook(raw.iter().flat_map(|r| &r.events))?;
    let merged: BTreeMap<String, MergedDataset> = raw
        .par_iter()
        .map(|r| {
            let ds = ingest::merge_alarms(&r.scada, &r.events, &codebook)
                .map_err(|e| e.context(format!("turbine {}", r.scada.turbine_id)))?;
            Ok((r.scada.turbine_id.clone(), ds))
        })
        .collect::<Result<_>>()?;
    let get = |id: &String| merged.get(id).ok_or_else(|| data(format!("no data loaded for turbine {id}")));

    let mut all_params: Vec<String> = Vec::new();
    for ds in merged.values() {
        for p in &ds.param_ids {
            if !all_params.contains(p) {
                all_params.push(p.clone());
            }
        }
    }
    let fractions = merged
        .iter()
        .map(|(id, ds)| {
            let own = preprocess::nan_fractions(ds);
            let row = all_params
                .iter()
                .map(|p| ds.param_ids.iter().position(|q| q == p).map_or(f64::NAN, |j| own[j]))
                .collect();
            (id.clone(), row)
        })
        .collect();
    let nan_stats = NanStats { param_ids: all_params, fractions };

    let mask = match &cfg.reference_turbine {
        Some(r) => preprocess::compute_retention(get(r)?, cfg.nan_threshold)?,
        None => {
            // the training turbine that keeps the most parameters
            let mut best: Option<RetentionMask> = None;
            for id in &cfg.train_turbines {
                if let Ok(m) = preprocess::compute_retention(get(id)?, cfg.nan_threshold) {
                    if best.as_ref().is_none_or(|b| m.retained.len() > b.retained.len()) {
                        best = Some(m);
                    }
                }
            }
            best.ok_or_else(|| data("no training turbine retains any parameter at the NaN threshold"))?
        }
    };

    let reduce = |id: &String| -> Result<MergedDataset> {
        let ds = preprocess::apply_retention(get(id)?, &mask)?;
        Ok(preprocess::impute(&ds))
    };
    let train_raw: Vec<MergedDataset> = cfg.train_turbines.iter().map(reduce).collect::<Result<_>>()?;
    let test_raw: Vec<MergedDataset> = cfg.test_turbines.iter().map(reduce).collect::<Result<_>>()?;
    let scaler = preprocess::fit_scaler(&train_raw.iter().collect::<Vec<_>>())?;
    let scale = |v: Vec<MergedDataset>| -> Result<Vec<MergedDataset>> {
        v.iter().map(|d| preprocess::apply_scaler(d, &scaler)).collect()
    };
    Ok(Prepared {
        codebook,
        mask,
        train: scale(train_raw)?,
        test: scale(test_raw)?,
        scaler,
        nan_stats,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `preprocess` stage: reads raw files, writes preprocessing artifacts.
pub fn run_preprocess(cfg: &PipelineConfig) -> Result<Prepared> {
    let cfg = cfg.resolve()?;
    let prepared = prepare(&cfg, load_raw(&cfg)?)?;
    let out = &cfg.out_dir;
    write_file(&out.join("codebook.json"), serde_json::to_string_pretty(&prepared.codebook)?)?;
    write_file(&out.join("retention.json"), serde_json::to_string_pretty(&prepared.mask)?)?;
    write_file(&out.join("scaler.json"), serde_json::to_string_pretty(&prepared.scaler)?)?;
    write_file(&out.join("nan_stats.csv"), prepared.nan_stats.to_csv(&prepared.mask))?;
    for ds in prepared.train.iter().chain(&prepared.test) {
        let mut buf = Vec::new();
        ds.write_binary(&mut buf).map_err(|e| Error::io(out, e))?;
        write_file(&out.join("data").join(format!("{}.afcd", ds.turbine_id)), buf)?;
    }
    Ok(prepared)
}

/// Reads the artifacts written by [`run_preprocess`].
pub fn load_prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let out = &cfg.out_dir;
    let need = |name: &str| -> Result<String> {
        let p = out.join(name);
        if !p.exists() {
            return Err(usage(format!("{} not found; run `afc preprocess` first", p.display())));
        }
        read_file(&p)
    };
    let codebook: AlarmCodebook = serde_json::from_str(&need("codebook.json")?)?;
    let mask: RetentionMask = serde_json::from_str(&need("retention.json")?)?;
    let scaler: ScalerParams = serde_json::from_str(&need("scaler.json")?)?;
    let load = |id: &String| -> Result<MergedDataset> {
        let p = out.join("data").join(format!("{id}.afcd"));
        let f = std::fs::File::open(&p)
            .map_err(|_| usage(format!("{} not found; run `afc preprocess` first", p.display())))?;
        MergedDataset::read_binary(std::io::BufReader::new(f)).map_err(|e| e.context(p.display()))
    };
    Ok(Prepared {
        codebook,
        mask,
        scaler,
        nan_stats: NanStats { param_ids: Vec::new(), fractions: BTreeMap::new() },
        train: cfg.train_turbines.iter().map(load).collect::<Result<_>>()?,
        test: cfg.test_turbines.iter().map(load).collect::<Result<_>>()?,
    })
}

pub fn window_all(datasets: &[MergedDataset], spec: WindowSpec) -> Result<Vec<WindowedSet>> {
    datasets
        .iter()
        .map(|ds| {
            let ws = build_windows(ds, spec)?;
            if ws.is_degenerate() {
                return Err(data(format!(
                    "turbine {} has {} rows, too few for windows of {} rows at offset {}",
                    ds.turbine_id,
                    ds.n_rows(),
                    spec.length,
                    spec.forecast_offset
                )));
            }
            Ok(ws)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub fw: usize,
    pub regressor: RegressorArtifact,
    pub classifiers: ClassifierSet,
    pub loss_trace: Vec<EpochRecord>,
    /// Regression-flagged training windows that carried a true alarm.
    pub classifier_samples: usize,
    pub flagged_windows: usize,
}

/// Trains the regressor on the training turbines in ascending id order, then
/// fits the classifiers on the alarm windows it flags.
pub fn train_models(cfg: &PipelineConfig, prepared: &Prepared, fw: usize) -> Result<TrainedModels> {
    let m = prepared.mask.retained.len();
    let spec = WindowSpec::new(cfg.window_length, m, fw)?;
    let train_sets = window_all(&prepared.train, spec)?;
    let refs: Vec<&WindowedSet> = train_sets.iter().collect();
    let mut model = LstmStack::new(&cfg.layer_widths, cfg.window_length, m, cfg.seed)?;
    let loss_trace = regressor::train(&mut model, &refs, &cfg.train)?;

    let mut samples = Samples { dim: spec.flat_len(), data: Vec::new(), tags: Vec::new() };
    let mut flagged_windows = 0;
    for ws in &train_sets {
        let forecast = regressor::predict_binary(&model, ws, cfg.train.decision_threshold)?;
        let flagged = select_alarm_windows(ws, &forecast.binary)?;
        flagged_windows += flagged.len();
        let s = Samples::from_windows(&flagged);
        samples.data.extend(s.data);
        samples.tags.extend(s.tags);
    }
    if samples.is_empty() {
        return Err(data("no flagged windows to train classifiers"));
    }
    let classifiers = ClassifierSet::fit(&samples, &cfg.classifiers, cfg.seed)?;
    Ok(TrainedModels {
        fw,
        regressor: RegressorArtifact::new(model, &cfg.train),
        classifiers,
        loss_trace,
        classifier_samples: samples.len(),
        flagged_windows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub fw: usize,
    pub config_hash: String,
    pub epochs: usize,
    pub flagged_windows: usize,
    pub classifier_samples: usize,
    pub regressor_sha256: String,
    pub classifiers_sha256: String,
}

fn fw_dir(cfg: &PipelineConfig, fw: usize) -> PathBuf {
    cfg.out_dir.join(format!("fw{fw}"))
}

/// `train` stage for one forecast offset.
pub fn run_train(cfg: &PipelineConfig, fw: usize) -> Result<TrainSummary> {
    let cfg = cfg.resolve()?;
    let prepared = load_prepared(&cfg)?;
    let models = train_models(&cfg, &prepared, fw)?;
    let dir = fw_dir(&cfg, fw);
    let reg = serde_json::to_string(&models.regressor)?;
    let cls = serde_json::to_string(&models.classifiers)?;
    write_file(&dir.join("regressor.json"), &reg)?;
    write_file(&dir.join("classifiers.json"), &cls)?;
    let mut trace = String::from("epoch,dataset,turbine,mean_loss\n");
    for r in &models.loss_trace {
        let _ = writeln!(trace, "{},{},{},{}", r.epoch, r.dataset, cfg.train_turbines[r.dataset], r.mean_loss);
    }
    write_file(&dir.join("loss_trace.csv"), trace)?;
    let summary = TrainSummary {
        fw,
        config_hash: cfg.train.hash(),
        epochs: models.loss_trace.len(),
        flagged_windows: models.flagged_windows,
        classifier_samples: models.classifier_samples,
        regressor_sha256: sha256_hex(reg.as_bytes()),
        classifiers_sha256: sha256_hex(cls.as_bytes()),
    };
    write_file(&dir.join("train_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn load_models(cfg: &PipelineConfig, fw: usize) -> Result<TrainedModels> {
    let dir = fw_dir(cfg, fw);
    let need = |name: &str| -> Result<String> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(usage(format!("{} not found; run `afc train --fw {fw}` first", p.display())));
        }
        read_file(&p)
    };
    Ok(TrainedModels {
        fw,
        regressor: RegressorArtifact::from_json(&need("regressor.json")?)?,
        classifiers: ClassifierSet::from_json(&need("classifiers.json")?)?,
        loss_trace: Vec::new(),
        classifier_samples: 0,
        flagged_windows: 0,
    })
}

/// Scores one test turbine end to end.
pub fn evaluate_turbine(
    cfg: &PipelineConfig,
    models: &TrainedModels,
    codebook: &AlarmCodebook,
    ws: &WindowedSet,
    turbine: &str,
) -> Result<TurbineReport> {
    let forecast = regressor::predict_binary(&models.regressor.model, ws, cfg.train.decision_threshold)?;
    let counts = binary_contingency(&forecast.binary, &ws.y1)?;
    let flagged = select_alarm_windows(ws, &forecast.binary)?;
    let per_model = models.classifiers.predict_all(flagged.windows())?;

    // classifier recall is scored on the flagged windows that hold a true alarm
    let true_idx: Vec<usize> = (0..flagged.len()).filter(|&k| flagged.y2[k] > 0).collect();
    let truth_tags: Vec<u32> = true_idx.iter().map(|&k| flagged.y2[k]).collect();
    let restricted: BTreeMap<ModelKind, Vec<u32>> = per_model
        .iter()
        .map(|(&kind, p)| (kind, true_idx.iter().map(|&k| p[k]).collect()))
        .collect();
    let verdict = bagged_select(&restricted, &truth_tags)?;
    let undefined = MetricReport { accuracy: None, precision: None, recall: None, f1: None };
    let classifiers = restricted
        .iter()
        .map(|(kind, p)| {
            let m = if p.is_empty() { undefined } else { multiclass_micro(p, &truth_tags)? };
            Ok((kind.name().to_string(), m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let chosen_preds = &per_model[&verdict.chosen];
    let fpaf = final_accuracy(&forecast.binary, &ws.y1, chosen_preds, &flagged.y2)?;

    let mut forecast_tags = vec![0u32; ws.len()];
    let mut k = 0;
    for (g, &b) in forecast.binary.iter().enumerate() {
        if b == 1 {
            forecast_tags[g] = chosen_preds[k];
            k += 1;
        }
    }
    let per_alarm = per_alarm_breakdown(&forecast_tags, &ws.y2)?.rows;
    let confusion = confusion_matrix(verdict.final_predictions(), &truth_tags, codebook.len())?;

    let mut contingency = BTreeMap::new();
    contingency.insert("lstm".to_string(), counts);
    for (kind, p) in &restricted {
        let correct = p.iter().zip(&truth_tags).filter(|(a, b)| a == b).count() as u64;
        let c = ContingencyCounts {
            tp: correct,
            fp: flagged.len() as u64 - correct,
            fn_: counts.fn_,
            tn: counts.tn,
        };
        contingency.insert(kind.name().to_string(), c);
    }

    Ok(TurbineReport {
        turbine: turbine.to_string(),
        fw: models.fw,
        regression: RegressionSection { counts, metrics: metrics(&counts) },
        classifiers,
        final_accuracy: fpaf.final_accuracy,
        fpaf,
        chosen_model: verdict.chosen.name().to_string(),
        per_alarm,
        confusion,
        contingency,
    })
}

pub fn evaluate_models(cfg: &PipelineConfig, prepared: &Prepared, models: &TrainedModels) -> Result<Vec<TurbineReport>> {
    let m = prepared.mask.retained.len();
    let spec = WindowSpec::new(cfg.window_length, m, models.fw)?;
    let test_sets = window_all(&prepared.test, spec)?;
    test_sets
        .iter()
        .zip(&prepared.test)
        .map(|(ws, ds)| evaluate_turbine(cfg, models, &prepared.codebook, ws, &ds.turbine_id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    /// Final accuracy per forecast offset and test turbine.
    pub final_accuracy: SummaryTable,
    /// Regression recall per forecast offset and test turbine.
    pub regression_recall: SummaryTable,
    /// Per forecast offset, model -> averaged FP/FN/TP fractions.
    pub contingency: BTreeMap<usize, BTreeMap<String, Option<ContingencyFractions>>>,
}

impl EvaluationSummary {
    pub fn from_reports(turbines: &[String], per_fw: &[(usize, Vec<TurbineReport>)]) -> Result<Self> {
        let mut final_accuracy = SummaryTable::new(turbines.to_vec());
        let mut regression_recall = SummaryTable::new(turbines.to_vec());
        let mut contingency = BTreeMap::new();
        for (fw, reports) in per_fw {
            final_accuracy.push(*fw, reports.iter().map(|r| r.final_accuracy).collect());
            regression_recall.push(*fw, reports.iter().map(|r| r.regression.metrics.recall).collect());
            let counts: Vec<_> = reports.iter().map(|r| r.contingency.clone()).collect();
            contingency.insert(*fw, contingency_fractions(&counts)?);
        }
        Ok(Self { final_accuracy, regression_recall, contingency })
    }

    pub fn contingency_csv(&self) -> String {
        let mut out = String::from("fw,model,fp,fn,tp\n");
        for (fw, models) in &self.contingency {
            for (model, f) in models {
                match f {
                    Some(f) => {
                        let _ = writeln!(out, "FW{fw},{model},{},{},{}", f.fp, f.fn_, f.tp);
                    }
                    None => {
                        let _ = writeln!(out, "FW{fw},{model},undefined,undefined,undefined");
                    }
                }
            }
        }
        out
    }
}

/// `evaluate` stage for the given forecast offsets.
pub fn run_evaluate(cfg: &PipelineConfig, fws: &[usize]) -> Result<EvaluationSummary> {
    let cfg = cfg.resolve()?;
    let prepared = load_prepared(&cfg)?;
    let mut per_fw = Vec::new();
    for &fw in fws {
        let models = load_models(&cfg, fw)?;
        let reports = evaluate_models(&cfg, &prepared, &models)?;
        for r in &reports {
            let dir = fw_dir(&cfg, fw).join("reports");
            write_file(&dir.join(format!("{}.json", r.turbine)), serde_json::to_string_pretty(r)?)?;
            write_file(&dir.join(format!("{}.csv", r.turbine)), r.to_csv())?;
        }
        per_fw.push((fw, reports));
    }
    let summary = EvaluationSummary::from_reports(&cfg.test_turbines, &per_fw)?;
    write_file(&cfg.out_dir.join("summary.csv"), summary.final_accuracy.to_csv())?;
    write_file(&cfg.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_file(&cfg.out_dir.join("contingency.csv"), summary.contingency_csv())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub regression_recall: Option<f64>,
    pub final_accuracy: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Train and evaluate in memory; returns the mean over test turbines.
pub fn train_and_score(cfg: &PipelineConfig, prepared: &Prepared, fw: usize) -> Result<(Option<f64>, Option<f64>)> {
    let models = match train_models(cfg, prepared, fw) {
        Ok(m) => m,
        // a regressor that flags nothing scores zero rather than aborting a sweep
        Err(Error::Data(msg)) if msg.contains("no flagged windows") => {
            return Ok((Some(0.0), Some(0.0)));
        }
        Err(e) => return Err(e),
    };
    let reports = evaluate_models(cfg, prepared, &models)?;
    Ok((
        mean_defined(reports.iter().map(|r| r.regression.metrics.recall)),
        mean_defined(reports.iter().map(|r| Some(r.final_accuracy.unwrap_or(0.0)))),
    ))
}

pub fn sweep_csv(rows: &[SweepRow], label: &str) -> String {
    let mut out = format!("{label},regression_recall,final_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.label, fmt_metric(r.regression_recall), fmt_metric(r.final_accuracy));
    }
    out
}

/// One row per forecast offset.
pub fn run_sweep_fw(cfg: &PipelineConfig, fws: &[usize]) -> Result<Vec<SweepRow>> {
    let cfg = cfg.resolve()?;
    if let Some(f) = fws.iter().find(|&&f| f > MAX_FORECAST_OFFSET) {
        return Err(usage(format!("fw {f} outside the supported range 0-{MAX_FORECAST_OFFSET}")));
    }
    let prepared = prepare(&cfg, load_raw(&cfg)?)?;
    let rows = fws
        .iter()
        .map(|&fw| {
            let (recall, fin) = train_and_score(&cfg, &prepared, fw)?;
            Ok(SweepRow { label: format!("FW{fw}"), regression_recall: recall, final_accuracy: fin })
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&cfg.out_dir.join("sweep_fw.csv"), sweep_csv(&rows, "fw"))?;
    Ok(rows)
}

/// One row per layer stack, at the configured forecast offset.
pub fn run_sweep_depth(cfg: &PipelineConfig, stacks: &[Vec<usize>]) -> Result<Vec<SweepRow>> {
    let cfg = cfg.resolve()?;
    let prepared = prepare(&cfg, load_raw(&cfg)?)?;
    let rows = stacks
        .iter()
        .map(|widths| {
            let mut c = cfg.clone();
            c.layer_widths = widths.clone();
            let (recall, fin) = train_and_score(&c, &prepared, cfg.fw)?;
            let label = widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";");
            Ok(SweepRow { label, regression_recall: recall, final_accuracy: fin })
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&cfg.out_dir.join("sweep_depth.csv"), sweep_csv(&rows, "widths"))?;
    Ok(rows)
}
