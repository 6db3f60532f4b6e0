//! Synthetic multi-turbine SCADA data with planted alarm precursors.
//!
//! Each parameter follows an AR(1) drift around its own level. Alarms fire
//! per row with fixed base rates; for every rule `(param, magnitude, lead,
//! tag)`, an alarm of `tag` firing at row `t` adds a one-row step of
//! `magnitude` to `param` at row `t - lead`. Gaussian noise and missing
//! values are applied on top.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_list, parse_scalar, KvFile};
use crate::error::{Error, Result};
use crate::ingest::{self, AlarmEvent, MergedDataset};
use crate::ROW_SECONDS;

const AR_COEF: f64 = 0.9;
const AR_STEP: f64 = 0.05;
/// Raw alarm code of tag `c` is `RAW_CODE_BASE + c`.
pub const RAW_CODE_BASE: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagRate {
    pub tag: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecursorRule {
    pub param: usize,
    pub magnitude: f64,
    pub lead: usize,
    pub tag: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_turbines: usize,
    pub rows: usize,
    pub n_params: usize,
    pub tags: Vec<TagRate>,
    pub rules: Vec<PrecursorRule>,
    pub noise_std: f64,
    /// Missing-value fraction per parameter.
    pub nan_fraction: Vec<f64>,
    /// Per-row probability of a code-0 (normal operation) log entry.
    pub zero_code_rate: f64,
    pub start_time: i64,
    pub seed: u64,
}

impl SynthSpec {
    /// A small default: one rule per tag, lead 1, no missing values.
    pub fn planted(n_turbines: usize, rows: usize, n_params: usize, n_tags: u32, seed: u64) -> Self {
        let tags = (1..=n_tags).map(|tag| TagRate { tag, rate: 0.01 }).collect();
        let rules = (1..=n_tags)
            .map(|tag| PrecursorRule { param: (tag as usize - 1) % n_params, magnitude: 5.0, lead: 1, tag })
            .collect();
        Self {
            n_turbines,
            rows,
            n_params,
            tags,
            rules,
            noise_std: 0.02,
            nan_fraction: vec![0.0; n_params],
            zero_code_rate: 0.0,
            start_time: 1_577_836_800,
            seed,
        }
    }

    pub fn turbine_id(i: usize) -> String {
        format!("WT{:02}", i + 1)
    }

    pub fn param_id(j: usize) -> String {
        format!("p{j:03}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.n_turbines == 0 || self.rows == 0 || self.n_params == 0 {
            return bad("turbines, rows and params must be positive".into());
        }
        if self.tags.is_empty() {
            return bad("at least one alarm tag is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tags {
            if t.tag == 0 || !seen.insert(t.tag) {
                return bad(format!("tag {} is zero or repeated", t.tag));
            }
            if !(t.rate > 0.0 && t.rate < 1.0) {
                return bad(format!("base rate {} of tag {} outside (0, 1)", t.rate, t.tag));
            }
        }
        if self.tags.iter().map(|t| t.rate).sum::<f64>() >= 1.0 {
            return bad("alarm base rates sum to 1 or more".into());
        }
        for r in &self.rules {
            if r.lead == 0 || r.lead >= self.rows {
                return bad(format!("rule lead {} must be in 1..{}", r.lead, self.rows));
            }
            if r.param >= self.n_params {
                return bad(format!("rule parameter {} out of range", r.param));
            }
            if !seen.contains(&r.tag) {
                return bad(format!("rule refers to unknown tag {}", r.tag));
            }
            if !r.magnitude.is_finite() {
                return bad("rule magnitude must be finite".into());
            }
        }
        for (i, a) in self.rules.iter().enumerate() {
            for b in &self.rules[i + 1..] {
                if a.param == b.param && a.lead == b.lead && a.tag != b.tag {
                    return bad(format!(
                        "rules for tags {} and {} plant the same excursion (param {}, lead {})",
                        a.tag, b.tag, a.param, a.lead
                    ));
                }
            }
        }
        if self.nan_fraction.len() != self.n_params || self.nan_fraction.iter().any(|f| !(0.0..1.0).contains(f)) {
            return bad("nan fractions must be given per parameter and lie in [0, 1)".into());
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 || !(0.0..1.0).contains(&self.zero_code_rate) {
            return bad("noise_std must be >= 0 and zero_code_rate in [0, 1)".into());
        }
        Ok(())
    }

    /// Reads the `key = value` spec format; see the README for the keys.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        for (key, line) in kv.keys() {
            let known = matches!(
                key,
                "turbines" | "rows" | "params" | "tag" | "rule" | "noise_std" | "nan_fraction" | "zero_code_rate"
                    | "start_time" | "seed"
            ) || key.starts_with("nan.");
            if !known {
                return Err(Error::Usage(format!("line {line}: unknown key {key}")));
            }
        }
        let req = |k: &str| kv.get(k).ok_or_else(|| Error::Usage(format!("missing key {k}")));
        let n_params: usize = parse_scalar("params", req("params")?)?;
        let mut spec = SynthSpec::planted(
            parse_scalar("turbines", req("turbines")?)?,
            parse_scalar("rows", req("rows")?)?,
            n_params,
            0,
            0,
        );
        kv.set_from("seed", &mut spec.seed)?;
        kv.set_from("noise_std", &mut spec.noise_std)?;
        kv.set_from("zero_code_rate", &mut spec.zero_code_rate)?;
        if let Some(t) = kv.get("start_time") {
            spec.start_time =
                ingest::parse_timestamp(t).ok_or_else(|| Error::Usage(format!("start_time: bad timestamp {t:?}")))?;
        }
        if let Some(f) = kv.parse_value::<f64>("nan_fraction")? {
            spec.nan_fraction = vec![f; n_params];
        }
        for (j, v) in kv.with_prefix("nan") {
            let j: usize = parse_scalar("nan.<param>", j)?;
            let slot = spec
                .nan_fraction
                .get_mut(j)
                .ok_or_else(|| Error::Spec(format!("nan.{j}: parameter out of range")))?;
            *slot = parse_scalar("nan.<param>", v)?;
        }
        for v in kv.get_all("tag") {
            let parts: Vec<f64> = parse_list("tag", v)?;
            let [tag, rate] = parts[..] else {
                return Err(Error::Usage(format!("tag: expected `tag, rate`, got {v:?}")));
            };
            spec.tags.push(TagRate { tag: tag as u32, rate });
        }
        for v in kv.get_all("rule") {
            let parts: Vec<f64> = parse_list("rule", v)?;
            let [param, magnitude, lead, tag] = parts[..] else {
                return Err(Error::Usage(format!("rule: expected `param, magnitude, lead, tag`, got {v:?}")));
            };
            spec.rules.push(PrecursorRule { param: param as usize, magnitude, lead: lead as usize, tag: tag as u32 });
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAlarm {
    pub turbine: String,
    pub row: usize,
    pub timestamp: i64,
    pub tag: u32,
    pub raw_code: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rules: Vec<PrecursorRule>,
    pub alarms: Vec<PlantedAlarm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTurbine {
    pub dataset: MergedDataset,
    pub events: Vec<AlarmEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub turbines: Vec<SynthTurbine>,
    pub truth: GroundTruth,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let turbines: Vec<(SynthTurbine, Vec<PlantedAlarm>)> =
        (0..spec.n_turbines).into_par_iter().map(|i| generate_turbine(spec, i)).collect();
    let mut alarms = Vec::new();
    let turbines = turbines
        .into_iter()
        .map(|(t, planted)| {
            alarms.extend(planted);
            t
        })
        .collect();
    Ok(SynthOutput { turbines, truth: GroundTruth { rules: spec.rules.clone(), alarms } })
}

fn generate_turbine(spec: &SynthSpec, index: usize) -> (SynthTurbine, Vec<PlantedAlarm>) {
    let (n, m) = (spec.rows, spec.n_params);
    let id = SynthSpec::turbine_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let mut tags = spec.tags.clone();
    tags.sort_by_key(|t| t.tag);
    let min_row = |tag: u32| spec.rules.iter().filter(|r| r.tag == tag).map(|r| r.lead).max().unwrap_or(0);
    let mut y2 = vec![0u32; n];
    for (t, slot) in y2.iter_mut().enumerate() {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for tr in &tags {
            cum += tr.rate;
            if u < cum {
                if t >= min_row(tr.tag) {
                    *slot = tr.tag;
                }
                break;
            }
        }
    }

    let mut values = vec![0.0; n * m];
    for j in 0..m {
        let level = j as f64;
        let mut x = 0.0;
        for t in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            x = AR_COEF * x + AR_STEP * z;
            values[t * m + j] = level + x;
        }
    }
    for t in 0..n {
        if y2[t] == 0 {
            continue;
        }
        for r in spec.rules.iter().filter(|r| r.tag == y2[t]) {
            values[(t - r.lead) * m + r.param] += r.magnitude;
        }
    }
    if spec.noise_std > 0.0 {
        for v in &mut values {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_std * z;
        }
    }
    for (j, &frac) in spec.nan_fraction.iter().enumerate() {
        let k = (frac * n as f64).round() as usize;
        if k > 0 {
            for t in sample(&mut rng, n, k) {
                values[t * m + j] = f64::NAN;
            }
        }
    }

    let timestamps: Vec<i64> = (0..n as i64).map(|t| spec.start_time + t * ROW_SECONDS).collect();
    let mut events = Vec::new();
    let mut planted = Vec::new();
    for t in 0..n {
        if y2[t] > 0 {
            let offset = rng.random_range(0..ROW_SECONDS / 2);
            let duration = rng.random_range(0..ROW_SECONDS - offset);
            let raw_code = RAW_CODE_BASE + y2[t];
            events.push(AlarmEvent {
                start_time: timestamps[t] + offset,
                duration,
                raw_code,
                description: format!("synthetic alarm {}", y2[t]),
                category: "synthetic".into(),
            });
            planted.push(PlantedAlarm { turbine: id.clone(), row: t, timestamp: timestamps[t], tag: y2[t], raw_code });
        }
        if spec.zero_code_rate > 0.0 && rng.random::<f64>() < spec.zero_code_rate {
            events.push(AlarmEvent {
                start_time: timestamps[t],
                duration: ROW_SECONDS,
                raw_code: 0,
                description: "normal operation".into(),
                category: "status".into(),
            });
        }
    }
    events.sort_by_key(|e| e.start_time);

    let dataset = MergedDataset {
        turbine_id: id,
        timestamps,
        param_ids: (0..m).map(SynthSpec::param_id).collect(),
        values,
        y1: y2.iter().map(|&c| u8::from(c > 0)).collect(),
        y2,
    };
    (SynthTurbine { dataset, events }, planted)
}

/// Writes `<id>.scada.csv` and `<id>.alarms.csv` per turbine plus
/// `ground_truth.json` into `dir`.
pub fn write_output(out: &SynthOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in &out.turbines {
        let ds = &t.dataset;
        let p = dir.join(format!("{}.scada.csv", ds.turbine_id));
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        ingest::write_scada(std::io::BufWriter::new(f), &ds.timestamps, &ds.param_ids, &ds.values)?;
        let p = dir.join(format!("{}.alarms.csv", ds.turbine_id));
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        ingest::write_alarm_log(std::io::BufWriter::new(f), &t.events)?;
    }
    let p = dir.join("ground_truth.json");
    std::fs::write(&p, serde_json::to_string_pretty(&out.truth)?).map_err(|e| Error::io(&p, e))
}
