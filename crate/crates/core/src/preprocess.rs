//! Parameter retention by NaN fraction, residual-NaN imputation and min-max
//! scaling.
//!
//! Retention is decided once on a reference turbine and then enforced on
//! every turbine so that all datasets share one column layout. The scaler is
//! fitted on the training turbines only and applied, with clamping, to the
//! rest.

use serde::{Deserialize, Serialize};

use crate::error::{data, usage, Result};
use crate::ingest::MergedDataset;

/// Default allowable fraction of missing values per parameter.
pub const DEFAULT_NAN_THRESHOLD: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionMask {
    pub reference_turbine: String,
    pub threshold: f64,
    pub retained: Vec<String>,
}

/// NaN fraction of every column, in column order.
pub fn nan_fractions(ds: &MergedDataset) -> Vec<f64> {
    let n = ds.n_rows().max(1) as f64;
    (0..ds.n_params())
        .map(|j| ds.column(j).filter(|v| v.is_nan()).count() as f64 / n)
        .collect()
}

pub fn compute_retention(reference: &MergedDataset, threshold: f64) -> Result<RetentionMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("NaN threshold {threshold} outside [0, 1]")));
    }
    if reference.n_rows() == 0 {
        return Err(data(format!("reference turbine {} has no rows", reference.turbine_id)));
    }
    let retained: Vec<String> = nan_fractions(reference)
        .into_iter()
        .zip(&reference.param_ids)
        .filter(|(frac, _)| *frac <= threshold)
        .map(|(_, id)| id.clone())
        .collect();
    if retained.is_empty() {
        return Err(data(format!(
            "no parameter of {} has a NaN fraction <= {threshold}",
            reference.turbine_id
        )));
    }
    Ok(RetentionMask {
        reference_turbine: reference.turbine_id.clone(),
        threshold,
        retained,
    })
}

pub fn apply_retention(ds: &MergedDataset, mask: &RetentionMask) -> Result<MergedDataset> {
    let cols = mask
        .retained
        .iter()
        .map(|id| {
            ds.param_ids.iter().position(|p| p == id).ok_or_else(|| {
                data(format!("turbine {} lacks retained parameter {id}", ds.turbine_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values = (0..ds.n_rows())
        .flat_map(|t| {
            let row = ds.row(t);
            cols.iter().map(move |&j| row[j])
        })
        .collect();
    Ok(MergedDataset {
        param_ids: mask.retained.clone(),
        values,
        ..ds.clone()
    })
}

/// Forward fill, then back fill leading gaps, then zero for all-NaN columns.
pub fn impute(ds: &MergedDataset) -> MergedDataset {
    let mut out = ds.clone();
    let (n, m) = (ds.n_rows(), ds.n_params());
    for j in 0..m {
        let mut last = None;
        for t in 0..n {
            let v = &mut out.values[t * m + j];
            if v.is_nan() {
                if let Some(prev) = last {
                    *v = prev;
                }
            } else {
                last = Some(*v);
            }
        }
        let fill = (0..n)
            .map(|t| out.values[t * m + j])
            .find(|v| !v.is_nan())
            .unwrap_or(0.0);
        for t in 0..n {
            let v = &mut out.values[t * m + j];
            if v.is_nan() {
                *v = fill;
            } else {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub param_ids: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[j], self.max[j]);
        if hi == lo {
            0.0
        } else {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }

    /// Inverse of [`scale`](Self::scale) for non-constant columns.
    pub fn unscale(&self, j: usize, s: f64) -> f64 {
        self.min[j] + s * (self.max[j] - self.min[j])
    }
}

pub fn fit_scaler(training: &[&MergedDataset]) -> Result<ScalerParams> {
    let first = training
        .first()
        .ok_or_else(|| data("cannot fit a scaler on zero datasets"))?;
    let m = first.n_params();
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    for ds in training {
        if ds.param_ids != first.param_ids {
            return Err(data(format!(
                "turbine {} has a different column set from {}",
                ds.turbine_id, first.turbine_id
            )));
        }
        for t in 0..ds.n_rows() {
            for (j, &v) in ds.row(t).iter().enumerate() {
                if v.is_nan() {
                    return Err(data(format!("turbine {} still has NaN at row {t}", ds.turbine_id)));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
    }
    if min.iter().any(|v| v.is_infinite()) {
        return Err(data("training datasets have no rows"));
    }
    Ok(ScalerParams {
        param_ids: first.param_ids.clone(),
        min,
        max,
    })
}

pub fn apply_scaler(ds: &MergedDataset, scaler: &ScalerParams) -> Result<MergedDataset> {
    if ds.param_ids != scaler.param_ids {
        return Err(data(format!(
            "turbine {} columns do not match the fitted scaler",
            ds.turbine_id
        )));
    }
    let m = ds.n_params();
    let values = ds
        .values
        .iter()
        .enumerate()
        .map(|(i, &x)| scaler.scale(i % m, x))
        .collect();
    Ok(MergedDataset { values, ..ds.clone() })
}
