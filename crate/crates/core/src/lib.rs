//! Alarm forecasting and classification for wind-turbine SCADA data.
//!
//! The pipeline runs in two stages. A stacked LSTM regressor looks at a
//! two-hour window of scaled SCADA parameters and forecasts whether an alarm
//! is active 10 to 30 minutes after the window ends. Every window it flags is
//! then handed to three alarm-code classifiers (k-nearest neighbours, a CART
//! decision tree and a random forest); the classifier with the best recall is
//! kept, and the final score is corrected for false-positive forecasts.
//!
//! Modules follow the data flow:
//!
//! - [`ingest`]: SCADA / alarm-log parsing, alarm re-tagging, merging.
//! - [`preprocess`]: NaN-based parameter retention, imputation, min-max scaling.
//! - [`windowing`]: stride-1 sliding windows with a forecast offset.
//! - [`regressor`]: the LSTM stack, BPTT training and gradient checking.
//! - [`classify`]: KNN, decision tree, random forest and recall-based selection.
//! - [`evaluate`]: contingency counts, metrics, FPAF correction, reports.
//! - [`synth`]: synthetic multi-turbine data with planted alarm precursors.
//! - [`pipeline`]: configuration and the staged end-to-end driver.

pub mod classify;
pub mod config;
mod error;
pub mod evaluate;
pub mod ingest;
pub mod pipeline;
pub mod preprocess;
pub mod regressor;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};

/// Nominal SCADA sampling interval in seconds (10 minutes).
pub const ROW_SECONDS: i64 = 600;
