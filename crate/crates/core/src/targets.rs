//! Training targets and their inverse.
//!
//! Correction mode learns `ln((1 + act) / (1 + est))`, the log of the factor
//! that maps the shifted native estimate onto the shifted truth. Direct mode
//! learns `ln(1 + act)` and ignores the native estimate as a prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile;

/// Upper bound on any corrected row count.
pub const DEFAULT_ROW_CEILING: f64 = 1e15;

pub const IQR_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    #[default]
    Correction,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub low: f64,
    pub high: f64,
}

impl ClipRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low <= high) {
            return Err(Error::invalid(format!("clip range low {low} > high {high}")));
        }
        Ok(ClipRange { low, high })
    }

    pub fn apply(&self, y: f64) -> f64 {
        y.clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetSpec {
    pub mode: TargetMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipRange>,
}

pub fn make_target(est: f64, act: u64, mode: TargetMode) -> f64 {
    let act = act as f64;
    match mode {
        TargetMode::Correction => act.ln_1p() - est.ln_1p(),
        TargetMode::Direct => act.ln_1p(),
    }
}

/// Tukey fences `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]` over the training targets.
pub fn fit_clip_range(train_targets: &[f64]) -> Result<ClipRange> {
    let sorted = quantile::sorted(train_targets);
    let q1 = quantile::quantile_sorted(&sorted, 0.25)?;
    let q3 = quantile::quantile_sorted(&sorted, 0.75)?;
    let iqr = q3 - q1;
    ClipRange::new(q1 - IQR_MULTIPLIER * iqr, q3 + IQR_MULTIPLIER * iqr)
}

/// Maps a prediction back to a row count, floored at 0 and capped at `ceiling`.
pub fn invert_with_ceiling(prediction: f64, est: f64, mode: TargetMode, ceiling: f64) -> f64 {
    let rows = match mode {
        TargetMode::Correction => (1.0 + est) * prediction.exp() - 1.0,
        TargetMode::Direct => prediction.exp_m1(),
    };
    if rows.is_nan() {
        return 0.0;
    }
    rows.clamp(0.0, ceiling)
}

pub fn invert(prediction: f64, est: f64, mode: TargetMode) -> f64 {
    invert_with_ceiling(prediction, est, mode, DEFAULT_ROW_CEILING)
}

/// Re-expresses any row-count prediction as a log correction factor over `est`.
pub fn rows_to_correction(rows: f64, est: f64) -> f64 {
    rows.max(0.0).ln_1p() - est.ln_1p()
}
