//! Order-statistic helpers shared by the clipping, clamping and reporting code.
//!
//! Every quantile in the crate uses linear interpolation between order
//! statistics (the "type 7" convention): for sorted `x[0..n]` and probability
//! `p`, `h = (n - 1) * p` and the result is `x[floor(h)] + (h - floor(h)) *
//! (x[floor(h) + 1] - x[floor(h)])`.

use crate::error::{Error, Result};

/// Sorts a copy of `values` with a total order (NaN last).
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile probability {p} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    quantile_sorted(&sorted(values), p)
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_min_and_max() {
        let v = [5.0, 1.0, 3.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert_eq!(median(&v).unwrap(), 3.0);
    }

    #[test]
    fn interpolates_between_order_statistics() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile(&v, 0.9).unwrap() - 90.1).abs() < 1e-12);
        assert!((median(&[1.0, 2.0]).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn empty_and_bad_probability_are_errors() {
        assert!(matches!(quantile(&[], 0.5), Err(Error::Empty)));
        assert!(quantile(&[1.0], 1.5).is_err());
    }
}
