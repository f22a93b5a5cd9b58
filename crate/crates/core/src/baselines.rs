//! Calibration baselines keyed on operator attributes. All three map a
//! sample straight to a corrected row count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::OperatorSample;
use crate::error::{Error, Result};
use crate::quantile;

fn require_nonempty(samples: &[OperatorSample]) -> Result<()> {
    if samples.is_empty() {
        Err(Error::EmptyTraining)
    } else {
        Ok(())
    }
}

fn log_rows(v: f64) -> f64 {
    v.max(0.0).ln_1p()
}

fn from_log(v: f64) -> f64 {
    v.exp_m1().max(0.0)
}

/// Median `(1 + act) / (1 + est)` per operator type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScaleModel {
    pub factor_by_group: BTreeMap<String, f64>,
    pub global_factor: f64,
}

impl GroupScaleModel {
    pub fn fit(samples: &[OperatorSample]) -> Result<Self> {
        require_nonempty(samples)?;
        let factor = |s: &OperatorSample| (1.0 + s.act() as f64) / (1.0 + s.est_rows);
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in samples {
            groups.entry(s.operator_type().to_string()).or_default().push(factor(s));
        }
        let all: Vec<f64> = samples.iter().map(factor).collect();
        Ok(GroupScaleModel {
            factor_by_group: groups
                .into_iter()
                .map(|(k, v)| (k, quantile::median(&v).expect("group is nonempty")))
                .collect(),
            global_factor: quantile::median(&all)?,
        })
    }

    pub fn factor_for(&self, operator_type: &str) -> f64 {
        self.factor_by_group.get(operator_type).copied().unwrap_or(self.global_factor)
    }

    pub fn predict(&self, s: &OperatorSample) -> f64 {
        ((1.0 + s.est_rows) * self.factor_for(s.operator_type()) - 1.0).max(0.0)
    }
}

/// Non-decreasing step function: `levels[i]` applies from `breakpoints[i]`
/// up to the next breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= x);
        self.levels[i.saturating_sub(1)]
    }
}

/// Least-squares isotonic (non-decreasing) fit via pool-adjacent-violators.
/// Points sharing an x are averaged first, so each distinct x gets one level.
pub fn isotonic_fit(xs: &[f64], ys: &[f64]) -> Result<StepFunction> {
    if xs.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if xs.len() != ys.len() {
        return Err(Error::invalid("isotonic fit: x and y lengths differ"));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));

    // (x, sum_y, weight) per distinct x
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for i in order {
        match points.last_mut() {
            Some(p) if p.0 == xs[i] => {
                p.1 += ys[i];
                p.2 += 1.0;
            }
            _ => points.push((xs[i], ys[i], 1.0)),
        }
    }

    // blocks of (sum_y, weight, number of distinct points)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for &(_, sy, w) in &points {
        blocks.push((sy, w, 1));
        while blocks.len() > 1 {
            let (s2, w2, c2) = blocks[blocks.len() - 1];
            let (s1, w1, c1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("len > 1") = (s1 + s2, w1 + w2, c1 + c2);
        }
    }
    let mut levels = Vec::with_capacity(points.len());
    for (s, w, c) in blocks {
        levels.extend(std::iter::repeat_n(s / w, c));
    }
    Ok(StepFunction {
        breakpoints: points.iter().map(|p| p.0).collect(),
        levels,
    })
}

/// Per operator type isotonic map from `ln(1+est)` to `ln(1+act)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub groups: BTreeMap<String, StepFunction>,
    pub global: StepFunction,
}

impl IsotonicModel {
    pub fn fit(samples: &[OperatorSample]) -> Result<Self> {
        require_nonempty(samples)?;
        let mut by_group: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for s in samples {
            let e = by_group.entry(s.operator_type().to_string()).or_default();
            e.0.push(log_rows(s.est_rows));
            e.1.push(log_rows(s.act() as f64));
        }
        let xs: Vec<f64> = samples.iter().map(|s| log_rows(s.est_rows)).collect();
        let ys: Vec<f64> = samples.iter().map(|s| log_rows(s.act() as f64)).collect();
        let mut groups = BTreeMap::new();
        for (k, (x, y)) in by_group {
            groups.insert(k, isotonic_fit(&x, &y)?);
        }
        Ok(IsotonicModel {
            groups,
            global: isotonic_fit(&xs, &ys)?,
        })
    }

    pub fn predict(&self, s: &OperatorSample) -> f64 {
        let f = self.groups.get(s.operator_type()).unwrap_or(&self.global);
        from_log(f.eval(log_rows(s.est_rows)))
    }
}

/// `y = slope * x + intercept` in log-rows space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub support: usize,
}

/// Ordinary least squares; a degenerate x spread falls back to the mean.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    LineFit {
        slope,
        intercept: my - slope * mx,
        support: xs.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternLevel {
    OperatorTableJoin,
    OperatorTable,
    Operator,
    Global,
}

/// Local log-space lines keyed by (operator, table, join type) with
/// hierarchical fallback down to a single global line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteCardModel {
    pub min_support: usize,
    pub by_operator_table_join: BTreeMap<String, LineFit>,
    pub by_operator_table: BTreeMap<String, LineFit>,
    pub by_operator: BTreeMap<String, LineFit>,
    pub global: LineFit,
}

pub const DEFAULT_MIN_SUPPORT: usize = 5;

/// (x, y) points per pattern key.
type KeyedPoints = BTreeMap<String, (Vec<f64>, Vec<f64>)>;

fn keys(s: &OperatorSample) -> [String; 3] {
    let (op, table, join) = (s.operator_type(), s.table_name(), s.join_type());
    [format!("{op}|{table}|{join}"), format!("{op}|{table}"), op.to_string()]
}

impl LiteCardModel {
    pub fn fit(samples: &[OperatorSample], min_support: usize) -> Result<Self> {
        require_nonempty(samples)?;
        if min_support < 2 {
            return Err(Error::invalid("min_support must be at least 2"));
        }
        let mut levels: [KeyedPoints; 3] = Default::default();
        for s in samples {
            let (x, y) = (log_rows(s.est_rows), log_rows(s.act() as f64));
            for (level, key) in levels.iter_mut().zip(keys(s)) {
                let e = level.entry(key).or_default();
                e.0.push(x);
                e.1.push(y);
            }
        }
        let fit_level = |m: KeyedPoints| -> BTreeMap<String, LineFit> {
            m.into_iter()
                .filter(|(_, (x, _))| x.len() >= min_support)
                .map(|(k, (x, y))| (k, fit_line(&x, &y)))
                .collect()
        };
        let [a, b, c] = levels;
        let xs: Vec<f64> = samples.iter().map(|s| log_rows(s.est_rows)).collect();
        let ys: Vec<f64> = samples.iter().map(|s| log_rows(s.act() as f64)).collect();
        Ok(LiteCardModel {
            min_support,
            by_operator_table_join: fit_level(a),
            by_operator_table: fit_level(b),
            by_operator: fit_level(c),
            global: fit_line(&xs, &ys),
        })
    }

    /// The most specific line available for `s`.
    pub fn resolve(&self, s: &OperatorSample) -> (PatternLevel, LineFit) {
        let [k1, k2, k3] = keys(s);
        if let Some(f) = self.by_operator_table_join.get(&k1) {
            return (PatternLevel::OperatorTableJoin, *f);
        }
        if let Some(f) = self.by_operator_table.get(&k2) {
            return (PatternLevel::OperatorTable, *f);
        }
        if let Some(f) = self.by_operator.get(&k3) {
            return (PatternLevel::Operator, *f);
        }
        (PatternLevel::Global, self.global)
    }

    pub fn predict(&self, s: &OperatorSample) -> f64 {
        let (_, f) = self.resolve(s);
        from_log(f.slope * log_rows(s.est_rows) + f.intercept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::extract_raw_features;
    use crate::trace::{GroupMapping, PlanNode, PlanTrace, TraceSource};

    fn sample(op: &str, table: Option<&str>, est: f64, act: u64) -> OperatorSample {
        let mut node = PlanNode::new(format!("{op}_1"), est, "root").with_act(act);
        node.table_name = table.map(str::to_string);
        let t = PlanTrace {
            execution_id: "e".into(),
            query_tag: None,
            source: TraceSource::ExplainAnalyze,
            root: node,
        };
        extract_raw_features(&t, &GroupMapping::default()).remove(0)
    }

    #[test]
    fn group_scale_recovers_consistent_factor() {
        // act = 2 est + 1 means (1+act)/(1+est) = 2 on every row
        let rows: Vec<_> = [0.0, 3.0, 10.0, 50.0, 99.0]
            .iter()
            .map(|&e| sample("HashJoin", None, e, (2.0 * e + 1.0) as u64))
            .collect();
        let m = GroupScaleModel::fit(&rows).unwrap();
        assert_eq!(m.factor_for("HashJoin"), 2.0);
        for s in &rows {
            assert_eq!(m.predict(s), s.act() as f64);
        }
    }

    #[test]
    fn group_scale_fallback_and_identity() {
        let rows: Vec<_> = [1.0, 5.0, 9.0].iter().map(|&e| sample("Selection", None, e, e as u64)).collect();
        let m = GroupScaleModel::fit(&rows).unwrap();
        assert_eq!(m.global_factor, 1.0);
        let unseen = sample("Limit", None, 7.0, 1);
        assert_eq!(m.predict(&unseen), 7.0);
        assert!(matches!(GroupScaleModel::fit(&[]), Err(Error::EmptyTraining)));
    }

    #[test]
    fn pava_identity_on_monotone_data() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.5, 0.5, 2.0, 7.0];
        let f = isotonic_fit(&xs, &ys).unwrap();
        assert_eq!(f.levels, ys.to_vec());
    }

    #[test]
    fn pava_pools_single_violator() {
        let f = isotonic_fit(&[1.0, 2.0], &[5.0, 1.0]).unwrap();
        assert_eq!(f.levels, vec![3.0, 3.0]);
    }

    #[test]
    fn pava_ties_are_averaged_and_eval_clamps() {
        let f = isotonic_fit(&[2.0, 1.0, 2.0], &[4.0, 0.0, 6.0]).unwrap();
        assert_eq!(f.breakpoints, vec![1.0, 2.0]);
        assert_eq!(f.levels, vec![0.0, 5.0]);
        assert_eq!(f.eval(-10.0), 0.0);
        assert_eq!(f.eval(1.5), 0.0);
        assert_eq!(f.eval(2.0), 5.0);
        assert_eq!(f.eval(100.0), 5.0);
    }

    #[test]
    fn isotonic_model_is_monotone_per_group() {
        let rows: Vec<_> = [(1.0, 9), (5.0, 2), (9.0, 30), (20.0, 3), (40.0, 100)]
            .iter()
            .map(|&(e, a)| sample("HashAgg", None, e, a))
            .collect();
        let m = IsotonicModel::fit(&rows).unwrap();
        let levels = &m.groups["HashAgg"].levels;
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn litecard_exact_on_collinear_key() {
        // ln(1+act) = 2 ln(1+est) exactly when 1+act = (1+est)^2
        let rows: Vec<_> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&e: &f64| sample("HashJoin", Some("t"), e, ((1.0 + e).powi(2) - 1.0) as u64))
            .collect();
        let m = LiteCardModel::fit(&rows, 5).unwrap();
        let (level, fit) = m.resolve(&rows[0]);
        assert_eq!(level, PatternLevel::OperatorTableJoin);
        assert!((fit.slope - 2.0).abs() < 1e-12 && fit.intercept.abs() < 1e-12);
        for s in &rows {
            assert!((m.predict(s) - s.act() as f64).abs() < 1e-9 * (1.0 + s.act() as f64));
        }
    }

    #[test]
    fn litecard_falls_back_to_operator_key() {
        let mut rows: Vec<_> = (0..5).map(|i| sample("Selection", Some("a"), i as f64, i)).collect();
        rows.push(sample("Selection", Some("b"), 3.0, 3));
        let m = LiteCardModel::fit(&rows, 5).unwrap();
        assert_eq!(m.resolve(&rows[5]).0, PatternLevel::Operator);
        assert_eq!(m.resolve(&sample("Limit", None, 1.0, 1)).0, PatternLevel::Global);
        assert!(LiteCardModel::fit(&rows, 1).is_err());
    }
}
