//! Q-error metrics and evaluation reports.
//!
//! Percentiles use linear interpolation between order statistics (see
//! [`crate::quantile`]). Heavy-tailed Q-error distributions make P90/P99
//! sensitive to that convention, so numbers from other tools may differ
//! beyond rounding.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile;
use crate::trace::{GroupMapping, OperatorGroup, PlanTrace};

/// Corrected rows per execution id, then per node id.
pub type CorrectedRows = BTreeMap<String, BTreeMap<String, f64>>;

/// `max(a/e, e/a)` after flooring both at one row.
pub fn qerror(est: f64, act: f64) -> f64 {
    let e = est.max(1.0);
    let a = act.max(1.0);
    (a / e).max(e / a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QErrorStats {
    pub median: f64,
    pub mean: f64,
    pub p90: f64,
    pub p99: f64,
    pub n: usize,
}

pub fn stats(qerrors: &[f64]) -> Result<QErrorStats> {
    if qerrors.is_empty() {
        return Err(Error::Empty);
    }
    let s = quantile::sorted(qerrors);
    Ok(QErrorStats {
        median: quantile::quantile_sorted(&s, 0.5)?,
        mean: quantile::mean(&s)?,
        p90: quantile::quantile_sorted(&s, 0.9)?,
        p99: quantile::quantile_sorted(&s, 0.99)?,
        n: s.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Excellent,
    Good,
    Fair,
    Poor,
    Terrible,
}

impl Band {
    /// Upper edges are inclusive: 2 is Excellent, 100 is Poor.
    pub fn of(q: f64) -> Band {
        if q <= 2.0 {
            Band::Excellent
        } else if q <= 5.0 {
            Band::Good
        } else if q <= 10.0 {
            Band::Fair
        } else if q <= 100.0 {
            Band::Poor
        } else {
            Band::Terrible
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDistribution {
    pub excellent: f64,
    pub good: f64,
    pub fair: f64,
    pub poor: f64,
    pub terrible: f64,
}

impl BandDistribution {
    pub fn shares(&self) -> [f64; 5] {
        [self.excellent, self.good, self.fair, self.poor, self.terrible]
    }
}

pub fn bands(qerrors: &[f64]) -> Result<BandDistribution> {
    if qerrors.is_empty() {
        return Err(Error::Empty);
    }
    let mut counts = [0usize; 5];
    for &q in qerrors {
        counts[Band::of(q) as usize] += 1;
    }
    let n = qerrors.len() as f64;
    let share = |i: usize| counts[i] as f64 / n;
    Ok(BandDistribution {
        excellent: share(0),
        good: share(1),
        fair: share(2),
        poor: share(3),
        terrible: share(4),
    })
}

/// Sorted `(q, rank / n)` pairs with 1-based ranks.
pub fn cdf(qerrors: &[f64]) -> Vec<(f64, f64)> {
    let s = quantile::sorted(qerrors);
    let n = s.len() as f64;
    s.into_iter().enumerate().map(|(i, q)| (q, (i + 1) as f64 / n)).collect()
}

fn node_qerror(exec: &str, node_id: &str, act: Option<u64>, corrected: &CorrectedRows) -> Result<f64> {
    let act = act.ok_or_else(|| Error::SchemaViolation {
        execution_id: exec.to_string(),
        field: "act_rows".into(),
        reason: format!("node {node_id:?} is unlabeled"),
    })?;
    let v = corrected
        .get(exec)
        .and_then(|m| m.get(node_id))
        .ok_or_else(|| Error::MissingPrediction(format!("{exec}/{node_id}")))?;
    Ok(qerror(*v, act as f64))
}

/// The native estimates of `traces` in [`CorrectedRows`] form.
pub fn native_rows(traces: &[&PlanTrace]) -> CorrectedRows {
    traces
        .iter()
        .map(|t| {
            let rows = t
                .iter_nodes()
                .iter()
                .map(|v| (v.node.node_id.clone(), v.node.est_rows))
                .collect();
            (t.execution_id.clone(), rows)
        })
        .collect()
}

/// Q-error of every node, in trace then pre-order.
pub fn node_qerrors(traces: &[&PlanTrace], corrected: &CorrectedRows) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for t in traces {
        for v in t.iter_nodes() {
            out.push(node_qerror(&t.execution_id, &v.node.node_id, v.node.act_rows, corrected)?);
        }
    }
    Ok(out)
}

/// Stats per coarse operator group; groups without samples are omitted.
pub fn per_group_stats(
    traces: &[&PlanTrace],
    corrected: &CorrectedRows,
    groups: &GroupMapping,
) -> Result<BTreeMap<OperatorGroup, QErrorStats>> {
    let mut by_group: BTreeMap<OperatorGroup, Vec<f64>> = BTreeMap::new();
    for t in traces {
        for v in t.iter_nodes() {
            let q = node_qerror(&t.execution_id, &v.node.node_id, v.node.act_rows, corrected)?;
            by_group.entry(groups.group_of(&v.node.operator_type)).or_default().push(q);
        }
    }
    by_group.into_iter().map(|(g, qs)| Ok((g, stats(&qs)?))).collect()
}

/// One Q-error per execution, at the root operator.
pub fn root_node_stats(traces: &[&PlanTrace], corrected: &CorrectedRows) -> Result<QErrorStats> {
    let qs = traces
        .iter()
        .map(|t| node_qerror(&t.execution_id, &t.root.node_id, t.root.act_rows, corrected))
        .collect::<Result<Vec<_>>>()?;
    stats(&qs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub max_operator: QErrorStats,
    /// Absent when no execution contains a join.
    pub max_join: Option<QErrorStats>,
}

/// Per-execution maximum over all operators and over join operators.
pub fn query_worst_case(traces: &[&PlanTrace], corrected: &CorrectedRows) -> Result<WorstCase> {
    let mut max_op = Vec::with_capacity(traces.len());
    let mut max_join = Vec::new();
    for t in traces {
        let mut worst = 1.0f64;
        let mut worst_join: Option<f64> = None;
        for v in t.iter_nodes() {
            let q = node_qerror(&t.execution_id, &v.node.node_id, v.node.act_rows, corrected)?;
            worst = worst.max(q);
            if v.node.is_join() {
                worst_join = Some(worst_join.map_or(q, |w| w.max(q)));
            }
        }
        max_op.push(worst);
        max_join.extend(worst_join);
    }
    Ok(WorstCase {
        max_operator: stats(&max_op)?,
        max_join: if max_join.is_empty() { None } else { Some(stats(&max_join)?) },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub median: f64,
    pub mean: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Native metric divided by model metric, per statistic.
pub fn improvement(native: &QErrorStats, model: &QErrorStats) -> Improvement {
    Improvement {
        median: native.median / model.median,
        mean: native.mean / model.mean,
        p90: native.p90 / model.p90,
        p99: native.p99 / model.p99,
    }
}

/// `22.85` becomes `"22.9×"`.
pub fn format_factor(f: f64) -> String {
    format!("{f:.1}×")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub setup_seconds: f64,
    pub inference_seconds: f64,
    pub n_samples: usize,
    /// `None` when there were no samples or the clock did not advance.
    pub samples_per_sec: Option<f64>,
    pub per_node_ms: Option<f64>,
}

impl TimingReport {
    pub fn new(setup_seconds: f64, inference_seconds: f64, n_samples: usize) -> Self {
        let rate = (n_samples > 0 && inference_seconds > 0.0).then(|| n_samples as f64 / inference_seconds);
        TimingReport {
            setup_seconds,
            inference_seconds,
            n_samples,
            samples_per_sec: rate,
            per_node_ms: (n_samples > 0).then(|| inference_seconds * 1e3 / n_samples as f64),
        }
    }

    /// Estimated inference overhead for a plan of `nodes` operators.
    pub fn plan_overhead_ms(&self, nodes: usize) -> Option<f64> {
        self.per_node_ms.map(|ms| ms * nodes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub stats: QErrorStats,
    pub bands: BandDistribution,
    pub per_group: BTreeMap<OperatorGroup, QErrorStats>,
    pub root: QErrorStats,
    pub worst_case: WorstCase,
    pub improvement: Improvement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingReport>,
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_executions: usize,
    pub n_samples: usize,
    /// Native estimates first, then each requested model.
    pub models: Vec<ModelReport>,
}

/// Builds the full report for one model's corrected rows.
pub fn evaluate(
    name: &str,
    traces: &[&PlanTrace],
    corrected: &CorrectedRows,
    native: Option<&QErrorStats>,
    groups: &GroupMapping,
    timing: Option<TimingReport>,
) -> Result<ModelReport> {
    let qs = node_qerrors(traces, corrected)?;
    let s = stats(&qs)?;
    let native = native.copied().unwrap_or(s);
    Ok(ModelReport {
        name: name.to_string(),
        stats: s,
        bands: bands(&qs)?,
        per_group: per_group_stats(traces, corrected, groups)?,
        root: root_node_stats(traces, corrected)?,
        worst_case: query_worst_case(traces, corrected)?,
        improvement: improvement(&native, &s),
        timing,
        cdf: cdf(&qs),
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    f(&mut w).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    /// Writes the flat CSV tables into `dir`; returns the file names.
    pub fn write_csv_tables(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>| -> Result<()> {
            write_file(&dir.join(name), f)?;
            written.push(name.to_string());
            Ok(())
        };
        emit("qerror_stats.csv", &|w| {
            w.write_record(["model", "p90", "p99", "median", "mean", "n"])?;
            for m in &self.models {
                let s = &m.stats;
                w.write_record([m.name.clone(), num(s.p90), num(s.p99), num(s.median), num(s.mean), s.n.to_string()])?;
            }
            Ok(())
        })?;
        emit("bands.csv", &|w| {
            w.write_record(["model", "excellent", "good", "fair", "poor", "terrible"])?;
            for m in &self.models {
                let mut rec = vec![m.name.clone()];
                rec.extend(m.bands.shares().iter().map(|&v| num(v)));
                w.write_record(rec)?;
            }
            Ok(())
        })?;
        emit("improvement.csv", &|w| {
            w.write_record(["model", "p90", "p99", "mean", "median"])?;
            for m in &self.models {
                let i = &m.improvement;
                w.write_record([
                    m.name.clone(),
                    format_factor(i.p90),
                    format_factor(i.p99),
                    format_factor(i.mean),
                    format_factor(i.median),
                ])?;
            }
            Ok(())
        })?;
        emit("per_group.csv", &|w| {
            w.write_record(["model", "group", "p90", "p99", "n"])?;
            for m in &self.models {
                for (g, s) in &m.per_group {
                    w.write_record([m.name.clone(), g.to_string(), num(s.p90), num(s.p99), s.n.to_string()])?;
                }
            }
            Ok(())
        })?;
        emit("root_node.csv", &|w| {
            w.write_record(["model", "median", "mean", "p90", "p99", "n"])?;
            for m in &self.models {
                let s = &m.root;
                w.write_record([m.name.clone(), num(s.median), num(s.mean), num(s.p90), num(s.p99), s.n.to_string()])?;
            }
            Ok(())
        })?;
        emit("query_worst_case.csv", &|w| {
            w.write_record(["model", "metric", "median", "p90", "p99", "n"])?;
            for m in &self.models {
                let rows = [("max_operator", Some(m.worst_case.max_operator)), ("max_join", m.worst_case.max_join)];
                for (metric, s) in rows {
                    if let Some(s) = s {
                        w.write_record([m.name.clone(), metric.into(), num(s.median), num(s.p90), num(s.p99), s.n.to_string()])?;
                    }
                }
            }
            Ok(())
        })?;
        emit("timing.csv", &|w| {
            w.write_record(["model", "setup_seconds", "inference_seconds", "samples_per_sec", "plan50_overhead_ms"])?;
            for m in &self.models {
                if let Some(t) = &m.timing {
                    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
                    w.write_record([
                        m.name.clone(),
                        num(t.setup_seconds),
                        num(t.inference_seconds),
                        opt(t.samples_per_sec),
                        opt(t.plan_overhead_ms(50)),
                    ])?;
                }
            }
            Ok(())
        })?;
        emit("cdf.csv", &|w| {
            w.write_record(["model", "qerror", "fraction"])?;
            for m in &self.models {
                for (q, f) in &m.cdf {
                    w.write_record([m.name.clone(), num(*q), num(*f)])?;
                }
            }
            Ok(())
        })?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{PlanNode, TraceSource};
    use proptest::prelude::*;

    #[test]
    fn qerror_examples() {
        assert_eq!(qerror(100.0, 100.0), 1.0);
        assert_eq!(qerror(10.0, 1000.0), 100.0);
        assert_eq!(qerror(0.0, 5.0), 5.0);
        assert_eq!(qerror(0.0, 0.0), 1.0);
    }

    #[test]
    fn stats_examples() {
        let s = stats(&[1.0; 9]).unwrap();
        assert_eq!((s.median, s.mean, s.p90, s.p99), (1.0, 1.0, 1.0, 1.0));
        let s = stats(&[7.5]).unwrap();
        assert_eq!((s.median, s.mean, s.p90, s.p99, s.n), (7.5, 7.5, 7.5, 7.5, 1));
        assert!(matches!(stats(&[]), Err(Error::Empty)));
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(Band::of(2.0), Band::Excellent);
        assert_eq!(Band::of(5.0), Band::Good);
        assert_eq!(Band::of(10.0), Band::Fair);
        assert_eq!(Band::of(100.0), Band::Poor);
        assert_eq!(Band::of(100.0001), Band::Terrible);
        let b = bands(&[1.0, 3.0, 7.0, 50.0, 200.0]).unwrap();
        assert_eq!(b.shares(), [0.2; 5]);
    }

    #[test]
    fn improvement_formatting() {
        let native = QErrorStats {
            median: 1.0030,
            mean: 3045.79,
            p90: 312.85,
            p99: 37974.37,
            n: 1189,
        };
        let gbr = QErrorStats {
            median: 1.3158,
            mean: 122.03,
            p90: 13.69,
            p99: 3812.02,
            n: 1189,
        };
        let i = improvement(&native, &gbr);
        assert_eq!(format_factor(i.p90), "22.9×");
        assert_eq!(format_factor(i.mean), "25.0×");
        let same = improvement(&native, &native);
        assert_eq!((same.median, same.mean, same.p90, same.p99), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn timing_edge_cases() {
        let t = TimingReport::new(0.1, 0.0, 0);
        assert_eq!(t.samples_per_sec, None);
        assert_eq!(t.plan_overhead_ms(50), None);
        let t = TimingReport::new(0.65, 0.0022, 1189);
        let rate = t.samples_per_sec.unwrap();
        assert!(rate > 5.0e5 && rate < 6.0e5);
        assert!((t.plan_overhead_ms(50).unwrap() - 50.0 * t.per_node_ms.unwrap()).abs() < 1e-12);
    }

    fn labeled(id: &str, root: PlanNode) -> PlanTrace {
        PlanTrace {
            execution_id: id.into(),
            query_tag: None,
            source: TraceSource::ExplainAnalyze,
            root,
        }
    }

    #[test]
    fn worst_case_excludes_join_free_executions() {
        let a = labeled(
            "a",
            PlanNode::new("HashJoin_1", 10.0, "root")
                .with_act(10)
                .with_children(vec![PlanNode::new("TableFullScan_2", 1.0, "cop").with_act(500)]),
        );
        let b = labeled("b", PlanNode::new("TableFullScan_1", 4.0, "cop").with_act(4));
        let traces = [&a, &b];
        let native = native_rows(&traces);
        let w = query_worst_case(&traces, &native).unwrap();
        assert_eq!(w.max_operator.n, 2);
        assert_eq!(w.max_operator.p99, 500.0 - (500.0 - 1.0) * 0.01);
        let j = w.max_join.unwrap();
        assert_eq!((j.n, j.median), (1, 1.0));
        let groups = per_group_stats(&traces, &native, &GroupMapping::default()).unwrap();
        assert_eq!(groups.keys().copied().collect::<Vec<_>>(), vec![OperatorGroup::Join, OperatorGroup::Scan]);
        assert_eq!(groups.values().map(|s| s.n).sum::<usize>(), 3);
    }

    proptest! {
        #[test]
        fn qerror_symmetric(e in 0.0f64..1e9, a in 0.0f64..1e9) {
            prop_assert_eq!(qerror(e, a), qerror(a, e));
            prop_assert!(qerror(e, a) >= 1.0);
        }

        #[test]
        fn qerror_scale_invariant_above_guard(e in 1.0f64..1e6, a in 1.0f64..1e6, c in 1.0f64..1e3) {
            let lhs = qerror(c * e, c * a);
            prop_assert!((lhs - qerror(e, a)).abs() <= 1e-9 * lhs);
        }

        #[test]
        fn stats_permutation_invariant(mut v in prop::collection::vec(1.0f64..1e4, 1..60), seed in any::<u64>()) {
            let a = stats(&v).unwrap();
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = stats(&v).unwrap();
            prop_assert_eq!(a.median, b.median);
            prop_assert_eq!(a.p90, b.p90);
            prop_assert_eq!(a.p99, b.p99);
            prop_assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean);
        }

        #[test]
        fn bands_partition(v in prop::collection::vec(1.0f64..1e4, 1..100)) {
            let b = bands(&v).unwrap();
            prop_assert!((b.shares().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
