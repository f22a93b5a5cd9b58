//! Conservative integration of per-node predictions: scope gating, factor
//! clamping, optional zero override, and the semantic constraint pass.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::OperatorSample;
use crate::error::{Error, Result};
use crate::quantile;
use crate::targets::DEFAULT_ROW_CEILING;
use crate::trace::{PlanNode, PlanTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    JoinOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampBounds {
    pub c_min: f64,
    pub c_max: f64,
}

impl ClampBounds {
    pub fn new(c_min: f64, c_max: f64) -> Result<Self> {
        if !(c_min > 0.0 && c_min <= 1.0 && 1.0 <= c_max && c_max.is_finite()) {
            return Err(Error::invalid(format!(
                "clamp bounds must satisfy 0 < c_min <= 1 <= c_max, got ({c_min}, {c_max})"
            )));
        }
        Ok(ClampBounds { c_min, c_max })
    }

    /// Widens a calibrated band so it always admits the identity factor.
    pub fn containing_one(low: f64, high: f64) -> Result<Self> {
        Self::new(low.min(1.0), high.max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClampCalibration {
    #[default]
    Fixed,
    ValidationQuantile { p_low: f64, p_high: f64 },
}

impl ClampCalibration {
    pub fn validate(&self) -> Result<()> {
        if let ClampCalibration::ValidationQuantile { p_low, p_high } = *self {
            if !(0.0 < p_low && p_low < p_high && p_high < 1.0) {
                return Err(Error::invalid(format!(
                    "clamp quantiles must satisfy 0 < p_low < p_high < 1, got ({p_low}, {p_high})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    pub enabled: bool,
    pub threshold: f64,
}

impl Default for TwoStage {
    fn default() -> Self {
        TwoStage {
            enabled: false,
            threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Projection output equals its input.
    #[default]
    Equal,
    /// Projection output is at most its input.
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default)]
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<ClampBounds>,
    #[serde(default)]
    pub clamp_calibration: ClampCalibration,
    #[serde(default)]
    pub two_stage: TwoStage,
    #[serde(default)]
    pub safe_inject: bool,
    #[serde(default)]
    pub projection: ProjectionRule,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clamp {
            ClampBounds::new(c.c_min, c.c_max)?;
        }
        self.clamp_calibration.validate()?;
        if !(self.two_stage.threshold > 0.0 && self.two_stage.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "two-stage threshold {} outside (0, 1)",
                self.two_stage.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Model,
    NativeFallback,
    Clamped,
    Zeroed,
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedTrace {
    pub trace: PlanTrace,
    pub corrected_rows: BTreeMap<String, f64>,
    pub applied_policy: PolicyConfig,
    pub provenance: BTreeMap<String, Provenance>,
}

impl CorrectedTrace {
    /// The trace with every `est_rows` replaced by its corrected value.
    pub fn corrected_plan(&self) -> PlanTrace {
        fn rewrite(node: &mut PlanNode, rows: &BTreeMap<String, f64>) {
            if let Some(v) = rows.get(&node.node_id) {
                node.est_rows = *v;
            }
            node.children.iter_mut().for_each(|c| rewrite(c, rows));
        }
        let mut t = self.trace.clone();
        rewrite(&mut t.root, &self.corrected_rows);
        t
    }
}

/// Composes per-node predictions (log correction factors keyed by node id)
/// into corrected row counts.
pub fn apply_policy(
    trace: &PlanTrace,
    predictions: &BTreeMap<String, f64>,
    config: &PolicyConfig,
    zero_probs: Option<&BTreeMap<String, f64>>,
) -> Result<CorrectedTrace> {
    config.validate()?;
    if config.two_stage.enabled && zero_probs.is_none() {
        return Err(Error::invalid("two-stage policy needs zero probabilities"));
    }
    let mut corrected = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for visit in trace.iter_nodes() {
        let node = visit.node;
        let id = node.node_id.clone();
        if config.scope == Scope::JoinOnly && !node.is_join() {
            corrected.insert(id.clone(), node.est_rows);
            provenance.insert(id, Provenance::NativeFallback);
            continue;
        }
        let pred = *predictions.get(&id).ok_or_else(|| Error::MissingPrediction(id.clone()))?;
        let mut factor = pred.exp();
        let mut tag = Provenance::Model;
        if let Some(c) = config.clamp {
            let bounded = factor.clamp(c.c_min, c.c_max);
            if bounded != factor {
                tag = Provenance::Clamped;
            }
            factor = bounded;
        }
        let mut rows = ((1.0 + node.est_rows) * factor - 1.0).clamp(0.0, DEFAULT_ROW_CEILING);
        if rows.is_nan() {
            rows = node.est_rows;
        }
        if config.two_stage.enabled {
            let p = *zero_probs
                .and_then(|z| z.get(&id))
                .ok_or_else(|| Error::MissingPrediction(id.clone()))?;
            if p > config.two_stage.threshold {
                rows = 0.0;
                tag = Provenance::Zeroed;
            }
        }
        corrected.insert(id.clone(), rows);
        provenance.insert(id, tag);
    }
    if config.safe_inject {
        for id in safe_inject_pass(trace, &mut corrected, config.projection) {
            provenance.insert(id, Provenance::Constrained);
        }
    }
    Ok(CorrectedTrace {
        trace: trace.clone(),
        corrected_rows: corrected,
        applied_policy: *config,
        provenance,
    })
}

/// `c_min` / `c_max` as quantiles of the true factors `(1+act)/(1+est)`.
pub fn calibrate_clamp(validation: &[OperatorSample], p_low: f64, p_high: f64) -> Result<(f64, f64)> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    ClampCalibration::ValidationQuantile { p_low, p_high }.validate()?;
    let factors: Vec<f64> = validation
        .iter()
        .map(|s| (1.0 + s.act() as f64) / (1.0 + s.est_rows))
        .collect();
    let sorted = quantile::sorted(&factors);
    Ok((
        quantile::quantile_sorted(&sorted, p_low)?,
        quantile::quantile_sorted(&sorted, p_high)?,
    ))
}

/// Constraint that applies to a node given its structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeRule {
    AtMostInput,
    AtMostLimitAndInput(Option<u64>),
    EqualInput,
    AtLeastOuter(usize),
    None,
}

fn limit_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:\blimit\s+|\bcount:\s*)(\d+)").expect("valid regex"))
}

pub fn parse_limit(info: &str) -> Option<u64> {
    limit_regex().captures(info).and_then(|c| c[1].parse().ok())
}

/// Which semantic rule governs `node`. Unary rules need exactly one child.
pub fn rule_for(node: &PlanNode, projection: ProjectionRule) -> NodeRule {
    let op = node.operator_type.as_str();
    let unary = node.children.len() == 1;
    if op == "Selection" && unary {
        return NodeRule::AtMostInput;
    }
    if (op == "Limit" || op == "TopN") && unary {
        return NodeRule::AtMostLimitAndInput(node.extra_info.as_deref().and_then(parse_limit));
    }
    if op == "Projection" && unary {
        return match projection {
            ProjectionRule::Equal => NodeRule::EqualInput,
            ProjectionRule::AtMost => NodeRule::AtMostInput,
        };
    }
    if op.contains("Agg") && unary {
        // scalar aggregates emit a row even over empty input
        let grouped = node.extra_info.as_deref().is_none_or(|i| i.contains("group by"));
        if grouped {
            return NodeRule::AtMostInput;
        }
    }
    if node.is_join() {
        let outer = matches!(node.join_type.as_deref(), Some("left outer") | Some("right outer"));
        if let (true, Some(idx)) = (outer, node.outer_child_index) {
            if idx < node.children.len() {
                return NodeRule::AtLeastOuter(idx);
            }
        }
    }
    NodeRule::None
}

/// Enforces operator semantics on corrected values, children before parents.
/// Returns the ids of nodes whose value changed.
pub fn safe_inject_pass(trace: &PlanTrace, corrected: &mut BTreeMap<String, f64>, projection: ProjectionRule) -> Vec<String> {
    fn visit(node: &PlanNode, rows: &mut BTreeMap<String, f64>, projection: ProjectionRule, changed: &mut Vec<String>) {
        for c in &node.children {
            visit(c, rows, projection, changed);
        }
        let Some(&out) = rows.get(&node.node_id) else {
            return;
        };
        let child = |i: usize| rows.get(&node.children[i].node_id).copied();
        let new = match rule_for(node, projection) {
            NodeRule::AtMostInput => child(0).map(|v| out.min(v)),
            NodeRule::AtMostLimitAndInput(limit) => child(0).map(|v| {
                let bounded = out.min(v);
                limit.map_or(bounded, |l| bounded.min(l as f64))
            }),
            NodeRule::EqualInput => child(0),
            NodeRule::AtLeastOuter(i) => child(i).map(|v| out.max(v)),
            NodeRule::None => None,
        };
        if let Some(v) = new {
            let v = v.max(0.0);
            if v != out {
                rows.insert(node.node_id.clone(), v);
                changed.push(node.node_id.clone());
            }
        }
    }
    let mut changed = Vec::new();
    visit(&trace.root, corrected, projection, &mut changed);
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceSource;

    fn t(root: PlanNode) -> PlanTrace {
        PlanTrace {
            execution_id: "e".into(),
            query_tag: None,
            source: TraceSource::ExplainOnly,
            root,
        }
    }

    fn preds(trace: &PlanTrace, v: f64) -> BTreeMap<String, f64> {
        trace.iter_nodes().iter().map(|n| (n.node.node_id.clone(), v)).collect()
    }

    fn filter_over_scan() -> PlanTrace {
        t(PlanNode::new("Selection_2", 250.0, "cop").with_children(vec![PlanNode::new("TableFullScan_1", 100.0, "cop")]))
    }

    #[test]
    fn join_only_without_joins_is_native() {
        let trace = filter_over_scan();
        let cfg = PolicyConfig {
            scope: Scope::JoinOnly,
            ..Default::default()
        };
        let out = apply_policy(&trace, &BTreeMap::new(), &cfg, None).unwrap();
        assert_eq!(out.corrected_rows["Selection_2"], 250.0);
        assert_eq!(out.corrected_rows["TableFullScan_1"], 100.0);
        assert!(out.provenance.values().all(|p| *p == Provenance::NativeFallback));
    }

    #[test]
    fn clamp_binds_at_upper_bound() {
        let trace = t(PlanNode::new("HashJoin_1", 9.0, "root"));
        let cfg = PolicyConfig {
            clamp: Some(ClampBounds::new(0.5, 2.0).unwrap()),
            ..Default::default()
        };
        let out = apply_policy(&trace, &preds(&trace, 10f64.ln()), &cfg, None).unwrap();
        assert_eq!(out.corrected_rows["HashJoin_1"], 19.0);
        assert_eq!(out.provenance["HashJoin_1"], Provenance::Clamped);
    }

    #[test]
    fn two_stage_zeroes_confident_nodes() {
        let trace = t(PlanNode::new("HashJoin_1", 9.0, "root"));
        let cfg = PolicyConfig {
            two_stage: TwoStage {
                enabled: true,
                threshold: 0.9,
            },
            ..Default::default()
        };
        let z = preds(&trace, 0.95);
        let out = apply_policy(&trace, &preds(&trace, 1.0), &cfg, Some(&z)).unwrap();
        assert_eq!(out.corrected_rows["HashJoin_1"], 0.0);
        assert_eq!(out.provenance["HashJoin_1"], Provenance::Zeroed);
        assert!(apply_policy(&trace, &preds(&trace, 1.0), &cfg, None).is_err());
    }

    #[test]
    fn missing_prediction() {
        let trace = filter_over_scan();
        let mut p = preds(&trace, 0.0);
        p.remove("TableFullScan_1");
        assert!(matches!(
            apply_policy(&trace, &p, &PolicyConfig::default(), None),
            Err(Error::MissingPrediction(id)) if id == "TableFullScan_1"
        ));
    }

    #[test]
    fn selection_bounded_by_input() {
        let trace = filter_over_scan();
        let mut rows: BTreeMap<String, f64> = [("Selection_2".into(), 250.0), ("TableFullScan_1".into(), 100.0)].into();
        let changed = safe_inject_pass(&trace, &mut rows, ProjectionRule::Equal);
        assert_eq!(rows["Selection_2"], 100.0);
        assert_eq!(changed, vec!["Selection_2".to_string()]);
    }

    #[test]
    fn projection_copies_input() {
        let trace = t(PlanNode::new("Projection_2", 5.0, "root").with_children(vec![PlanNode::new("TableFullScan_1", 100.0, "cop")]));
        let mut rows: BTreeMap<String, f64> = [("Projection_2".into(), 5.0), ("TableFullScan_1".into(), 77.0)].into();
        safe_inject_pass(&trace, &mut rows, ProjectionRule::Equal);
        assert_eq!(rows["Projection_2"], 77.0);
        let mut rows: BTreeMap<String, f64> = [("Projection_2".into(), 5.0), ("TableFullScan_1".into(), 77.0)].into();
        safe_inject_pass(&trace, &mut rows, ProjectionRule::AtMost);
        assert_eq!(rows["Projection_2"], 5.0);
    }

    #[test]
    fn left_outer_join_at_least_outer_side() {
        let mut join = PlanNode::new("HashJoin_3", 200.0, "root").with_children(vec![
            PlanNode::new("TableFullScan_1", 500.0, "cop"),
            PlanNode::new("TableFullScan_2", 10.0, "cop"),
        ]);
        join.join_type = Some("left outer".into());
        join.outer_child_index = Some(0);
        let trace = t(join);
        let mut rows = preds(&trace, 0.0);
        rows.insert("HashJoin_3".into(), 200.0);
        rows.insert("TableFullScan_1".into(), 500.0);
        safe_inject_pass(&trace, &mut rows, ProjectionRule::Equal);
        assert_eq!(rows["HashJoin_3"], 500.0);

        // without the outer index the rule is skipped
        let mut t2 = trace.clone();
        t2.root.outer_child_index = None;
        let mut rows2 = rows.clone();
        rows2.insert("HashJoin_3".into(), 200.0);
        safe_inject_pass(&t2, &mut rows2, ProjectionRule::Equal);
        assert_eq!(rows2["HashJoin_3"], 200.0);
    }

    #[test]
    fn limit_uses_parsed_count() {
        let mut limit = PlanNode::new("Limit_2", 50.0, "root").with_children(vec![PlanNode::new("TableFullScan_1", 100.0, "cop")]);
        limit.extra_info = Some("offset:0, count:10".into());
        let trace = t(limit);
        let mut rows: BTreeMap<String, f64> = [("Limit_2".into(), 50.0), ("TableFullScan_1".into(), 100.0)].into();
        safe_inject_pass(&trace, &mut rows, ProjectionRule::Equal);
        assert_eq!(rows["Limit_2"], 10.0);
        assert_eq!(parse_limit("limit 7"), Some(7));
        assert_eq!(parse_limit("keep order:false"), None);
    }

    #[test]
    fn scalar_aggregate_is_not_bounded() {
        let mut agg = PlanNode::new("StreamAgg_2", 1.0, "root").with_children(vec![PlanNode::new("TableFullScan_1", 0.0, "cop")]);
        agg.extra_info = Some("funcs:count(1)->Column#3".into());
        assert_eq!(rule_for(&agg, ProjectionRule::Equal), NodeRule::None);
        agg.extra_info = Some("group by:test.t.a, funcs:count(1)".into());
        assert_eq!(rule_for(&agg, ProjectionRule::Equal), NodeRule::AtMostInput);
    }

    #[test]
    fn calibrated_band() {
        assert!(matches!(calibrate_clamp(&[], 0.01, 0.99), Err(Error::EmptyValidation)));
        assert!(ClampBounds::new(1.5, 2.0).is_err());
        let b = ClampBounds::containing_one(1.5, 2.0).unwrap();
        assert_eq!((b.c_min, b.c_max), (1.0, 2.0));
    }
}
