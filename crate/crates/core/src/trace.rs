//! Plan-trace data model and the canonical JSON corpus format.
//!
//! A [`PlanTrace`] is one executed (or merely explained) query: an operator
//! tree where every node carries the optimizer's row estimate and, for
//! `EXPLAIN ANALYZE` captures, the observed row count.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    #[serde(rename = "id")]
    pub node_id: String,
    #[serde(rename = "op")]
    pub operator_type: String,
    pub est_rows: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_rows: Option<u64>,
    #[serde(rename = "task")]
    pub task_type: String,
    #[serde(rename = "table", default, skip_serializing_if = "Option::is_none")]
    pub table_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join_type: Option<String>,
    #[serde(rename = "info", default, skip_serializing_if = "Option::is_none")]
    pub extra_info: Option<String>,
    #[serde(rename = "outer_child", default, skip_serializing_if = "Option::is_none")]
    pub outer_child_index: Option<usize>,
    #[serde(default)]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    /// A leaf with only the required fields set; `operator_type` is derived
    /// from the id.
    pub fn new(node_id: impl Into<String>, est_rows: f64, task_type: impl Into<String>) -> Self {
        let node_id = node_id.into();
        PlanNode {
            operator_type: normalize_operator_type(&node_id),
            node_id,
            est_rows,
            act_rows: None,
            task_type: task_type.into(),
            table_name: None,
            join_type: None,
            extra_info: None,
            outer_child_index: None,
            children: Vec::new(),
        }
    }

    pub fn with_act(mut self, act: u64) -> Self {
        self.act_rows = Some(act);
        self
    }

    pub fn with_children(mut self, children: Vec<PlanNode>) -> Self {
        self.children = children;
        self
    }

    pub fn is_join(&self) -> bool {
        self.operator_type.contains("Join")
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(PlanNode::node_count).sum::<usize>()
    }
}

/// Strips the trailing `_<digits>` serial number TiDB appends to operator ids.
pub fn normalize_operator_type(node_id: &str) -> String {
    if let Some((head, tail)) = node_id.rsplit_once('_') {
        if !head.is_empty() && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            return head.to_string();
        }
    }
    node_id.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    ExplainOnly,
    ExplainAnalyze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub execution_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_tag: Option<String>,
    pub source: TraceSource,
    pub root: PlanNode,
}

/// One node of a pre-order walk.
#[derive(Debug, Clone, Copy)]
pub struct NodeVisit<'a> {
    pub node: &'a PlanNode,
    pub depth: usize,
    pub position: usize,
    /// Position of the parent in the same walk.
    pub parent: Option<usize>,
}

impl PlanTrace {
    /// Pre-order traversal; root has depth 0 and position 0.
    pub fn iter_nodes(&self) -> Vec<NodeVisit<'_>> {
        let mut out = Vec::with_capacity(self.root.node_count());
        let mut stack: Vec<(&PlanNode, usize, Option<usize>)> = vec![(&self.root, 0, None)];
        while let Some((node, depth, parent)) = stack.pop() {
            let position = out.len();
            out.push(NodeVisit {
                node,
                depth,
                position,
                parent,
            });
            for child in node.children.iter().rev() {
                stack.push((child, depth + 1, Some(position)));
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn is_labeled(&self) -> bool {
        self.iter_nodes().iter().all(|v| v.node.act_rows.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let violation = |field: &str, reason: String| Error::SchemaViolation {
            execution_id: self.execution_id.clone(),
            field: field.to_string(),
            reason,
        };
        if self.execution_id.is_empty() {
            return Err(violation("execution_id", "empty execution id".into()));
        }
        let mut seen = HashSet::new();
        for visit in self.iter_nodes() {
            let n = visit.node;
            if !seen.insert(n.node_id.as_str()) {
                return Err(violation("id", format!("duplicate node id {:?}", n.node_id)));
            }
            if !(n.est_rows.is_finite() && n.est_rows >= 0.0) {
                return Err(violation(
                    "est_rows",
                    format!("node {:?} has est_rows {}", n.node_id, n.est_rows),
                ));
            }
            if self.source == TraceSource::ExplainAnalyze && n.act_rows.is_none() {
                return Err(violation(
                    "act_rows",
                    format!("node {:?} lacks act_rows in an explain_analyze trace", n.node_id),
                ));
            }
            if let Some(idx) = n.outer_child_index {
                if idx >= n.children.len() {
                    return Err(violation(
                        "outer_child",
                        format!("node {:?} outer child {idx} out of range", n.node_id),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceCorpus {
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
    pub traces: Vec<PlanTrace>,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    version: u32,
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
    traces: Vec<PlanTrace>,
}

impl TraceCorpus {
    pub fn new(traces: Vec<PlanTrace>) -> Self {
        TraceCorpus {
            provenance: BTreeMap::new(),
            traces,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for t in &self.traces {
            if !ids.insert(t.execution_id.as_str()) {
                return Err(Error::SchemaViolation {
                    execution_id: t.execution_id.clone(),
                    field: "execution_id".into(),
                    reason: "duplicate execution id in corpus".into(),
                });
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn operator_count(&self) -> usize {
        self.traces.iter().map(PlanTrace::node_count).sum()
    }

    pub fn by_id(&self) -> HashMap<&str, &PlanTrace> {
        self.traces.iter().map(|t| (t.execution_id.as_str(), t)).collect()
    }

    /// Canonical JSON: fixed key order, children in plan order, trailing newline.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let file = CorpusFile {
            version: CORPUS_FORMAT_VERSION,
            provenance: self.provenance.clone(),
            traces: self.traces.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file).expect("corpus serialization is infallible");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: CorpusFile = serde_json::from_slice(bytes)?;
        if file.version != CORPUS_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                what: "corpus",
                found: file.version,
                expected: CORPUS_FORMAT_VERSION,
            });
        }
        let corpus = TraceCorpus {
            provenance: file.provenance,
            traces: file.traces,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Loads a canonical JSON file, or a directory of EXPLAIN text files
    /// described by a `manifest.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            return crate::explain::import_dir(path);
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_slice(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }
}

/// Coarse operator classes used by breakdown reports and the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorGroup {
    Join,
    Scan,
    Filter,
    Aggregation,
    Other,
}

impl OperatorGroup {
    pub const ALL: [OperatorGroup; 5] = [
        OperatorGroup::Join,
        OperatorGroup::Scan,
        OperatorGroup::Filter,
        OperatorGroup::Aggregation,
        OperatorGroup::Other,
    ];

    pub fn classify(operator_type: &str) -> Self {
        if operator_type.contains("Join") {
            OperatorGroup::Join
        } else if operator_type.contains("Scan") {
            OperatorGroup::Scan
        } else if operator_type == "Selection" {
            OperatorGroup::Filter
        } else if operator_type.contains("Agg") {
            OperatorGroup::Aggregation
        } else {
            OperatorGroup::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorGroup::Join => "join",
            OperatorGroup::Scan => "scan",
            OperatorGroup::Filter => "filter",
            OperatorGroup::Aggregation => "aggregation",
            OperatorGroup::Other => "other",
        }
    }
}

impl fmt::Display for OperatorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default classification plus explicit per-operator overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMapping {
    #[serde(default)]
    pub overrides: BTreeMap<String, OperatorGroup>,
}

impl GroupMapping {
    pub fn group_of(&self, operator_type: &str) -> OperatorGroup {
        self.overrides
            .get(operator_type)
            .copied()
            .unwrap_or_else(|| OperatorGroup::classify(operator_type))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> PlanTrace {
        let scan = PlanNode::new("TableFullScan_10", 5.0, "cop").with_act(5);
        let join = PlanNode::new("HashJoin_8", 3.0, "root").with_act(2).with_children(vec![scan]);
        let root = PlanNode::new("Projection_3", 3.0, "root").with_act(2).with_children(vec![join]);
        PlanTrace {
            execution_id: "q1".into(),
            query_tag: None,
            source: TraceSource::ExplainAnalyze,
            root,
        }
    }

    #[test]
    fn strips_serial_suffix() {
        assert_eq!(normalize_operator_type("HashJoin_8"), "HashJoin");
        assert_eq!(normalize_operator_type("TableFullScan_10"), "TableFullScan");
        assert_eq!(normalize_operator_type("Point_Get_1"), "Point_Get");
        assert_eq!(normalize_operator_type("Limit"), "Limit");
        assert_eq!(normalize_operator_type("_12"), "_12");
    }

    #[test]
    fn single_node_walk() {
        let t = PlanTrace {
            execution_id: "a".into(),
            query_tag: None,
            source: TraceSource::ExplainOnly,
            root: PlanNode::new("TableDual_1", 1.0, "root"),
        };
        let v = t.iter_nodes();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].depth, v[0].position), (0, 0));
        assert!(v[0].parent.is_none());
    }

    #[test]
    fn root_with_two_children() {
        let root = PlanNode::new("HashJoin_1", 1.0, "root").with_children(vec![
            PlanNode::new("TableFullScan_2", 1.0, "cop"),
            PlanNode::new("TableFullScan_3", 1.0, "cop"),
        ]);
        let t = PlanTrace {
            execution_id: "a".into(),
            query_tag: None,
            source: TraceSource::ExplainOnly,
            root,
        };
        let v = t.iter_nodes();
        let pos: Vec<_> = v.iter().map(|x| x.position).collect();
        let depth: Vec<_> = v.iter().map(|x| x.depth).collect();
        assert_eq!(pos, vec![0, 1, 2]);
        assert_eq!(depth, vec![0, 1, 1]);
        assert_eq!(v[1].node.node_id, "TableFullScan_2");
    }

    #[test]
    fn three_level_chain_depths() {
        let depths: Vec<_> = chain().iter_nodes().iter().map(|v| v.depth).collect();
        assert_eq!(depths, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_execution_ids_rejected() {
        let c = TraceCorpus::new(vec![chain(), chain()]);
        match c.validate() {
            Err(Error::SchemaViolation { execution_id, field, .. }) => {
                assert_eq!(execution_id, "q1");
                assert_eq!(field, "execution_id");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn analyze_trace_requires_actuals() {
        let mut t = chain();
        t.root.children[0].act_rows = None;
        assert!(matches!(t.validate(), Err(Error::SchemaViolation { field, .. }) if field == "act_rows"));
    }

    #[test]
    fn duplicate_node_ids_rejected() {
        let mut t = chain();
        t.root.children[0].node_id = "Projection_3".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn empty_corpus_is_valid() {
        let c = TraceCorpus::from_json_slice(br#"{"version":1,"traces":[]}"#).unwrap();
        assert!(c.traces.is_empty());
    }

    #[test]
    fn optional_fields_are_omitted() {
        let c = TraceCorpus::new(vec![chain()]);
        let s = String::from_utf8(c.to_canonical_json()).unwrap();
        assert!(!s.contains("\"table\""));
        assert!(!s.contains("\"join_type\""));
        assert!(!s.contains("\"query_tag\""));
        assert!(!s.contains("\"outer_child\""));
        assert!(s.contains("\"act_rows\": 5"));
    }

    #[test]
    fn group_classification() {
        assert_eq!(OperatorGroup::classify("HashJoin"), OperatorGroup::Join);
        assert_eq!(OperatorGroup::classify("IndexRangeScan"), OperatorGroup::Scan);
        assert_eq!(OperatorGroup::classify("Selection"), OperatorGroup::Filter);
        assert_eq!(OperatorGroup::classify("StreamAgg"), OperatorGroup::Aggregation);
        assert_eq!(OperatorGroup::classify("TableReader"), OperatorGroup::Other);
        let mut m = GroupMapping::default();
        m.overrides.insert("TableReader".into(), OperatorGroup::Scan);
        assert_eq!(m.group_of("TableReader"), OperatorGroup::Scan);
    }
}
