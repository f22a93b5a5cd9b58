//! Importer for TiDB-style tabular `EXPLAIN` / `EXPLAIN ANALYZE` output.
//!
//! Both the bordered MySQL-client table (`| id | estRows | ... |`) and the
//! tab-separated batch output are accepted. Tree structure is recovered from
//! the drawing prefix of the `id` column: every level of nesting adds two
//! characters drawn from `├─`, `└─`, `│ ` or spaces.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::trace::{PlanNode, PlanTrace, TraceCorpus, TraceSource};

const TREE_CHARS: [char; 5] = [' ', '│', '├', '└', '─'];

/// Join-type phrases as printed at the start of TiDB's operator info,
/// longest first so that prefixes do not shadow longer matches.
const JOIN_TYPES: [(&str, &str); 8] = [
    ("anti left outer semi join", "anti left outer semi"),
    ("left outer semi join", "left outer semi"),
    ("cartesian inner join", "inner"),
    ("anti semi join", "anti semi"),
    ("right outer join", "right outer"),
    ("left outer join", "left outer"),
    ("inner join", "inner"),
    ("semi join", "semi"),
];

struct Columns {
    id: usize,
    est: usize,
    act: Option<usize>,
    task: usize,
    access: Option<usize>,
    info: Option<usize>,
}

impl Columns {
    fn from_header(cells: &[&str], line: usize) -> Result<Self> {
        let find = |names: &[&str]| {
            cells
                .iter()
                .position(|c| names.iter().any(|n| c.trim().eq_ignore_ascii_case(n)))
        };
        let missing = |name: &str| Error::MalformedPlan {
            line,
            reason: format!("missing required column {name:?}"),
        };
        Ok(Columns {
            id: find(&["id"]).ok_or_else(|| missing("id"))?,
            est: find(&["estRows", "count"]).ok_or_else(|| missing("estRows"))?,
            act: find(&["actRows"]),
            task: find(&["task"]).ok_or_else(|| missing("task"))?,
            access: find(&["access object"]),
            info: find(&["operator info"]),
        })
    }
}

fn split_row(line: &str) -> Vec<&str> {
    let trimmed = line.trim_end();
    if trimmed.contains('|') {
        let inner = trimmed.strip_prefix('|').unwrap_or(trimmed);
        let inner = inner.strip_suffix('|').unwrap_or(inner);
        inner.split('|').collect()
    } else {
        trimmed.split('\t').collect()
    }
}

fn is_border(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || (t.starts_with('+') && t.chars().all(|c| c == '+' || c == '-'))
}

fn parse_number(cell: &str, column: &str, line: usize) -> Result<f64> {
    let v = cell.trim();
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite() && *x >= 0.0)
        .ok_or_else(|| Error::NumberParse {
            line,
            column: column.to_string(),
            value: v.to_string(),
        })
}

fn parse_count(cell: &str, line: usize) -> Result<u64> {
    let x = parse_number(cell, "actRows", line)?;
    if x.fract() != 0.0 || x > u64::MAX as f64 {
        return Err(Error::NumberParse {
            line,
            column: "actRows".into(),
            value: cell.trim().to_string(),
        });
    }
    Ok(x as u64)
}

/// First `table:<name>` entry of the access-object column.
fn table_from_access(access: &str) -> Option<String> {
    access.split(',').find_map(|part| {
        let part = part.trim();
        let name = part.strip_prefix("table:")?;
        let name = name.split_whitespace().next()?.trim();
        (!name.is_empty()).then(|| name.to_string())
    })
}

fn join_type_from_info(info: &str) -> Option<String> {
    let lower = info.trim_start().to_ascii_lowercase();
    JOIN_TYPES
        .iter()
        .find(|(phrase, _)| lower.starts_with(phrase))
        .map(|(_, normalized)| normalized.to_string())
}

/// Splits `TableReader_10(Build)` into the id and its role marker.
fn split_role(id: &str) -> (&str, Option<&str>) {
    if let Some(open) = id.rfind('(') {
        if id.ends_with(')') && open > 0 {
            return (&id[..open], Some(&id[open + 1..id.len() - 1]));
        }
    }
    (id, None)
}

struct Row {
    node: PlanNode,
    role: Option<String>,
    children: Vec<usize>,
}

/// Parses one tabular plan into a trace with the given execution id.
pub fn parse_explain_text(text: &str, source: TraceSource, execution_id: &str) -> Result<PlanTrace> {
    let mut columns: Option<Columns> = None;
    let mut rows: Vec<Row> = Vec::new();
    // stack[d] = index of the most recent row at depth d
    let mut stack: Vec<usize> = Vec::new();
    let mut base_indent: Option<usize> = None;
    let mut root: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if is_border(raw) {
            continue;
        }
        let cells = split_row(raw);
        let Some(cols) = &columns else {
            let cols = Columns::from_header(&cells, line_no)?;
            if source == TraceSource::ExplainAnalyze && cols.act.is_none() {
                return Err(Error::MalformedPlan {
                    line: line_no,
                    reason: "missing required column \"actRows\" for an EXPLAIN ANALYZE plan".into(),
                });
            }
            columns = Some(cols);
            continue;
        };
        let cell = |i: usize| -> Result<&str> {
            cells.get(i).copied().ok_or_else(|| Error::MalformedPlan {
                line: line_no,
                reason: format!("row has {} cells, expected at least {}", cells.len(), i + 1),
            })
        };

        let id_cell = cell(cols.id)?.trim_end();
        let indent = id_cell.chars().take_while(|c| TREE_CHARS.contains(c)).count();
        let label: String = id_cell.chars().skip(indent).collect();
        if label.is_empty() {
            return Err(Error::MalformedPlan {
                line: line_no,
                reason: "empty operator id".into(),
            });
        }
        let base = *base_indent.get_or_insert(indent);
        if indent < base || !(indent - base).is_multiple_of(2) {
            return Err(Error::MalformedPlan {
                line: line_no,
                reason: format!("indentation of {indent} characters does not align to a tree level"),
            });
        }
        let depth = (indent - base) / 2;

        let (node_id, role) = split_role(&label);
        let mut node = PlanNode::new(node_id, parse_number(cell(cols.est)?, "estRows", line_no)?, cell(cols.task)?.trim());
        if source == TraceSource::ExplainAnalyze {
            node.act_rows = Some(parse_count(cell(cols.act.expect("checked at header"))?, line_no)?);
        }
        if let Some(a) = cols.access {
            node.table_name = table_from_access(cell(a)?);
        }
        if let Some(i) = cols.info {
            let info = cell(i)?.trim();
            if !info.is_empty() {
                if node.is_join() {
                    node.join_type = join_type_from_info(info);
                }
                node.extra_info = Some(info.to_string());
            }
        }

        let this = rows.len();
        rows.push(Row {
            node,
            role: role.map(str::to_string),
            children: Vec::new(),
        });
        if depth == 0 {
            if root.is_some() {
                return Err(Error::MalformedPlan {
                    line: line_no,
                    reason: "second root operator".into(),
                });
            }
            root = Some(this);
        } else {
            if depth > stack.len() {
                return Err(Error::MalformedPlan {
                    line: line_no,
                    reason: format!("operator at depth {depth} has no parent"),
                });
            }
            let parent = stack[depth - 1];
            rows[parent].children.push(this);
        }
        stack.truncate(depth);
        stack.push(this);
    }

    if columns.is_none() {
        return Err(Error::MalformedPlan {
            line: 0,
            reason: "no header row".into(),
        });
    }
    let root = root.ok_or(Error::MalformedPlan {
        line: 0,
        reason: "plan has no operators".into(),
    })?;

    let mut slots: Vec<Option<Row>> = rows.into_iter().map(Some).collect();
    let root = assemble(&mut slots, root);
    let trace = PlanTrace {
        execution_id: execution_id.to_string(),
        query_tag: None,
        source,
        root,
    };
    trace.validate()?;
    Ok(trace)
}

fn assemble(slots: &mut [Option<Row>], idx: usize) -> PlanNode {
    let row = slots[idx].take().expect("each row is assembled once");
    let roles: Vec<Option<String>> = row.children.iter().map(|&c| slots[c].as_ref().and_then(|r| r.role.clone())).collect();
    let mut node = row.node;
    node.children = row.children.iter().map(|&c| assemble(slots, c)).collect();
    // Without build/probe markers the children are printed left to right, so
    // the preserved side of an outer join can be read off positionally.
    if node.children.len() == 2 && roles.iter().all(Option::is_none) {
        node.outer_child_index = match node.join_type.as_deref() {
            Some("left outer") => Some(0),
            Some("right outer") => Some(1),
            _ => None,
        };
    }
    node
}

#[derive(Deserialize)]
struct Manifest {
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
    entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    file: String,
    execution_id: String,
    #[serde(default)]
    query_tag: Option<String>,
    source: TraceSource,
}

/// Imports a directory containing `manifest.json` and the plan text files it
/// lists.
pub fn import_dir(dir: &Path) -> Result<TraceCorpus> {
    let manifest_path = dir.join("manifest.json");
    let bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::InFile {
        path: manifest_path.display().to_string(),
        source: Box::new(e.into()),
    })?;
    let mut traces = Vec::with_capacity(manifest.entries.len());
    for entry in manifest.entries {
        let path = dir.join(&entry.file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut trace = parse_explain_text(&text, entry.source, &entry.execution_id).map_err(|e| Error::InFile {
            path: path.display().to_string(),
            source: Box::new(e),
        })?;
        trace.query_tag = entry.query_tag;
        traces.push(trace);
    }
    let corpus = TraceCorpus {
        provenance: manifest.provenance,
        traces,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// `ExplainAnalyze` when the header carries an `actRows` column.
pub fn detect_source(text: &str) -> TraceSource {
    let has_act = text
        .lines()
        .filter(|l| !is_border(l))
        .take(1)
        .any(|header| split_row(header).iter().any(|c| c.trim().eq_ignore_ascii_case("actRows")));
    if has_act {
        TraceSource::ExplainAnalyze
    } else {
        TraceSource::ExplainOnly
    }
}

/// Imports standalone plan files; each file's stem becomes its execution id.
pub fn import_files(paths: &[impl AsRef<Path>]) -> Result<TraceCorpus> {
    let mut traces = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("cannot derive an execution id from {}", path.display())))?;
        let trace = parse_explain_text(&text, detect_source(&text), id).map_err(|e| Error::InFile {
            path: path.display().to_string(),
            source: Box::new(e),
        })?;
        traces.push(trace);
    }
    let corpus = TraceCorpus::new(traces);
    corpus.validate()?;
    Ok(corpus)
}
