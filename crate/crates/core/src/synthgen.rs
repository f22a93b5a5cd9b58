//! Synthetic labeled plan corpora with controllable native-estimate bias.
//!
//! Each execution instantiates one of `n_templates` fixed plan shapes (a
//! left-deep join spine over table access paths, plus optional aggregation,
//! limit and projection on top) with freshly drawn selectivities.
//!
//! True rows compose bottom-up by operator semantics. Native estimates are
//! distorted by a per-class log-bias that accumulates over the subtree: a node
//! draws `b ~ Normal(mu_class, sigma_class)` and its cumulative bias `L` is `b`
//! plus the cumulative bias of every child. The estimate is the nominal row
//! count times `exp(-L)`, so join underestimation compounds with every join
//! beneath a node. Without zero-yield filters the nominal count equals the
//! true count and `est / act = exp(-L)` exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{PlanNode, PlanTrace, TraceCorpus, TraceSource};

pub const OPERATORS: [&str; 8] = [
    "TableFullScan",
    "IndexRangeScan",
    "Selection",
    "HashJoin",
    "IndexJoin",
    "HashAgg",
    "Projection",
    "Limit",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBias {
    pub mu: f64,
    pub sigma: f64,
}

impl LogBias {
    pub const NONE: LogBias = LogBias { mu: 0.0, sigma: 0.0 };

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sigma == 0.0 {
            self.mu
        } else {
            Normal::new(self.mu, self.sigma).expect("sigma validated").sample(rng)
        }
    }
}

/// Per operator class log-bias; positive `mu` means underestimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasModel {
    pub join: LogBias,
    pub scan: LogBias,
    pub filter: LogBias,
    pub aggregation: LogBias,
    pub other: LogBias,
}

impl Default for BiasModel {
    fn default() -> Self {
        BiasModel {
            join: LogBias {
                mu: 4f64.ln(),
                sigma: 0.3,
            },
            scan: LogBias::NONE,
            filter: LogBias { mu: 0.0, sigma: 0.05 },
            aggregation: LogBias { mu: 0.3, sigma: 0.3 },
            other: LogBias::NONE,
        }
    }
}

impl BiasModel {
    pub fn unbiased() -> Self {
        BiasModel {
            join: LogBias::NONE,
            scan: LogBias::NONE,
            filter: LogBias::NONE,
            aggregation: LogBias::NONE,
            other: LogBias::NONE,
        }
    }

    fn all(&self) -> [LogBias; 5] {
        [self.join, self.scan, self.filter, self.aggregation, self.other]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
}

/// Parameters of the generative row-count rules. Ranges are sampled
/// log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrueCardModel {
    pub tables: Vec<TableSpec>,
    /// Fraction of a table an index range scan returns.
    pub index_selectivity: (f64, f64),
    pub filter_selectivity: (f64, f64),
    /// Join output as a fraction of its larger input.
    pub join_correlation: (f64, f64),
    /// Group-by output as a fraction of its input.
    pub agg_reduction: (f64, f64),
    pub limit_values: Vec<u64>,
    /// Probability that a join is a left outer join.
    pub left_outer_fraction: f64,
}

impl Default for TrueCardModel {
    fn default() -> Self {
        let tables = [
            ("lineitem", 6_001_215),
            ("orders", 1_500_000),
            ("partsupp", 800_000),
            ("part", 200_000),
            ("customer", 150_000),
            ("supplier", 10_000),
            ("nation", 25),
            ("region", 5),
        ]
        .into_iter()
        .map(|(name, rows)| TableSpec {
            name: name.to_string(),
            rows,
        })
        .collect();
        TrueCardModel {
            tables,
            index_selectivity: (1e-4, 0.1),
            filter_selectivity: (1e-3, 1.0),
            join_correlation: (0.2, 1.0),
            agg_reduction: (1e-3, 0.5),
            limit_values: vec![10, 100, 1000],
            left_outer_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub n_executions: usize,
    /// Distinct plan shapes; executions cycle through them.
    pub n_templates: usize,
    /// Number of joins on the plan spine.
    pub depth_range: (usize, usize),
    /// Unary operators stacked over each table access.
    pub fanout_range: (usize, usize),
    /// Weights over [`OPERATORS`]. Scan kinds, join kinds and access-path
    /// operators (Selection vs. Projection) are chosen proportionally within
    /// their role; HashAgg, Limit and Projection weights, clamped to [0, 1],
    /// are also the probabilities of placing each on top of the plan.
    pub operator_mix: BTreeMap<String, f64>,
    pub true_card_model: TrueCardModel,
    pub bias_model: BiasModel,
    /// Probability that a filter directly over a scan yields no rows.
    pub zero_fraction: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        let operator_mix = [
            ("TableFullScan", 0.6),
            ("IndexRangeScan", 0.4),
            ("Selection", 0.7),
            ("HashJoin", 0.7),
            ("IndexJoin", 0.3),
            ("HashAgg", 0.5),
            ("Projection", 0.3),
            ("Limit", 0.2),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        GenSpec {
            n_executions: 263,
            n_templates: 40,
            depth_range: (2, 8),
            fanout_range: (1, 3),
            operator_mix,
            true_card_model: TrueCardModel::default(),
            bias_model: BiasModel::default(),
            zero_fraction: 0.02,
            seed: 42,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_templates == 0 {
            return bad("n_templates must be positive".into());
        }
        for (name, (lo, hi)) in [("depth_range", self.depth_range), ("fanout_range", self.fanout_range)] {
            if lo > hi {
                return bad(format!("{name} ({lo}, {hi}) is empty"));
            }
        }
        if self.operator_mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("operator weights must be non-negative".into());
        }
        if self.operator_mix.values().all(|w| *w == 0.0) {
            return bad("operator weights are all zero".into());
        }
        if let Some(k) = self.operator_mix.keys().find(|k| !OPERATORS.contains(&k.as_str())) {
            return bad(format!("unknown operator {k:?} in operator_mix"));
        }
        if !(0.0..=1.0).contains(&self.zero_fraction) {
            return bad(format!("zero_fraction {} outside [0, 1]", self.zero_fraction));
        }
        let m = &self.true_card_model;
        if m.tables.is_empty() || m.tables.iter().any(|t| t.rows == 0) {
            return bad("need at least one non-empty table".into());
        }
        for (name, (lo, hi)) in [
            ("index_selectivity", m.index_selectivity),
            ("filter_selectivity", m.filter_selectivity),
            ("join_correlation", m.join_correlation),
            ("agg_reduction", m.agg_reduction),
        ] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} ({lo}, {hi}) must lie in (0, 1]"));
            }
        }
        if m.limit_values.is_empty() {
            return bad("limit_values is empty".into());
        }
        if !(0.0..=1.0).contains(&m.left_outer_fraction) {
            return bad("left_outer_fraction outside [0, 1]".into());
        }
        if self.bias_model.all().iter().any(|b| !(b.mu.is_finite() && b.sigma.is_finite() && b.sigma >= 0.0)) {
            return bad("bias parameters must be finite with sigma >= 0".into());
        }
        Ok(())
    }

    fn weight(&self, op: &str) -> f64 {
        self.operator_mix.get(op).copied().unwrap_or(0.0)
    }

    fn pick<'a>(&self, rng: &mut ChaCha8Rng, candidates: &[&'a str]) -> Option<&'a str> {
        let total: f64 = candidates.iter().map(|c| self.weight(c)).sum();
        if total <= 0.0 {
            return None;
        }
        let mut x = rng.random::<f64>() * total;
        for c in candidates {
            x -= self.weight(c);
            if x < 0.0 {
                return Some(c);
            }
        }
        candidates.iter().rev().find(|c| self.weight(c) > 0.0).copied()
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Scan {
        op: &'static str,
        table: usize,
    },
    Unary {
        op: &'static str,
        child: Box<Shape>,
    },
    Join {
        op: &'static str,
        left_outer: bool,
        left: Box<Shape>,
        right: Box<Shape>,
    },
}

#[derive(Debug, Clone)]
struct Template {
    tag: String,
    root: Shape,
}

fn build_template(spec: &GenSpec, index: usize, rng: &mut ChaCha8Rng) -> Template {
    let n_tables = spec.true_card_model.tables.len();
    let access_path = |rng: &mut ChaCha8Rng, table: usize| -> Shape {
        let op = spec.pick(rng, &["TableFullScan", "IndexRangeScan"]).unwrap_or("TableFullScan");
        let mut shape = Shape::Scan { op, table };
        let n_unary = rng.random_range(spec.fanout_range.0..=spec.fanout_range.1);
        for _ in 0..n_unary {
            if let Some(op) = spec.pick(rng, &["Selection", "Projection"]) {
                shape = Shape::Unary {
                    op,
                    child: Box::new(shape),
                };
            }
        }
        shape
    };
    let n_joins = rng.random_range(spec.depth_range.0..=spec.depth_range.1);
    let first = rng.random_range(0..n_tables);
    let mut root = access_path(rng, first);
    for _ in 0..n_joins {
        let Some(op) = spec.pick(rng, &["HashJoin", "IndexJoin"]) else {
            break;
        };
        let table = rng.random_range(0..n_tables);
        let right = access_path(rng, table);
        root = Shape::Join {
            op,
            left_outer: rng.random::<f64>() < spec.true_card_model.left_outer_fraction,
            left: Box::new(root),
            right: Box::new(right),
        };
    }
    for op in ["HashAgg", "Limit", "Projection"] {
        if rng.random::<f64>() < spec.weight(op).clamp(0.0, 1.0) {
            root = Shape::Unary {
                op,
                child: Box::new(root),
            };
        }
    }
    Template {
        tag: format!("t{index:03}"),
        root,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

struct Realized {
    node: PlanNode,
    act: u64,
    /// Row count the native estimator is modeling, before bias.
    nominal: f64,
    /// Cumulative log-bias.
    bias: f64,
    /// A zero-yield filter lies in this subtree.
    zeroed: bool,
}

struct Realizer<'a> {
    spec: &'a GenSpec,
    rng: ChaCha8Rng,
    serial: usize,
}

impl Realizer<'_> {
    fn next_id(&mut self, op: &str) -> String {
        self.serial += 1;
        format!("{op}_{}", self.serial)
    }

    fn finish(&mut self, mut node: PlanNode, act: u64, nominal: f64, bias: f64, zeroed: bool) -> Realized {
        let nominal = if zeroed { nominal } else { act as f64 };
        node.est_rows = nominal * (-bias).exp();
        node.act_rows = Some(act);
        Realized {
            node,
            act,
            nominal,
            bias,
            zeroed,
        }
    }

    fn realize(&mut self, shape: &Shape) -> Realized {
        let spec = self.spec;
        let card = &spec.true_card_model;
        match shape {
            Shape::Scan { op, table } => {
                let t = &card.tables[*table];
                let act = if *op == "IndexRangeScan" {
                    ((t.rows as f64 * log_uniform(&mut self.rng, card.index_selectivity)).round() as u64).max(1)
                } else {
                    t.rows
                };
                let b = spec.bias_model.scan.draw(&mut self.rng);
                let mut node = PlanNode::new(self.next_id(op), 0.0, "cop[tikv]");
                node.table_name = Some(t.name.clone());
                node.extra_info = Some("keep order:false".into());
                self.finish(node, act, act as f64, b, false)
            }
            Shape::Unary { op, child } => {
                let task = if in_cop_path(shape) { "cop[tikv]" } else { "root" };
                let id = self.next_id(op);
                let c = self.realize(child);
                let mut node = PlanNode::new(id, 0.0, task);
                let (act, nominal, b, zeroed) = match *op {
                    "Selection" => {
                        let sel = log_uniform(&mut self.rng, card.filter_selectivity);
                        let b = spec.bias_model.filter.draw(&mut self.rng);
                        let over_scan = matches!(**child, Shape::Scan { .. });
                        node.extra_info = Some(format!("gt(col, {:.4})", 1.0 - sel));
                        if over_scan && self.rng.random::<f64>() < spec.zero_fraction {
                            (0, c.nominal * sel, b, true)
                        } else {
                            (((c.act as f64 * sel).round() as u64).clamp(c.act.min(1), c.act), c.nominal * sel, b, c.zeroed)
                        }
                    }
                    "HashAgg" => {
                        let g = log_uniform(&mut self.rng, card.agg_reduction);
                        let b = spec.bias_model.aggregation.draw(&mut self.rng);
                        node.extra_info = Some("group by:col, funcs:count(1)".into());
                        ((c.act as f64 * g).ceil() as u64, (c.nominal * g).ceil(), b, c.zeroed)
                    }
                    "Limit" => {
                        let n = card.limit_values[self.rng.random_range(0..card.limit_values.len())];
                        let b = spec.bias_model.other.draw(&mut self.rng);
                        node.extra_info = Some(format!("offset:0, count:{n}"));
                        (c.act.min(n), c.nominal.min(n as f64), b, c.zeroed)
                    }
                    _ => {
                        let b = spec.bias_model.other.draw(&mut self.rng);
                        node.extra_info = Some("col".into());
                        (c.act, c.nominal, b, c.zeroed)
                    }
                };
                node.children = vec![c.node];
                self.finish(node, act, nominal, c.bias + b, zeroed)
            }
            Shape::Join {
                op,
                left_outer,
                left,
                right,
            } => {
                let id = self.next_id(op);
                let l = self.realize(left);
                let r = self.realize(right);
                let phi = log_uniform(&mut self.rng, card.join_correlation);
                let b = spec.bias_model.join.draw(&mut self.rng);
                let join_rows = |a: f64, c: f64| if a.min(c) <= 0.0 { 0.0 } else { a.max(c) * phi };
                let mut act = join_rows(l.act as f64, r.act as f64).round() as u64;
                let mut nominal = join_rows(l.nominal, r.nominal);
                if *left_outer {
                    act = act.max(l.act);
                    nominal = nominal.max(l.nominal);
                }
                let mut node = PlanNode::new(id, 0.0, "root");
                let jt = if *left_outer { "left outer" } else { "inner" };
                node.join_type = Some(jt.to_string());
                node.extra_info = Some(format!("{jt} join, equal:[eq(l.k, r.k)]"));
                if *left_outer {
                    node.outer_child_index = Some(0);
                }
                let zeroed = l.zeroed || r.zeroed;
                let bias = l.bias + r.bias + b;
                node.children = vec![l.node, r.node];
                self.finish(node, act, nominal, bias, zeroed)
            }
        }
    }
}

/// Whether `shape` is a chain of cop-side operators ending in a scan.
fn in_cop_path(shape: &Shape) -> bool {
    match shape {
        Shape::Scan { .. } => true,
        Shape::Unary { op, child } => matches!(*op, "Selection" | "Projection") && in_cop_path(child),
        Shape::Join { .. } => false,
    }
}

/// Generates an `explain_analyze` corpus; identical specs give identical
/// corpora.
pub fn generate(spec: &GenSpec) -> Result<TraceCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let templates: Vec<Template> = (0..spec.n_templates).map(|i| build_template(spec, i, &mut rng)).collect();
    let mut traces = Vec::with_capacity(spec.n_executions);
    for i in 0..spec.n_executions {
        let template = &templates[rng.random_range(0..templates.len())];
        let sub_seed: u64 = rng.random();
        let mut r = Realizer {
            spec,
            rng: ChaCha8Rng::seed_from_u64(sub_seed),
            serial: 0,
        };
        let realized = r.realize(&template.root);
        traces.push(PlanTrace {
            execution_id: format!("exec-{i:05}"),
            query_tag: Some(template.tag.clone()),
            source: TraceSource::ExplainAnalyze,
            root: realized.node,
        });
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("generator".into(), serde_json::json!("synthetic"));
    provenance.insert("seed".into(), serde_json::json!(spec.seed));
    provenance.insert("n_templates".into(), serde_json::json!(spec.n_templates));
    let corpus = TraceCorpus { provenance, traces };
    corpus.validate()?;
    Ok(corpus)
}
