//! Leakage-free operator datasets: execution-level splits, EXPLAIN-only raw
//! features, and the training-split-fitted encoding schema.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{GroupMapping, OperatorGroup, PlanTrace, TraceCorpus};

pub const NUMERIC_FEATURES: [&str; 12] = [
    "optimizer_est_out",
    "log_est_rows",
    "plan_depth",
    "node_position",
    "relative_position",
    "est_to_total_ratio",
    "is_join",
    "is_scan",
    "is_table_scan",
    "is_hash_join",
    "is_filter",
    "is_aggregation",
];

pub const CATEGORICAL_FEATURES: [&str; 4] = ["operator_type", "task_type", "join_type", "table_name"];

const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    /// Aligned with [`NUMERIC_FEATURES`].
    pub numeric: [f64; 12],
    /// Aligned with [`CATEGORICAL_FEATURES`].
    pub categorical: [String; 4],
}

impl RawFeatures {
    pub fn numeric(&self, name: &str) -> Option<f64> {
        NUMERIC_FEATURES.iter().position(|n| *n == name).map(|i| self.numeric[i])
    }

    pub fn categorical(&self, name: &str) -> Option<&str> {
        CATEGORICAL_FEATURES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.categorical[i].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSample {
    pub execution_id: String,
    pub node_id: String,
    pub raw: RawFeatures,
    pub est_rows: f64,
    pub act_rows: Option<u64>,
    pub operator_group: OperatorGroup,
}

impl OperatorSample {
    pub fn operator_type(&self) -> &str {
        &self.raw.categorical[0]
    }

    pub fn table_name(&self) -> &str {
        &self.raw.categorical[3]
    }

    pub fn join_type(&self) -> &str {
        &self.raw.categorical[2]
    }

    pub fn is_join(&self) -> bool {
        self.raw.numeric[6] == 1.0
    }

    /// Observed rows; panics on unlabeled samples.
    pub fn act(&self) -> u64 {
        self.act_rows.expect("labeled sample")
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Emits one sample per plan node in pre-order.
pub fn extract_raw_features(trace: &PlanTrace, groups: &GroupMapping) -> Vec<OperatorSample> {
    let visits = trace.iter_nodes();
    let n = visits.len();
    let total_est: f64 = visits.iter().map(|v| v.node.est_rows).sum();
    visits
        .iter()
        .map(|v| {
            let node = v.node;
            let op = node.operator_type.as_str();
            let relative = if n > 1 { v.position as f64 / (n - 1) as f64 } else { 0.0 };
            let ratio = if total_est > 0.0 { node.est_rows / total_est } else { 0.0 };
            let numeric = [
                node.est_rows,
                node.est_rows.ln_1p(),
                v.depth as f64,
                v.position as f64,
                relative,
                ratio,
                indicator(op.contains("Join")),
                indicator(op.contains("Scan")),
                indicator(op.starts_with("Table") && op.contains("Scan")),
                indicator(op == "HashJoin"),
                indicator(op == "Selection"),
                indicator(op.contains("Agg")),
            ];
            let categorical = [
                op.to_string(),
                node.task_type.clone(),
                node.join_type.clone().unwrap_or_else(|| UNKNOWN.into()),
                node.table_name.clone().unwrap_or_else(|| UNKNOWN.into()),
            ];
            OperatorSample {
                execution_id: trace.execution_id.clone(),
                node_id: node.node_id.clone(),
                raw: RawFeatures { numeric, categorical },
                est_rows: node.est_rows,
                act_rows: node.act_rows,
                operator_group: groups.group_of(op),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|f| !(f.is_finite() && *f > 0.0)) || ((all.iter().sum::<f64>() - 1.0).abs() > 1e-6) {
            return Err(Error::invalid(format!(
                "split fractions must be positive and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// (train, validation, test) execution counts for `n` executions.
    /// Held-out splits take the ceiling and training gets the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let held = |f: f64| ((n as f64 * f) - 1e-9).ceil().max(0.0) as usize;
        let test = held(self.test).min(n);
        let validation = held(self.validation).min(n - test);
        (n - test - validation, validation, test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.validation) && self.train.is_disjoint(&self.test) && self.validation.is_disjoint(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partitions labeled executions into train/validation/test. With
/// `stratify_by_tag`, each query tag is spread over the splits in proportion
/// to the fractions, as far as its size allows.
pub fn split_by_execution(
    corpus: &TraceCorpus,
    fractions: SplitFractions,
    seed: u64,
    stratify_by_tag: bool,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let labeled: Vec<&PlanTrace> = corpus.traces.iter().filter(|t| t.is_labeled()).collect();
    if labeled.len() < 3 {
        return Err(Error::TooFewExecutions(labeled.len()));
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for t in &labeled {
        let key = if stratify_by_tag { t.query_tag.as_deref().unwrap_or("") } else { "" };
        strata.entry(key).or_default().push(t.execution_id.as_str());
    }
    // Each stratum is shuffled and its members placed at evenly spaced
    // positions in [0, 1); sorting on position interleaves the strata so every
    // one is spread across the splits in proportion, while the global counts
    // stay exact even when strata are tiny.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(f64, u64, &str)> = Vec::with_capacity(labeled.len());
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        for (i, id) in ids.iter().enumerate() {
            placed.push(((i as f64 + 0.5) / n, rng.random(), id));
        }
    }
    placed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    let (n_train, n_val, _) = fractions.counts(placed.len());
    let mut out = SplitAssignment::default();
    for (i, (_, _, id)) in placed.into_iter().enumerate() {
        let bucket = if i < n_train {
            &mut out.train
        } else if i < n_train + n_val {
            &mut out.validation
        } else {
            &mut out.test
        };
        bucket.insert(id.to_string());
    }
    if out.train.is_empty() {
        return Err(Error::TooFewExecutions(labeled.len()));
    }
    Ok(out)
}

/// Samples of the executions in `ids`, in corpus order.
pub fn samples_for(corpus: &TraceCorpus, ids: &BTreeSet<String>, groups: &GroupMapping) -> Vec<OperatorSample> {
    corpus
        .traces
        .iter()
        .filter(|t| ids.contains(&t.execution_id))
        .flat_map(|t| extract_raw_features(t, groups))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical_vocab: BTreeMap<String, Vec<String>>,
    pub scaler_params: Vec<ScalerParams>,
    pub selected_features: Vec<String>,
    pub k: usize,
    /// Selection score of every encoded feature, in encoded order.
    pub scores: Vec<FeatureScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSummary {
    pub numeric_features: usize,
    pub one_hot_columns: BTreeMap<String, usize>,
    pub encoded_features: usize,
    pub selected: usize,
}

fn pearson_sq(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    let r2 = sxy * sxy / (sxx * syy);
    if r2.is_finite() {
        r2.min(1.0)
    } else {
        0.0
    }
}

enum Column {
    Numeric { idx: usize, mean: f64, scale: f64 },
    OneHot { cat: usize, value: String },
}

impl FeatureSchema {
    /// Learns vocabularies, scaler parameters and the top-`k` features from
    /// the training split. `k` larger than the encoded width is clamped and a
    /// warning is kept in the schema.
    pub fn fit(train: &[OperatorSample], targets: &[f64], k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTraining);
        }
        if train.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} targets",
                train.len(),
                targets.len()
            )));
        }
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let n = train.len() as f64;
        let mut encoded: Vec<(String, Vec<f64>)> = Vec::new();
        let mut scaler_params = Vec::with_capacity(NUMERIC_FEATURES.len());
        for (i, name) in NUMERIC_FEATURES.iter().enumerate() {
            let col: Vec<f64> = train.iter().map(|s| s.raw.numeric[i]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            scaler_params.push(ScalerParams {
                name: name.to_string(),
                mean,
                std: var.sqrt(),
            });
            encoded.push((name.to_string(), col));
        }
        let mut categorical_vocab = BTreeMap::new();
        for (c, name) in CATEGORICAL_FEATURES.iter().enumerate() {
            let vocab: Vec<String> = train
                .iter()
                .map(|s| s.raw.categorical[c].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            for value in &vocab {
                let col = train.iter().map(|s| indicator(&s.raw.categorical[c] == value)).collect();
                encoded.push((format!("{name}={value}"), col));
            }
            categorical_vocab.insert(name.to_string(), vocab);
        }

        let scores: Vec<FeatureScore> = encoded
            .iter()
            .map(|(name, col)| FeatureScore {
                name: name.clone(),
                score: pearson_sq(col, targets),
            })
            .collect();

        let mut warnings = Vec::new();
        let k_eff = if k > encoded.len() {
            warnings.push(format!(
                "k = {k} exceeds the {} encoded features; clamped",
                encoded.len()
            ));
            encoded.len()
        } else {
            k
        };
        let mut ranked: Vec<usize> = (0..scores.len()).collect();
        ranked.sort_by(|&a, &b| {
            scores[b]
                .score
                .total_cmp(&scores[a].score)
                .then_with(|| scores[a].name.cmp(&scores[b].name))
        });
        let mut keep: Vec<usize> = ranked[..k_eff].to_vec();
        keep.sort_unstable();
        let selected_features = keep.iter().map(|&i| scores[i].name.clone()).collect();

        Ok(FeatureSchema {
            categorical_vocab,
            scaler_params,
            selected_features,
            k: k_eff,
            scores,
            warnings,
        })
    }

    pub fn encoded_feature_count(&self) -> usize {
        NUMERIC_FEATURES.len() + self.categorical_vocab.values().map(Vec::len).sum::<usize>()
    }

    pub fn summary(&self) -> SchemaSummary {
        SchemaSummary {
            numeric_features: NUMERIC_FEATURES.len(),
            one_hot_columns: self.categorical_vocab.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            encoded_features: self.encoded_feature_count(),
            selected: self.selected_features.len(),
        }
    }

    fn columns(&self) -> Result<Vec<Column>> {
        self.selected_features
            .iter()
            .map(|name| {
                if let Some(idx) = NUMERIC_FEATURES.iter().position(|n| n == name) {
                    let p = &self.scaler_params[idx];
                    let scale = if p.std > 0.0 { p.std } else { 1.0 };
                    return Ok(Column::Numeric { idx, mean: p.mean, scale });
                }
                let (feature, value) = name
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("unknown encoded feature {name:?}")))?;
                let cat = CATEGORICAL_FEATURES
                    .iter()
                    .position(|n| *n == feature)
                    .ok_or_else(|| Error::invalid(format!("unknown categorical feature {feature:?}")))?;
                Ok(Column::OneHot {
                    cat,
                    value: value.to_string(),
                })
            })
            .collect()
    }

    /// Encodes samples into the selected, scaled feature space. Categories
    /// never seen in training produce an all-zero block.
    pub fn encode(&self, samples: &[OperatorSample]) -> FeatureMatrix {
        let columns = self.columns().expect("schema names are produced by fit");
        let mut data = Vec::with_capacity(samples.len() * columns.len());
        for s in samples {
            for col in &columns {
                data.push(match col {
                    Column::Numeric { idx, mean, scale } => (s.raw.numeric[*idx] - mean) / scale,
                    Column::OneHot { cat, value } => indicator(&s.raw.categorical[*cat] == value),
                });
            }
        }
        FeatureMatrix {
            n_rows: samples.len(),
            n_cols: columns.len(),
            data,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::invalid(format!(
                "matrix data length {} is not {n_rows} x {n_cols}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(FeatureMatrix {
            n_rows: rows.len(),
            n_cols,
            data: rows.concat(),
        })
    }

    pub fn empty(n_cols: usize) -> Self {
        FeatureMatrix {
            n_rows: 0,
            n_cols,
            data: Vec::new(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let width = self.n_cols.max(1);
        self.data.chunks_exact(width).take(self.n_rows)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }
}

/// Checks that no execution id appears in more than one split.
pub fn assert_leakage_free(split: &SplitAssignment) -> bool {
    let mut seen = HashSet::new();
    split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .all(|id| seen.insert(id.as_str()))
}
