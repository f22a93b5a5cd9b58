//! Squared-error gradient boosting over exact greedy regression trees.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::learners::Fitted;

/// Relative tolerance under which two split gains count as tied.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 300,
            max_depth: 3,
            learning_rate: 0.05,
            min_samples_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Flat tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub params: GbdtParams,
    pub trees: Vec<RegressionTree>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best split of `rows` by SSE reduction of `grad`. `sorted[f]` lists the
/// node's rows ordered by feature `f` (ties by row index).
fn best_split(x: &FeatureMatrix, grad: &[f64], sorted: &[Vec<u32>], min_leaf: usize) -> Option<SplitChoice> {
    let n = sorted.first()?.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = sorted[0].iter().map(|&r| grad[r as usize]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<SplitChoice> = None;
    for (f, order) in sorted.iter().enumerate() {
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            let r = order[i] as usize;
            left_sum += grad[r];
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            let a = x.get(r, f);
            let b = x.get(order[i + 1] as usize, f);
            if !(a < b) {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
            let better = match best {
                None => gain > GAIN_TIE_TOLERANCE * (1.0 + parent.abs()),
                Some(b) => gain > b.gain + GAIN_TIE_TOLERANCE * (1.0 + b.gain.abs()),
            };
            if better {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(a, b),
                    gain,
                });
            }
        }
    }
    best
}

/// Midpoint that still separates `a < b` under `x <= t`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Grows one tree on the rows listed in `sorted` (per-feature orderings).
/// Splits maximize SSE reduction of `grad`; `leaf` computes a leaf value
/// from the rows that reach it.
pub(crate) fn grow_tree(
    x: &FeatureMatrix,
    grad: &[f64],
    sorted: Vec<Vec<u32>>,
    max_depth: usize,
    min_leaf: usize,
    leaf: &dyn Fn(&[u32]) -> f64,
) -> RegressionTree {
    let mut nodes = Vec::new();
    let mut go_left = vec![false; x.n_rows];
    grow_node(x, grad, sorted, 0, max_depth, min_leaf, leaf, &mut nodes, &mut go_left);
    RegressionTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    x: &FeatureMatrix,
    grad: &[f64],
    sorted: Vec<Vec<u32>>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    leaf: &dyn Fn(&[u32]) -> f64,
    nodes: &mut Vec<TreeNode>,
    go_left: &mut [bool],
) -> usize {
    let id = nodes.len();
    let split = if depth < max_depth {
        best_split(x, grad, &sorted, min_leaf)
    } else {
        None
    };
    let Some(split) = split else {
        nodes.push(TreeNode::Leaf { value: leaf(&sorted[0]) });
        return id;
    };
    nodes.push(TreeNode::Leaf { value: 0.0 });
    for &r in &sorted[0] {
        go_left[r as usize] = x.get(r as usize, split.feature) <= split.threshold;
    }
    let (left, right): (Vec<Vec<u32>>, Vec<Vec<u32>>) = sorted
        .into_iter()
        .map(|order| order.into_iter().partition(|&r| go_left[r as usize]))
        .unzip();
    let l = grow_node(x, grad, left, depth + 1, max_depth, min_leaf, leaf, nodes, go_left);
    let r = grow_node(x, grad, right, depth + 1, max_depth, min_leaf, leaf, nodes, go_left);
    nodes[id] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: l,
        right: r,
    };
    id
}

/// Per-feature row orderings for `rows`, ties broken by row index.
pub(crate) fn presort(x: &FeatureMatrix, rows: &[u32]) -> Vec<Vec<u32>> {
    (0..x.n_cols)
        .map(|f| {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// Rows used for one boosting round.
pub(crate) fn sample_rows(n: usize, fraction: f64, min_rows: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let all: Vec<u32> = (0..n as u32).collect();
    if fraction >= 1.0 {
        return all;
    }
    let m = ((n as f64 * fraction).round() as usize).clamp(min_rows.min(n), n);
    let mut picked: Vec<u32> = all.choose_multiple(rng, m).copied().collect();
    picked.sort_unstable();
    picked
}

pub(crate) fn check_training_shape(x: &FeatureMatrix, y: &[f64], params: &GbdtParams) -> Result<()> {
    params.validate()?;
    if x.n_rows != y.len() {
        return Err(Error::invalid(format!("{} rows but {} targets", x.n_rows, y.len())));
    }
    if x.n_rows == 0 {
        return Err(Error::EmptyTraining);
    }
    if x.n_rows < 2 * params.min_samples_leaf {
        return Err(Error::invalid(format!(
            "{} rows is fewer than 2 x min_samples_leaf ({})",
            x.n_rows, params.min_samples_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training target"));
    }
    Ok(())
}

impl GbdtModel {
    /// Fits `params.n_trees` trees to squared-error residuals. Constant
    /// targets yield a model with no trees that predicts the constant.
    pub fn train(x: &FeatureMatrix, y: &[f64], params: GbdtParams) -> Result<Fitted<GbdtModel>> {
        let start = Instant::now();
        check_training_shape(x, y, &params)?;
        let n = x.n_rows;
        let base = y.iter().sum::<f64>() / n as f64;
        let mut model = GbdtModel {
            n_features: x.n_cols,
            base_prediction: base,
            learning_rate: params.learning_rate,
            params,
            trees: Vec::with_capacity(params.n_trees),
        };
        let constant = y.iter().all(|v| *v == y[0]);
        if constant || params.n_trees == 0 || x.n_cols == 0 {
            if constant {
                model.base_prediction = y[0];
            }
            return Ok(Fitted::new(model, start));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let full_sort = presort(x, &(0..n as u32).collect::<Vec<_>>());
        let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
        for _ in 0..params.n_trees {
            let sorted = if params.subsample >= 1.0 {
                full_sort.clone()
            } else {
                let rows = sample_rows(n, params.subsample, 2 * params.min_samples_leaf, &mut rng);
                let mut keep = vec![false; n];
                rows.iter().for_each(|&r| keep[r as usize] = true);
                full_sort.iter().map(|o| o.iter().copied().filter(|&r| keep[r as usize]).collect()).collect()
            };
            let leaf = |rows: &[u32]| rows.iter().map(|&r| residual[r as usize]).sum::<f64>() / rows.len() as f64;
            let tree = grow_tree(x, &residual, sorted, params.max_depth, params.min_samples_leaf, &leaf);
            for (i, r) in residual.iter_mut().enumerate() {
                *r -= params.learning_rate * tree.predict_row(x.row(i));
            }
            model.trees.push(tree);
        }
        Ok(Fitted::new(model, start))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_rows > 0 && x.n_cols != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.n_cols,
            });
        }
        Ok(x.rows().map(|row| self.predict_row(row)).collect())
    }

    /// Predictions after only the first `n_trees` trees.
    pub fn predict_staged(&self, x: &FeatureMatrix, n_trees: usize) -> Vec<f64> {
        x.rows()
            .map(|row| {
                self.base_prediction
                    + self.learning_rate * self.trees.iter().take(n_trees).map(|t| t.predict_row(row)).sum::<f64>()
            })
            .collect()
    }
}
