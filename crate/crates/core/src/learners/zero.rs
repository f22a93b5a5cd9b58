//! Zero vs. non-zero cardinality classifier (logistic-loss boosting).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::learners::gbdt::{check_training_shape, grow_tree, presort, sample_rows, GbdtParams, RegressionTree};
use crate::learners::Fitted;

/// Probability assigned to the absent class when training sees only one.
pub const SINGLE_CLASS_EPS: f64 = 1e-6;

const LOGIT_LIMIT: f64 = 30.0;

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroClassifier {
    pub n_features: usize,
    pub base_logit: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub threshold: f64,
    /// Training labels were all one class; the model is a constant.
    pub single_class: bool,
}

impl ZeroClassifier {
    pub fn default_params() -> GbdtParams {
        GbdtParams {
            n_trees: 100,
            learning_rate: 0.1,
            ..GbdtParams::default()
        }
    }

    /// `is_zero[i]` labels row `i` as having zero output rows.
    pub fn train(x: &FeatureMatrix, is_zero: &[bool], params: GbdtParams, threshold: f64) -> Result<Fitted<Self>> {
        let start = Instant::now();
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
        }
        let y: Vec<f64> = is_zero.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect();
        check_training_shape(x, &y, &params)?;
        let n = x.n_rows;
        let positives = is_zero.iter().filter(|&&z| z).count();
        let mut model = ZeroClassifier {
            n_features: x.n_cols,
            base_logit: 0.0,
            learning_rate: params.learning_rate,
            trees: Vec::new(),
            threshold,
            single_class: false,
        };
        if positives == 0 || positives == n {
            let p = if positives == 0 { SINGLE_CLASS_EPS } else { 1.0 - SINGLE_CLASS_EPS };
            model.base_logit = logit(p);
            model.single_class = true;
            return Ok(Fitted::new(model, start));
        }
        model.base_logit = logit(positives as f64 / n as f64);

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let full_sort = presort(x, &(0..n as u32).collect::<Vec<_>>());
        let mut score = vec![model.base_logit; n];
        for _ in 0..params.n_trees {
            let p: Vec<f64> = score.iter().map(|&s| sigmoid(s)).collect();
            let grad: Vec<f64> = y.iter().zip(&p).map(|(yi, pi)| yi - pi).collect();
            let sorted = if params.subsample >= 1.0 {
                full_sort.clone()
            } else {
                let rows = sample_rows(n, params.subsample, 2 * params.min_samples_leaf, &mut rng);
                let mut keep = vec![false; n];
                rows.iter().for_each(|&r| keep[r as usize] = true);
                full_sort.iter().map(|o| o.iter().copied().filter(|&r| keep[r as usize]).collect()).collect()
            };
            // one Newton step per leaf
            let leaf = |rows: &[u32]| {
                let num: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
                let den: f64 = rows.iter().map(|&r| p[r as usize] * (1.0 - p[r as usize])).sum();
                num / den.max(1e-12)
            };
            let tree = grow_tree(x, &grad, sorted, params.max_depth, params.min_samples_leaf, &leaf);
            for (i, s) in score.iter_mut().enumerate() {
                *s += params.learning_rate * tree.predict_row(x.row(i));
            }
            model.trees.push(tree);
        }
        Ok(Fitted::new(model, start))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.base_logit + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>();
        sigmoid(z)
    }

    /// Probability of zero output rows for each row of `x`.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_rows > 0 && x.n_cols != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.n_cols,
            });
        }
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }
}
