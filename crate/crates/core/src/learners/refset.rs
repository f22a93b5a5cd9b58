//! Reference-set regressor: setup stores labeled rows verbatim and prediction
//! averages the targets of the nearest stored rows. Refreshing the model means
//! calling [`ReferenceSetModel::setup`] with a new reference set; nothing is
//! optimized.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::learners::Fitted;

pub const INVERSE_DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    InverseDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSetModel {
    pub reference_features: FeatureMatrix,
    pub reference_targets: Vec<f64>,
    pub k_neighbors: usize,
    pub weighting: Weighting,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ReferenceSetModel {
    pub fn setup(x: &FeatureMatrix, y: &[f64], k_neighbors: usize, weighting: Weighting) -> Result<Fitted<Self>> {
        let start = Instant::now();
        if x.n_rows != y.len() {
            return Err(Error::invalid(format!("{} rows but {} targets", x.n_rows, y.len())));
        }
        if x.n_rows == 0 {
            return Err(Error::EmptyTraining);
        }
        if k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be positive"));
        }
        if k_neighbors > x.n_rows {
            return Err(Error::KExceedsReference {
                k: k_neighbors,
                size: x.n_rows,
            });
        }
        let model = ReferenceSetModel {
            reference_features: x.clone(),
            reference_targets: y.to_vec(),
            k_neighbors,
            weighting,
        };
        Ok(Fitted::new(model, start))
    }

    pub fn reference_size(&self) -> usize {
        self.reference_targets.len()
    }

    /// Indices and distances of the k nearest reference rows, nearest first,
    /// ties broken by reference index.
    pub fn neighbors(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = self
            .reference_features
            .rows()
            .map(|r| squared_distance(r, query))
            .enumerate()
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        let k = self.k_neighbors;
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    }

    pub fn predict_row(&self, query: &[f64]) -> f64 {
        let nn = self.neighbors(query);
        match self.weighting {
            Weighting::Uniform => nn.iter().map(|(i, _)| self.reference_targets[*i]).sum::<f64>() / nn.len() as f64,
            Weighting::InverseDistance => {
                let (mut num, mut den) = (0.0, 0.0);
                for (i, dist) in &nn {
                    let w = 1.0 / (dist + INVERSE_DISTANCE_EPS);
                    num += w * self.reference_targets[*i];
                    den += w;
                }
                num / den
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_rows > 0 && x.n_cols != self.reference_features.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.reference_features.n_cols,
                actual: x.n_cols,
            });
        }
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }
}
