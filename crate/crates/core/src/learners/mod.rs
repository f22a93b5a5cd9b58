pub mod gbdt;
pub mod refset;
pub mod zero;

use std::time::Instant;

pub use gbdt::{GbdtModel, GbdtParams, RegressionTree, TreeNode};
pub use refset::{ReferenceSetModel, Weighting};
pub use zero::ZeroClassifier;

/// A fitted model and the wall-clock seconds its training (or setup) took.
#[derive(Debug, Clone)]
pub struct Fitted<M> {
    pub model: M,
    pub seconds: f64,
}

impl<M> Fitted<M> {
    pub(crate) fn new(model: M, start: Instant) -> Self {
        Fitted {
            model,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}
