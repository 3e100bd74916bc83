use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

use super::tree::{DecisionTree, RandomForest, SplitCriterion};

/// One labeler configuration in the search grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelerSpec {
    DecisionTree {
        criterion: SplitCriterion,
        max_depth: Option<usize>,
    },
    RandomForest {
        criterion: SplitCriterion,
        max_depth: Option<usize>,
        n_trees: usize,
    },
}

impl fmt::Display for LabelerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let depth = |d: &Option<usize>| d.map_or("unlimited".to_string(), |d| d.to_string());
        let crit = |c: &SplitCriterion| match c {
            SplitCriterion::Gini => "gini",
            SplitCriterion::Entropy => "entropy",
        };
        match self {
            LabelerSpec::DecisionTree {
                criterion,
                max_depth,
            } => {
                write!(
                    f,
                    "decision_tree(criterion={}, max_depth={})",
                    crit(criterion),
                    depth(max_depth)
                )
            }
            LabelerSpec::RandomForest {
                criterion,
                max_depth,
                n_trees,
            } => write!(
                f,
                "random_forest(n_trees={n_trees}, criterion={}, max_depth={})",
                crit(criterion),
                depth(max_depth)
            ),
        }
    }
}

/// Trees over {gini, entropy} x depth {4, 8, 16, unlimited}, then forests of 10 and 50 trees.
pub fn default_grid() -> Vec<LabelerSpec> {
    let mut grid = Vec::new();
    for criterion in [SplitCriterion::Gini, SplitCriterion::Entropy] {
        for max_depth in [Some(4), Some(8), Some(16), None] {
            grid.push(LabelerSpec::DecisionTree {
                criterion,
                max_depth,
            });
        }
    }
    for n_trees in [10, 50] {
        grid.push(LabelerSpec::RandomForest {
            criterion: SplitCriterion::Gini,
            max_depth: None,
            n_trees,
        });
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Model {
    Tree(DecisionTree),
    Forest(RandomForest),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeler {
    pub spec: LabelerSpec,
    dim: usize,
    model: Model,
}

impl Labeler {
    pub fn fit<T: Scalar>(spec: &LabelerSpec, x: &Matrix<T>, y: &[u8], seed: u64) -> Result<Self> {
        let model = match *spec {
            LabelerSpec::DecisionTree {
                criterion,
                max_depth,
            } => Model::Tree(DecisionTree::fit(x, y, criterion, max_depth)?),
            LabelerSpec::RandomForest {
                criterion,
                max_depth,
                n_trees,
            } => Model::Forest(RandomForest::fit(
                x, y, n_trees, criterion, max_depth, seed,
            )?),
        };
        Ok(Labeler {
            spec: spec.clone(),
            dim: x.cols(),
            model,
        })
    }

    pub fn predict<T: Scalar>(&self, x: &Matrix<T>) -> Result<Vec<u8>> {
        if x.cols() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.cols(),
            });
        }
        Ok(x.iter_rows()
            .map(|r| match &self.model {
                Model::Tree(t) => t.predict_row(r),
                Model::Forest(f) => f.predict_row(r),
            })
            .collect())
    }
}

fn accuracy(pred: &[u8], y: &[u8]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct LabelerSelection {
    pub labeler: Labeler,
    /// Validation accuracy of every grid entry, in grid order.
    pub results: Vec<(LabelerSpec, f64)>,
}

/// Train every grid entry on the training split and keep the one with the
/// highest validation accuracy (first in grid order on ties).
pub fn fit_labeler<T: Scalar>(
    train_x: &Matrix<T>,
    train_y: &[u8],
    val_x: &Matrix<T>,
    val_y: &[u8],
    grid: &[LabelerSpec],
    seed: u64,
) -> Result<LabelerSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("labeler grid is empty".into()));
    }
    if val_x.rows() != val_y.len() {
        return Err(Error::DimMismatch {
            expected: val_x.rows(),
            got: val_y.len(),
        });
    }
    let fitted = grid
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let l = Labeler::fit(spec, train_x, train_y, derive_seed(seed, &[i as u64]))?;
            let acc = accuracy(&l.predict(val_x)?, val_y);
            Ok((l, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = fitted.iter().map(|(l, a)| (l.spec.clone(), *a)).collect();
    let mut best = 0;
    for (i, (_, a)) in fitted.iter().enumerate() {
        if *a > fitted[best].1 {
            best = i;
        }
    }
    let labeler = fitted
        .into_iter()
        .nth(best)
        .map(|(l, _)| l)
        .expect("non-empty grid");
    Ok(LabelerSelection { labeler, results })
}

pub fn label_synthetic<T: Scalar>(labeler: &Labeler, x: &Matrix<T>) -> Result<Vec<u8>> {
    labeler.predict(x)
}
