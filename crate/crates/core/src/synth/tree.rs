//! CART decision trees and bagged random forests for binary labels.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
    Entropy,
}

impl SplitCriterion {
    /// Impurity of a node holding `pos` positives out of `n`.
    fn impurity(self, pos: f64, n: f64) -> f64 {
        if n <= 0.0 {
            return 0.0;
        }
        let p = pos / n;
        match self {
            SplitCriterion::Gini => 2.0 * p * (1.0 - p),
            SplitCriterion::Entropy => {
                let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
                h(p) + h(1.0 - p)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        label: u8,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub criterion: SplitCriterion,
    pub max_depth: Option<usize>,
    nodes: Vec<Node>,
    dim: usize,
}

struct Builder<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [u8],
    criterion: SplitCriterion,
    max_depth: Option<usize>,
    /// Features examined per split; all of them when `None`.
    max_features: Option<usize>,
    nodes: Vec<Node>,
}

impl<T: Scalar> Builder<'_, T> {
    fn majority(&self, idx: &[usize]) -> u8 {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        // ties go to the disorder class
        u8::from(2 * pos >= idx.len())
    }

    /// Best `(feature, threshold, gain)` over the candidate features.
    fn best_split<R: Rng>(&self, idx: &[usize], rng: &mut R) -> Option<(usize, f64, f64)> {
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.y[i] == 1).count() as f64;
        let parent = self.criterion.impurity(total_pos, n);
        let d = self.x.cols();
        let features: Vec<usize> = match self.max_features {
            Some(m) if m < d => {
                let mut f = sample_indices(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let mut best: Option<(usize, f64, f64)> = None;
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for f in features {
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x.get(i, f).as_f64(), self.y[i])));
            vals.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if vals[0].0 == vals[vals.len() - 1].0 {
                continue;
            }
            let mut left_pos = 0.0;
            for s in 1..vals.len() {
                left_pos += f64::from(vals[s - 1].1);
                if vals[s].0 == vals[s - 1].0 {
                    continue;
                }
                let nl = s as f64;
                let nr = n - nl;
                let child = (nl * self.criterion.impurity(left_pos, nl)
                    + nr * self.criterion.impurity(total_pos - left_pos, nr))
                    / n;
                let gain = parent - child;
                if best.is_none_or(|b| gain > b.2 + 1e-12) {
                    let threshold = 0.5 * (vals[s - 1].0 + vals[s].0);
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.filter(|b| b.2 > 0.0)
    }

    fn grow<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        let label = self.majority(&idx);
        self.nodes.push(Node::Leaf { label });
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if pure || self.max_depth.is_some_and(|m| depth >= m) || idx.len() < 2 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x.get(i, feature).as_f64() <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn check_training<T: Scalar>(x: &Matrix<T>, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::InvalidInput(
            "training set holds a single class".into(),
        ));
    }
    Ok(())
}

impl DecisionTree {
    pub fn fit<T: Scalar>(
        x: &Matrix<T>,
        y: &[u8],
        criterion: SplitCriterion,
        max_depth: Option<usize>,
    ) -> Result<Self> {
        check_training(x, y)?;
        let mut rng = rng_for(0, &[]);
        Ok(Self::fit_rows(
            x,
            y,
            (0..x.rows()).collect(),
            criterion,
            max_depth,
            None,
            &mut rng,
        ))
    }

    fn fit_rows<T: Scalar, R: Rng>(
        x: &Matrix<T>,
        y: &[u8],
        rows: Vec<usize>,
        criterion: SplitCriterion,
        max_depth: Option<usize>,
        max_features: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            criterion,
            max_depth,
            max_features,
            nodes: Vec::new(),
        };
        b.grow(rows, 0, rng);
        DecisionTree {
            criterion,
            max_depth,
            nodes: b.nodes,
            dim: x.cols(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict_row<T: Scalar>(&self, row: &[T]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label } => return label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature].as_f64() <= threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Bootstrap-sampled trees, each split drawing `sqrt(dim)` candidate features.
    pub fn fit<T: Scalar>(
        x: &Matrix<T>,
        y: &[u8],
        n_trees: usize,
        criterion: SplitCriterion,
        max_depth: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        check_training(x, y)?;
        if n_trees == 0 {
            return Err(Error::InvalidInput("forest needs at least one tree".into()));
        }
        let n = x.rows();
        let m = ((x.cols() as f64).sqrt().round() as usize).max(1);
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = rng_for(seed, &[t as u64]);
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                DecisionTree::fit_rows(x, y, rows, criterion, max_depth, Some(m), &mut rng)
            })
            .collect();
        Ok(RandomForest { trees })
    }

    pub fn predict_row<T: Scalar>(&self, row: &[T]) -> u8 {
        let pos = self
            .trees
            .iter()
            .filter(|t| t.predict_row(row) == 1)
            .count();
        u8::from(2 * pos >= self.trees.len())
    }
}
