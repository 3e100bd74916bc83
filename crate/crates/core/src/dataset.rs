//! Subject-disjoint partitions, z-score normalization and SMOTE up-sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::matrix::Matrix;
use crate::rng::{rng_for, tag};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// `(train, validation, test)` subject counts for a class of `n` subjects:
/// validation and test each get `round(n / 5)`, train keeps the rest.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize)> {
    let block = ((n as f64 * 0.2).round() as usize).max(1);
    if n < 3 || n < 2 * block + 1 {
        return Err(Error::InvalidInput(format!(
            "a class with {n} subjects cannot fill train, validation and test (need at least 3)"
        )));
    }
    Ok((n - 2 * block, block, block))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub partition_index: u8,
    pub seed: u64,
    /// Per class: `[train, validation, test]` subject counts.
    pub counts: BTreeMap<Label, [usize; 3]>,
    pub assignment: BTreeMap<String, Split>,
}

impl PartitionScheme {
    pub fn split_of(&self, participant_id: &str) -> Option<Split> {
        self.assignment.get(participant_id).copied()
    }

    pub fn members(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("partition", e))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("partition", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Assign every participant to one split. Each class is shuffled once by
/// `seed`; partition `p` then takes block `p - 1` of that order as test and
/// block `p` as validation (blocks wrap around), so consecutive partitions
/// hand their validation subjects on as the next partition's test subjects.
pub fn partition(
    participants: &[(String, Label)],
    partition_index: u8,
    seed: u64,
) -> Result<PartitionScheme> {
    if !(1..=3).contains(&partition_index) {
        return Err(Error::config(
            "partition",
            format!("must be 1, 2 or 3, got {partition_index}"),
        ));
    }
    let mut counts = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    for label in Label::ALL {
        let mut ids: Vec<&str> = participants
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(p, _)| p.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "duplicate participant id in class {label}"
            )));
        }
        let (train, block, _) = split_sizes(ids.len())
            .map_err(|e| Error::InvalidInput(format!("class {label}: {e}")))?;
        let mut rng = rng_for(seed, &[tag("partition"), label as u64]);
        ids.shuffle(&mut rng);
        let n = ids.len();
        let p = partition_index as usize;
        let test_start = (p - 1) * block;
        let val_start = p * block;
        for (pos, id) in ids.iter().enumerate() {
            let in_block = |start: usize| (pos + n - start % n) % n < block;
            let split = if in_block(test_start) {
                Split::Test
            } else if in_block(val_start) {
                Split::Validation
            } else {
                Split::Train
            };
            assignment.insert(id.to_string(), split);
        }
        counts.insert(label, [train, block, block]);
    }
    Ok(PartitionScheme {
        partition_index,
        seed,
        counts,
        assignment,
    })
}

/// Per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// Fit mean and population std on the training rows; stds below
/// [`STD_FLOOR`] are floored (with a warning).
pub fn normalize_fit<T: Scalar>(train: &Matrix<T>) -> Result<NormStats<T>> {
    if train.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit normalization on an empty training set".into(),
        ));
    }
    let n = train.rows() as f64;
    let d = train.cols();
    let mut mean = vec![0.0f64; d];
    for r in train.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for r in train.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            let dv = v.as_f64() - m;
            *s += dv * dv;
        }
    }
    let mut floored = 0;
    let std: Vec<T> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < STD_FLOOR {
                floored += 1;
                T::of(STD_FLOOR)
            } else {
                T::of(sd)
            }
        })
        .collect();
    if floored > 0 {
        log::warn!("{floored} zero-variance feature(s): std floored at {STD_FLOOR:e}");
    }
    Ok(NormStats {
        mean: mean.into_iter().map(T::of).collect(),
        std,
    })
}

impl<T: Scalar> NormStats<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &mut [T]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - *m) / *s;
        }
    }
}

pub fn normalize_apply<T: Scalar>(stats: &NormStats<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != stats.dim() && !x.is_empty() {
        return Err(Error::DimMismatch {
            expected: stats.dim(),
            got: x.cols(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        stats.apply_row(out.row_mut(i));
    }
    Ok(out)
}

/// Provenance of one synthetic SMOTE point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoteOrigin<T> {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: T,
}

#[derive(Clone, Debug)]
pub struct SmoteOutput<T> {
    /// The minority rows followed by the synthetic rows.
    pub samples: Matrix<T>,
    /// One entry per synthetic row, indices into the minority input.
    pub origins: Vec<SmoteOrigin<T>>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

fn nearest<T: Scalar>(x: &Matrix<T>, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(T, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(x.row(i), x.row(j)), j))
        .collect();
    let by = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    d.select_nth_unstable_by(k - 1, by);
    d.truncate(k);
    d.sort_by(by);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Grow the minority class to `target_count` rows. Base points are visited
/// round-robin in a seeded order; each synthetic point is
/// `x + lambda * (x_nn - x)` with `x_nn` drawn uniformly from the `k` nearest
/// minority neighbours of `x` and `lambda ~ U[0, 1)`.
pub fn smote<T: Scalar>(
    minority: &Matrix<T>,
    target_count: usize,
    k: usize,
    seed: u64,
) -> Result<SmoteOutput<T>> {
    let n = minority.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "SMOTE needs at least 2 minority rows, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "SMOTE k = {k} must satisfy 1 <= k < {n} (minority count)"
        )));
    }
    if target_count < n {
        return Err(Error::InvalidInput(format!(
            "SMOTE target {target_count} is below the minority count {n}"
        )));
    }
    let needed = target_count - n;
    let mut rng = rng_for(seed, &[tag("smote")]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut synth = Matrix::zeros(needed, minority.cols());
    let mut origins = Vec::with_capacity(needed);
    for s in 0..needed {
        let base = order[s % n];
        let nn = neighbors[base].get_or_insert_with(|| nearest(minority, base, k));
        let neighbor = nn[rng.gen_range(0..k)];
        let lambda = T::of(rng.gen::<f64>());
        let (xb, xn) = (minority.row(base), minority.row(neighbor));
        for (o, (a, b)) in synth.row_mut(s).iter_mut().zip(xb.iter().zip(xn)) {
            *o = *a + lambda * (*b - *a);
        }
        origins.push(SmoteOrigin {
            base,
            neighbor,
            lambda,
        });
    }
    Ok(SmoteOutput {
        samples: minority.vstack(&synth)?,
        origins,
    })
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn distance_to_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (p.iter()
            .zip(a)
            .zip(&ab)
            .map(|((pi, ai), d)| (pi - ai) * d)
            .sum::<f64>()
            / len2)
            .clamp(0.0, 1.0)
    };
    p.iter()
        .zip(a)
        .zip(&ab)
        .map(|((pi, ai), d)| (pi - ai - t * d).powi(2))
        .sum::<f64>()
        .sqrt()
}
