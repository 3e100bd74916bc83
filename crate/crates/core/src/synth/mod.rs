//! Synthetic data generation: a Gaussian mixture chosen by validation
//! likelihood, sampled, then labeled by the best tree-based classifier.

mod gmm;
mod labeler;
mod tree;

pub use gmm::{fit_gmm, GmmFit, GmmModel, GmmOptions};
pub use labeler::{
    default_grid, fit_labeler, label_synthetic, Labeler, LabelerSelection, LabelerSpec,
};
pub use tree::{DecisionTree, RandomForest, SplitCriterion};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_for, tag};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSelection {
    pub best: usize,
    /// `(components, validation score)` for each distinct candidate, ascending.
    pub scores: Vec<(usize, f64)>,
}

/// Fit one mixture per candidate component count on `train` and return the
/// count whose model scores highest on `validation` (smallest count on ties).
/// Each candidate's fit seed depends only on `(seed, count)`, so candidate
/// order does not matter.
pub fn select_components<T: Scalar>(
    train: &Matrix<T>,
    validation: &Matrix<T>,
    candidates: &[usize],
    seed: u64,
    opts: &GmmOptions,
) -> Result<ComponentSelection> {
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() {
        return Err(Error::InvalidInput("no component-count candidates".into()));
    }
    let scores = cands
        .par_iter()
        .map(|&n| {
            let fit = fit_gmm(
                train,
                n,
                derive_seed(seed, &[tag("gmm-select"), n as u64]),
                opts,
            )?;
            Ok((n, fit.model.score(validation)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok(ComponentSelection {
        best: best.0,
        scores,
    })
}

/// Refit with `n_components` on train and validation together, then draw `n_samples` rows.
pub fn sample_synthetic<T: Scalar>(
    train: &Matrix<T>,
    validation: &Matrix<T>,
    n_components: usize,
    n_samples: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<(Matrix<T>, GmmModel<T>)> {
    if n_samples == 0 {
        return Err(Error::InvalidInput(
            "synthetic sample count must be at least 1".into(),
        ));
    }
    let total = train.vstack(validation)?;
    let fit = fit_gmm(
        &total,
        n_components,
        derive_seed(seed, &[tag("gmm-total"), n_components as u64]),
        opts,
    )?;
    let mut rng = rng_for(seed, &[tag("gmm-sample")]);
    let (x, _) = fit.model.sample(n_samples, &mut rng);
    Ok((x, fit.model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn mixture(centers: &[f64], per: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::new();
        for i in 0..per * centers.len() {
            let c = centers[i % centers.len()];
            let z: f64 = rng.sample(StandardNormal);
            let w: f64 = rng.sample(StandardNormal);
            v.extend([c + z, -c + w]);
        }
        Matrix::from_vec(per * centers.len(), 2, v).unwrap()
    }

    #[test]
    fn single_candidate_is_returned() {
        let x = mixture(&[0.0], 50, 1);
        let sel = select_components(&x, &x, &[1], 0, &GmmOptions::default()).unwrap();
        assert_eq!(sel.best, 1);
        assert!(select_components(&x, &x, &[], 0, &GmmOptions::default()).is_err());
    }

    #[test]
    fn candidate_order_is_irrelevant() {
        let tr = mixture(&[0.0, 8.0], 100, 2);
        let va = mixture(&[0.0, 8.0], 100, 3);
        let o = GmmOptions::default();
        let a = select_components(&tr, &va, &[1, 2, 3, 4], 5, &o).unwrap();
        let b = select_components(&tr, &va, &[4, 2, 1, 3, 2], 5, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_shape() {
        let tr = mixture(&[0.0, 8.0], 50, 4);
        let (x, model) = sample_synthetic(&tr, &tr, 2, 1000, 1, &GmmOptions::default()).unwrap();
        assert_eq!((x.rows(), x.cols()), (1000, 2));
        assert_eq!(model.components(), 2);
        assert!(sample_synthetic(&tr, &tr, 2, 0, 1, &GmmOptions::default()).is_err());
    }

    #[test]
    fn occupancy_follows_weights() {
        let model = GmmModel {
            weights: vec![0.2, 0.5, 0.3],
            means: Matrix::from_vec(3, 1, vec![-10.0, 0.0, 10.0]).unwrap(),
            variances: Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]).unwrap(),
        };
        let n = 20_000;
        let (_, comps) = model.sample(n, &mut ChaCha8Rng::seed_from_u64(8));
        for (c, w) in model.weights.iter().enumerate() {
            let k = comps.iter().filter(|&&x| x == c).count() as f64;
            let sigma = (n as f64 * w * (1.0 - w)).sqrt();
            assert!((k - n as f64 * w).abs() < 3.0 * sigma, "component {c}: {k}");
        }
    }
}
