//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_for;
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iter: 200,
            tol: 1e-4,
            var_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmModel<T> {
    pub weights: Vec<T>,
    /// `components x dim`
    pub means: Matrix<T>,
    /// `components x dim`, every entry at least the variance floor.
    pub variances: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct GmmFit<T> {
    pub model: GmmModel<T>,
    /// Mean per-sample log-likelihood of each iterate, the last entry being the returned model.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Iterations in which an empty component was re-seeded.
    pub reseeded: Vec<usize>,
}

/// Per-component constants for fast log-density evaluation.
struct Prepared {
    consts: Vec<f64>,
    means: Vec<Vec<f64>>,
    inv_var: Vec<Vec<f64>>,
}

impl Prepared {
    fn new<T: Scalar>(m: &GmmModel<T>) -> Self {
        let k = m.weights.len();
        let mut consts = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut inv_var = Vec::with_capacity(k);
        for c in 0..k {
            let var: Vec<f64> = m.variances.row(c).iter().map(|v| v.as_f64()).collect();
            let log_det: f64 = var.iter().map(|v| v.ln() + LN_2PI).sum();
            consts.push(m.weights[c].as_f64().ln() - 0.5 * log_det);
            means.push(m.means.row(c).iter().map(|v| v.as_f64()).collect());
            inv_var.push(var.iter().map(|v| 1.0 / v).collect());
        }
        Prepared {
            consts,
            means,
            inv_var,
        }
    }

    /// Joint log-densities `ln w_c + ln N(x | c)` written into `out`; returns their log-sum-exp.
    fn joint<T: Scalar>(&self, x: &[T], out: &mut [f64]) -> f64 {
        for (c, o) in out.iter_mut().enumerate() {
            let (mu, iv) = (&self.means[c], &self.inv_var[c]);
            let mut q = 0.0;
            for d in 0..x.len() {
                let z = x[d].as_f64() - mu[d];
                q += z * z * iv[d];
            }
            *o = self.consts[c] - 0.5 * q;
        }
        log_sum_exp(out)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<T: Scalar> GmmModel<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    fn check_dim(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Log-likelihood of every row.
    pub fn log_likelihoods(&self, x: &Matrix<T>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let prep = Prepared::new(self);
        Ok((0..x.rows())
            .into_par_iter()
            .map_init(
                || vec![0.0; self.components()],
                |buf, i| prep.joint(x.row(i), buf),
            )
            .collect())
    }

    /// Mean per-sample log-likelihood.
    pub fn score(&self, x: &Matrix<T>) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty sample".into()));
        }
        let ll = self.log_likelihoods(x)?;
        Ok(ll.iter().sum::<f64>() / ll.len() as f64)
    }

    /// Draw `n` rows: a component by weight, then an independent Gaussian per dimension.
    /// Also returns the component of each row.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> (Matrix<T>, Vec<usize>) {
        let d = self.dim();
        let cum: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w.as_f64();
                Some(*acc)
            })
            .collect();
        let total = *cum.last().unwrap_or(&1.0);
        let sd: Vec<Vec<f64>> = (0..self.components())
            .map(|c| {
                self.variances
                    .row(c)
                    .iter()
                    .map(|v| v.as_f64().sqrt())
                    .collect()
            })
            .collect();
        let mut out = Matrix::zeros(n, d);
        let mut comps = Vec::with_capacity(n);
        for i in 0..n {
            let u = rng.gen::<f64>() * total;
            let c = cum
                .iter()
                .position(|&cw| u < cw)
                .unwrap_or(self.components() - 1);
            let mu = self.means.row(c);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *o = T::of(mu[j].as_f64() + sd[c][j] * z);
            }
            comps.push(c);
        }
        (out, comps)
    }
}

fn column_variance<T: Scalar>(x: &Matrix<T>, floor: f64) -> Vec<f64> {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v.as_f64() - m).powi(2);
        }
    }
    var.into_iter().map(|s| (s / n).max(floor)).collect()
}

fn sq_dist<T: Scalar>(a: &[T], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y).powi(2)).sum()
}

/// Pick `k` distinct data rows as initial means: the first uniformly, each
/// further one with probability proportional to its squared distance from the
/// nearest mean chosen so far.
fn seed_means<T: Scalar, R: Rng>(x: &Matrix<T>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.rows();
    let first = rng.gen_range(0..n);
    let mut chosen = vec![first];
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().map(|v| v.as_f64()).collect() };
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(_, d)| d)
            .sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if chosen.contains(&i) || *d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if u < *d {
                    break;
                }
                u -= d;
            }
            pick
        } else {
            None
        };
        // every remaining row coincides with a chosen one: fall back to uniform
        let next = next.unwrap_or_else(|| {
            let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            rest[sample_indices(rng, rest.len(), 1).index(0)]
        });
        let m = row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &m));
        }
        chosen.push(next);
    }
    chosen
}

const LLOYD_STEPS: usize = 10;

/// Starting model from a few k-means steps begun at the seeded rows: weights,
/// means and variances of the resulting hard clusters. A cluster that ends up
/// empty keeps its seed row with the global variance.
fn hard_start<T: Scalar>(
    x: &Matrix<T>,
    init: &[usize],
    global_var: &[f64],
    floor: f64,
) -> Result<GmmModel<T>> {
    let (n, d, k) = (x.rows(), x.cols(), init.len());
    let mut centers: Vec<Vec<f64>> = init
        .iter()
        .map(|&i| x.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let mut assign = vec![0usize; n];
    for step in 0..LLOYD_STEPS {
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = x.row(i);
                let mut best = (f64::INFINITY, 0);
                for (c, m) in centers.iter().enumerate() {
                    let dist = sq_dist(row, m);
                    if dist < best.0 {
                        best = (dist, c);
                    }
                }
                best.1
            })
            .collect();
        if step > 0 && next == assign {
            break;
        }
        assign = next;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.row(i)) {
                *s += v.as_f64();
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut counts = vec![0usize; k];
    let mut var = vec![vec![0.0; d]; k];
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        for ((s, v), m) in var[c].iter_mut().zip(x.row(i)).zip(&centers[c]) {
            *s += (v.as_f64() - m).powi(2);
        }
    }
    let mut weights = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k * d);
    for c in 0..k {
        if counts[c] > 1 {
            variances.extend(
                var[c]
                    .iter()
                    .map(|s| T::of((s / counts[c] as f64).max(floor))),
            );
        } else {
            variances.extend(global_var.iter().map(|&v| T::of(v)));
        }
        weights.push(T::of(counts[c].max(1) as f64 / (n + k) as f64));
    }
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    weights
        .iter_mut()
        .for_each(|w| *w = T::of(w.as_f64() / total));
    Ok(GmmModel {
        weights,
        means: Matrix::from_vec(k, d, centers.into_iter().flatten().map(T::of).collect())?,
        variances: Matrix::from_vec(k, d, variances)?,
    })
}

/// Fit an `n_components` mixture to the rows of `x`.
pub fn fit_gmm<T: Scalar>(
    x: &Matrix<T>,
    n_components: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<GmmFit<T>> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "cannot fit a mixture to an empty sample".into(),
        ));
    }
    if n_components == 0 {
        return Err(Error::InvalidInput(
            "mixture needs at least one component".into(),
        ));
    }
    if n_components > n {
        return Err(Error::InvalidInput(format!(
            "{n_components} components requested for only {n} samples"
        )));
    }
    let k = n_components;
    let mut rng = rng_for(seed, &[]);
    let global_var = column_variance(x, opts.var_floor);

    let init = seed_means(x, k, &mut rng);
    let mut model = hard_start(x, &init, &global_var, opts.var_floor)?;

    let mut history = Vec::new();
    let mut reseeded = Vec::new();
    let mut converged = false;
    let mut resp = vec![0.0f64; n * k];
    for iter in 0..opts.max_iter.max(1) {
        // E-step
        let prep = Prepared::new(&model);
        let lls: Vec<f64> = resp
            .par_chunks_mut(k)
            .enumerate()
            .map(|(i, r)| {
                let lse = prep.joint(x.row(i), r);
                r.iter_mut().for_each(|v| *v = (*v - lse).exp());
                lse
            })
            .collect();
        let ll = lls.iter().sum::<f64>() / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numeric(format!(
                "mixture log-likelihood became {ll} at iteration {iter}"
            )));
        }
        let improvement = history.last().map(|p| ll - p);
        history.push(ll);
        if improvement.is_some_and(|imp| imp < opts.tol) {
            converged = true;
            break;
        }
        if iter + 1 == opts.max_iter {
            break;
        }

        // M-step, one component per task
        let updated: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..k)
            .into_par_iter()
            .map(|c| {
                let mut nk = 0.0;
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    let r = resp[i * k + c];
                    nk += r;
                    if r != 0.0 {
                        for (m, v) in mean.iter_mut().zip(x.row(i)) {
                            *m += r * v.as_f64();
                        }
                    }
                }
                if nk <= 0.0 || !nk.is_finite() {
                    return (0.0, mean, vec![0.0; d]);
                }
                mean.iter_mut().for_each(|m| *m /= nk);
                let mut var = vec![0.0; d];
                for i in 0..n {
                    let r = resp[i * k + c];
                    if r != 0.0 {
                        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                            *s += r * (v.as_f64() - m).powi(2);
                        }
                    }
                }
                var.iter_mut()
                    .for_each(|s| *s = (*s / nk).max(opts.var_floor));
                (nk, mean, var)
            })
            .collect();
        let mut any_reseed = false;
        for (c, (nk, mean, var)) in updated.into_iter().enumerate() {
            if nk < 1e-10 * n as f64 {
                let i = rng.gen_range(0..n);
                model.means.row_mut(c).copy_from_slice(x.row(i));
                for (o, v) in model.variances.row_mut(c).iter_mut().zip(&global_var) {
                    *o = T::of(*v);
                }
                model.weights[c] = T::of(1.0 / n as f64);
                any_reseed = true;
            } else {
                model.weights[c] = T::of(nk / n as f64);
                for (o, v) in model.means.row_mut(c).iter_mut().zip(&mean) {
                    *o = T::of(*v);
                }
                for (o, v) in model.variances.row_mut(c).iter_mut().zip(&var) {
                    *o = T::of(*v);
                }
            }
        }
        if any_reseed {
            reseeded.push(iter);
        }
        let total: T = model.weights.iter().copied().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(GmmFit {
        model,
        history,
        converged,
        reseeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(centers: &[(f64, f64)], per: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::new();
        for i in 0..per * centers.len() {
            let (cx, cy) = centers[i % centers.len()];
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            v.extend([cx + a, cy + b]);
        }
        Matrix::from_vec(per * centers.len(), 2, v).unwrap()
    }

    #[test]
    fn single_component_is_the_sample_mle() {
        let x = Matrix::<f64>::from_vec(2, 2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let fit = fit_gmm(&x, 1, 0, &GmmOptions::default()).unwrap();
        assert_eq!(fit.model.weights, vec![1.0]);
        assert!((fit.model.means.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((fit.model.means.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((fit.model.variances.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_score() {
        let m = GmmModel {
            weights: vec![1.0],
            means: Matrix::from_vec(1, 1, vec![0.0]).unwrap(),
            variances: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        };
        let s = m
            .score(&Matrix::from_vec(1, 1, vec![0.0]).unwrap())
            .unwrap();
        assert!((s + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((s + 0.9189).abs() < 1e-4);
        assert!(m
            .score(&Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap())
            .is_err());
    }

    #[test]
    fn score_falls_as_data_moves_away() {
        let x = blobs(&[(0.0, 0.0), (5.0, 5.0)], 200, 1);
        let fit = fit_gmm(&x, 2, 3, &GmmOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for shift in [10.0, 20.0, 40.0, 80.0] {
            let moved = Matrix::from_vec(1, 2, vec![5.0 + shift, 5.0 + shift]).unwrap();
            let s = fit.model.score(&moved).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn recovers_two_separated_means() {
        let x = blobs(&[(0.0, 0.0), (5.0, 5.0)], 1000, 42);
        let fit = fit_gmm(&x, 2, 7, &GmmOptions::default()).unwrap();
        let mut means: Vec<(f64, f64)> = (0..2)
            .map(|c| (fit.model.means.get(c, 0), fit.model.means.get(c, 1)))
            .collect();
        means.sort_by(|a, b| a.0.total_cmp(&b.0));
        for ((mx, my), (tx, ty)) in means.iter().zip([(0.0, 0.0), (5.0, 5.0)]) {
            assert!(((mx - tx).powi(2) + (my - ty).powi(2)).sqrt() < 0.15);
        }
        assert!(fit.history.windows(2).all(|w| w[1] - w[0] >= -1e-9));
        let final_score = fit.model.score(&x).unwrap();
        assert!((final_score - fit.history.last().unwrap()).abs() < 1e-9);
        assert!(fit.history.iter().all(|&h| final_score >= h - 1e-9));
    }

    #[test]
    fn too_many_components_is_an_error() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(fit_gmm(&x, 3, 0, &GmmOptions::default()).is_err());
        assert!(fit_gmm(&x, 0, 0, &GmmOptions::default()).is_err());
    }

    #[test]
    fn duplicate_rows_still_fit() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let fit = fit_gmm(&x, 2, 0, &GmmOptions::default()).unwrap();
        assert!(fit.model.variances.as_slice().iter().all(|&v| v >= 1e-6));
        let w: f64 = fit.model.weights.iter().sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_component_samples_hug_the_mean() {
        let m = GmmModel {
            weights: vec![1.0f64],
            means: Matrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap(),
            variances: Matrix::from_vec(1, 2, vec![1e-6, 1e-6]).unwrap(),
        };
        let (s, _) = m.sample(2000, &mut ChaCha8Rng::seed_from_u64(0));
        let tol = 3.0 * 1e-6f64.sqrt();
        // 3 sd covers all but ~0.3%; allow a few excursions out of 4000 draws
        let outside = s
            .as_slice()
            .chunks(2)
            .filter(|r| (r[0] - 3.0).abs() > tol || (r[1] + 1.0).abs() > tol)
            .count();
        assert!(outside < 30, "{outside}");
    }
}
