//! Fully-connected network with a binary mask per weight matrix. Hidden layers
//! use ReLU; the output layer produces two logits scored with softmax
//! cross-entropy. Pruned weights are held at exactly zero.

mod kernels;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_for;
use crate::scalar::Scalar;

/// One dense layer mapping `inputs` to `outputs`; weights are `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    /// Same shape as `weights`, entries 0 or 1.
    pub mask: Vec<u8>,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn active_weights(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// `W = W * Mask`.
    pub fn apply_mask(&mut self) {
        for (w, &m) in self.weights.as_mut_slice().iter_mut().zip(&self.mask) {
            if m == 0 {
                *w = T::zero();
            }
        }
    }

    pub fn mask_holds(&self) -> bool {
        self.weights
            .as_slice()
            .iter()
            .zip(&self.mask)
            .all(|(w, &m)| m == 1 || *w == T::zero())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MaskedMlp<T> {
    pub layers: Vec<Layer<T>>,
}

/// Gradients of the mean loss, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub bias: Vec<Vec<T>>,
    /// Mean cross-entropy of the batch at the evaluated weights.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Parameter and FLOP counts of a network against its dense counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostStats {
    pub params: usize,
    pub flops: usize,
    pub dense_params: usize,
    pub dense_flops: usize,
}

impl CostStats {
    pub fn param_compression(&self) -> f64 {
        self.dense_params as f64 / self.params as f64
    }

    pub fn flop_compression(&self) -> f64 {
        self.dense_flops as f64 / self.flops as f64
    }

    /// `645.1k (1.0x)` style summaries.
    pub fn describe_params(&self) -> String {
        format!(
            "{:.1}k ({:.1}x)",
            self.params as f64 / 1000.0,
            self.param_compression()
        )
    }

    pub fn describe_flops(&self) -> String {
        format!(
            "{:.1}k ({:.1}x)",
            self.flops as f64 / 1000.0,
            self.flop_compression()
        )
    }
}

/// Dense parameter count of a layer-size chain: sum of `n_i * n_{i+1} + n_{i+1}`.
pub fn dense_params(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn softmax_row<T: Scalar>(z: &mut [T]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// `-ln softmax(z)[label]`, computed in f64.
fn cross_entropy<T: Scalar>(z: &[T], label: usize) -> f64 {
    let m = z
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
    lse - z[label].as_f64()
}

pub fn init_mlp<T: Scalar>(layer_sizes: &[usize], seed: u64) -> Result<MaskedMlp<T>> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(
            "layer_sizes",
            "need an input and an output width",
        ));
    }
    if let Some(w) = layer_sizes.iter().find(|&&w| w == 0) {
        return Err(Error::config(
            "layer_sizes",
            format!("non-positive width {w}"),
        ));
    }
    if layer_sizes.last() != Some(&2) {
        return Err(Error::config("layer_sizes", "output width must be 2"));
    }
    let mut rng = rng_for(seed, &[]);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let data = (0..n_in * n_out)
                .map(|_| T::of(rng.gen_range(-limit..limit)))
                .collect();
            Layer {
                weights: Matrix::from_vec(n_out, n_in, data).expect("shape"),
                bias: vec![T::zero(); n_out],
                mask: vec![1; n_in * n_out],
            }
        })
        .collect();
    Ok(MaskedMlp { layers })
}

impl<T: Scalar> MaskedMlp<T> {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Structural checks: shapes chain, masks are binary, pruned weights are zero.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.outputs() || l.mask.len() != l.outputs() * l.inputs() {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: bias or mask shape mismatch"
                )));
            }
            if l.mask.iter().any(|&m| m > 1) {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: mask is not binary"
                )));
            }
            if !l.mask_holds() {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: pruned weight is non-zero"
                )));
            }
            if i > 0 && self.layers[i - 1].outputs() != l.inputs() {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: input width does not chain"
                )));
            }
        }
        if self.layers.last().map(Layer::outputs) != Some(2) {
            return Err(Error::InvalidInput("output width must be 2".into()));
        }
        Ok(())
    }

    pub fn mask_holds(&self) -> bool {
        self.layers.iter().all(Layer::mask_holds)
    }

    pub fn apply_masks(&mut self) {
        self.layers.iter_mut().for_each(Layer::apply_mask);
    }

    fn check_batch(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn forward_cache(&self, x: &Matrix<T>) -> Vec<Vec<T>> {
        let b = x.rows();
        let mut pre: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut act: Vec<T> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let input: &[T] = if i == 0 { x.as_slice() } else { &act };
            let mut z = vec![T::zero(); b * l.outputs()];
            kernels::matmul_nt(input, l.weights.as_slice(), &l.bias, l.inputs(), &mut z);
            act = z.iter().map(|&v| v.max(T::zero())).collect();
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_batch(x)?;
        let z = self.forward_cache(x).pop().unwrap_or_default();
        Matrix::from_vec(x.rows(), 2, z)
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut p = self.logits(x)?;
        for i in 0..p.rows() {
            softmax_row(p.row_mut(i));
        }
        Ok(p)
    }

    /// Predicted class per row; equal probabilities go to class 1.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u8>> {
        let z = self.logits(x)?;
        Ok(z.iter_rows().map(|r| u8::from(r[1] >= r[0])).collect())
    }

    pub fn accuracy(&self, x: &Matrix<T>, y: &[u8]) -> Result<f64> {
        if x.rows() != y.len() {
            return Err(Error::DimMismatch {
                expected: x.rows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::InvalidInput("accuracy of an empty set".into()));
        }
        let p = self.predict(x)?;
        Ok(p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &Matrix<T>, y: &[u8]) -> Result<f64> {
        let z = self.logits(x)?;
        check_labels(x, y)?;
        Ok(z.iter_rows()
            .zip(y)
            .map(|(r, &l)| cross_entropy(r, l as usize))
            .sum::<f64>()
            / y.len() as f64)
    }

    /// Exact gradients of the mean cross-entropy. Entries of masked weights are zero.
    pub fn backward(&self, x: &Matrix<T>, y: &[u8]) -> Result<Gradients<T>> {
        self.check_batch(x)?;
        check_labels(x, y)?;
        let b = x.rows();
        let pre = self.forward_cache(x);
        let logits = pre.last().expect("at least one layer");
        let inv_b = T::of(1.0 / b as f64);
        let mut loss = 0.0;
        let mut delta = logits.clone();
        for (r, &label) in y.iter().enumerate() {
            let row = &mut delta[r * 2..r * 2 + 2];
            loss += cross_entropy(row, label as usize);
            softmax_row(row);
            row[label as usize] -= T::one();
            row.iter_mut().for_each(|v| *v *= inv_b);
        }
        let n_layers = self.layers.len();
        let mut gw: Vec<Matrix<T>> = Vec::with_capacity(n_layers);
        let mut gb: Vec<Vec<T>> = Vec::with_capacity(n_layers);
        for li in (0..n_layers).rev() {
            let l = &self.layers[li];
            let (m_out, k) = (l.outputs(), l.inputs());
            let input: Vec<T>;
            let a: &[T] = if li == 0 {
                x.as_slice()
            } else {
                input = pre[li - 1].iter().map(|&v| v.max(T::zero())).collect();
                &input
            };
            let mut g = vec![T::zero(); m_out * k];
            kernels::matmul_tn(&delta, a, b, m_out, k, &mut g);
            for (gv, &m) in g.iter_mut().zip(&l.mask) {
                if m == 0 {
                    *gv = T::zero();
                }
            }
            let mut bias = vec![T::zero(); m_out];
            for r in 0..b {
                for (bv, d) in bias.iter_mut().zip(&delta[r * m_out..(r + 1) * m_out]) {
                    *bv += *d;
                }
            }
            if li > 0 {
                let mut da = vec![T::zero(); b * k];
                kernels::matmul_nn(&delta, l.weights.as_slice(), m_out, k, &mut da);
                for (d, z) in da.iter_mut().zip(&pre[li - 1]) {
                    if *z <= T::zero() {
                        *d = T::zero();
                    }
                }
                delta = da;
            }
            gw.push(Matrix::from_vec(m_out, k, g)?);
            gb.push(bias);
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients {
            weights: gw,
            bias: gb,
            loss: loss / b as f64,
        })
    }

    /// One SGD step `w -= lr * g`, then re-apply the masks.
    pub fn sgd_step(&mut self, g: &Gradients<T>, lr: T) {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&g.weights).zip(&g.bias) {
            for (w, d) in l.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= lr * *d;
            }
            for (w, d) in l.bias.iter_mut().zip(gb) {
                *w -= lr * *d;
            }
            l.apply_mask();
        }
    }

    /// Active weights plus biases.
    pub fn count_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.active_weights() + l.outputs())
            .sum()
    }

    /// Two FLOPs per active weight plus one per bias.
    pub fn count_flops(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 2 * l.active_weights() + l.outputs())
            .sum()
    }

    pub fn cost(&self) -> CostStats {
        let dense_params = dense_params(&self.layer_sizes());
        let dense_flops = self
            .layers
            .iter()
            .map(|l| 2 * l.inputs() * l.outputs() + l.outputs())
            .sum();
        CostStats {
            params: self.count_params(),
            flops: self.count_flops(),
            dense_params,
            dense_flops,
        }
    }

    pub fn cast<U: Scalar>(&self) -> MaskedMlp<U> {
        MaskedMlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.cast(),
                    bias: l.bias.iter().map(|&v| U::of(v.as_f64())).collect(),
                    mask: l.mask.clone(),
                })
                .collect(),
        }
    }
}

fn check_labels<T: Scalar>(x: &Matrix<T>, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Minibatch SGD. Each epoch reshuffles with a seed derived from
/// `(shuffle_seed, epoch)`; the last partial batch is kept.
pub fn train_epochs<T: Scalar>(
    mlp: &mut MaskedMlp<T>,
    x: &Matrix<T>,
    y: &[u8],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    mlp.check_batch(x)?;
    check_labels(x, y)?;
    let lr = T::of(config.learning_rate);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.shuffle_seed, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bx = x.select_rows(chunk);
            let by: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let g = mlp.backward(&bx, &by)?;
            if !g.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became {} in epoch {epoch}",
                    g.loss
                )));
            }
            total += g.loss * chunk.len() as f64;
            mlp.sgd_step(&g, lr);
        }
        log.epoch_loss.push(total / x.rows() as f64);
    }
    Ok(log)
}
