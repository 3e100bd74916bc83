//! Iterative magnitude pruning and full regrowth, keeping the checkpoint with
//! the best validation accuracy, plus dense pre-training on synthetic data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{train_epochs, MaskedMlp, TrainConfig};
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowPruneConfig {
    /// Fraction of each layer's weights removed by every prune.
    pub alpha: f64,
    pub num_iterations: usize,
    pub epochs_per_change: usize,
    pub initial_lr: f64,
    /// Halve the learning rate in each successive iteration.
    pub lr_halving: bool,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    /// Dense training on the real training split between pre-training and the first prune.
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
}

impl Default for GrowPruneConfig {
    fn default() -> Self {
        GrowPruneConfig {
            alpha: 0.5,
            num_iterations: 5,
            epochs_per_change: 20,
            initial_lr: 1e-4,
            lr_halving: true,
            batch_size: 256,
            pretrain_epochs: 20,
            pretrain_lr: 5e-4,
            pretrain_batch: 256,
            warmup_epochs: 20,
            warmup_lr: 5e-4,
        }
    }
}

impl GrowPruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(
                "growprune.alpha",
                "must lie strictly between 0 and 1",
            ));
        }
        if self.num_iterations == 0 {
            return Err(Error::config(
                "growprune.num_iterations",
                "must be at least 1",
            ));
        }
        for (field, lr) in [
            ("initial_lr", self.initial_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("warmup_lr", self.warmup_lr),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(
                    format!("growprune.{field}"),
                    "must be finite and non-negative",
                ));
            }
        }
        for (field, b) in [
            ("batch_size", self.batch_size),
            ("pretrain_batch", self.pretrain_batch),
        ] {
            if b == 0 {
                return Err(Error::config(
                    format!("growprune.{field}"),
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    /// Learning rate of iteration `i` (0 is the initial prune).
    pub fn lr_for(&self, i: usize) -> f64 {
        if self.lr_halving {
            self.initial_lr / 2f64.powi(i as i32)
        } else {
            self.initial_lr
        }
    }
}

/// Labeled rows.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a, T> {
    pub x: &'a Matrix<T>,
    pub y: &'a [u8],
}

impl<'a, T: Scalar> Labeled<'a, T> {
    pub fn new(x: &'a Matrix<T>, y: &'a [u8]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimMismatch {
                expected: x.rows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        Ok(Labeled { x, y })
    }
}

/// Set every mask entry to 1. Pruned weights stay at zero until trained.
pub fn grow<T: Scalar>(mlp: &mut MaskedMlp<T>) {
    for l in &mut mlp.layers {
        l.mask.iter_mut().for_each(|m| *m = 1);
    }
}

/// In every layer, mask and zero the `floor(alpha * M * N)` smallest-magnitude
/// weights, ties broken by ascending flat (row, col) index. Biases are untouched.
pub fn prune<T: Scalar>(mlp: &mut MaskedMlp<T>, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(
            "alpha",
            format!("pruning ratio {alpha} must lie strictly between 0 and 1"),
        ));
    }
    for (li, l) in mlp.layers.iter_mut().enumerate() {
        let total = l.mask.len();
        let k = (alpha * total as f64).floor() as usize;
        if k >= total {
            return Err(Error::InvalidInput(format!(
                "pruning {k} of {total} weights would empty layer {li}"
            )));
        }
        if k == 0 {
            continue;
        }
        let w = l.weights.as_slice();
        let mut order: Vec<usize> = (0..total).collect();
        let by = |a: &usize, b: &usize| {
            w[*a]
                .abs()
                .partial_cmp(&w[*b].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        };
        order.select_nth_unstable_by(k - 1, by);
        for &i in &order[..k] {
            l.mask[i] = 0;
        }
        l.apply_mask();
    }
    Ok(())
}

/// Dense training on labeled synthetic data.
pub fn pretrain<T: Scalar>(
    mlp: &mut MaskedMlp<T>,
    data: Labeled<'_, T>,
    config: &GrowPruneConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    grow(mlp);
    if config.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    let tc = TrainConfig {
        learning_rate: config.pretrain_lr,
        batch_size: config.pretrain_batch,
        epochs: config.pretrain_epochs,
        shuffle_seed: derive_seed(seed, &[tag("pretrain")]),
    };
    Ok(train_epochs(mlp, data.x, data.y, &tc)?.epoch_loss)
}

/// Dense training on the real training split.
pub fn warmup<T: Scalar>(
    mlp: &mut MaskedMlp<T>,
    data: Labeled<'_, T>,
    config: &GrowPruneConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if config.warmup_epochs == 0 {
        return Ok(Vec::new());
    }
    let tc = TrainConfig {
        learning_rate: config.warmup_lr,
        batch_size: config.batch_size,
        epochs: config.warmup_epochs,
        shuffle_seed: derive_seed(seed, &[tag("warmup")]),
    };
    Ok(train_epochs(mlp, data.x, data.y, &tc)?.epoch_loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// 0 for the initial prune, then 1..=num_iterations.
    pub iteration: usize,
    pub lr: f64,
    pub val_accuracy: f64,
    pub active_params: usize,
    pub train_loss: f64,
    pub saved: bool,
}

impl HistoryEntry {
    pub fn log_line(&self) -> String {
        format!(
            "iteration={} lr={:e} val_accuracy={:.6} active_params={} train_loss={:.6} saved={}",
            self.iteration,
            self.lr,
            self.val_accuracy,
            self.active_params,
            self.train_loss,
            self.saved
        )
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis<T> {
    pub best: MaskedMlp<T>,
    pub best_val_accuracy: f64,
    pub history: Vec<HistoryEntry>,
}

/// Grow-and-prune synthesis: prune, train, evaluate; then `num_iterations`
/// rounds of grow, prune, train, evaluate. The first evaluation is always
/// saved; later ones only when strictly better.
pub fn synthesize<T: Scalar>(
    mlp: MaskedMlp<T>,
    train: Labeled<'_, T>,
    validation: Labeled<'_, T>,
    config: &GrowPruneConfig,
    seed: u64,
) -> Result<Synthesis<T>> {
    config.validate()?;
    let mut net = mlp;
    let mut best: Option<(MaskedMlp<T>, f64)> = None;
    let mut history = Vec::with_capacity(config.num_iterations + 1);
    for i in 0..=config.num_iterations {
        if i > 0 {
            grow(&mut net);
        }
        prune(&mut net, config.alpha)?;
        let lr = config.lr_for(i);
        let tc = TrainConfig {
            learning_rate: lr,
            batch_size: config.batch_size,
            epochs: config.epochs_per_change,
            shuffle_seed: derive_seed(seed, &[tag("growprune"), i as u64]),
        };
        let log = train_epochs(&mut net, train.x, train.y, &tc)?;
        let acc = net.accuracy(validation.x, validation.y)?;
        let saved = best.as_ref().is_none_or(|(_, b)| acc > *b);
        if saved {
            best = Some((net.clone(), acc));
        }
        history.push(HistoryEntry {
            iteration: i,
            lr,
            val_accuracy: acc,
            active_params: net.count_params(),
            train_loss: log.epoch_loss.last().copied().unwrap_or(f64::NAN),
            saved,
        });
        log::info!(
            "grow-prune {}",
            history
                .last()
                .map(HistoryEntry::log_line)
                .unwrap_or_default()
        );
    }
    let (best, best_val_accuracy) = best.expect("at least one evaluation");
    Ok(Synthesis {
        best,
        best_val_accuracy,
        history,
    })
}
