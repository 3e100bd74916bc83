//! Versioned JSON checkpoints. Floats are written in shortest round-trip form
//! and parsed exactly, so save followed by load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Provenance;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::growprune::HistoryEntry;
use crate::ingest::{CategorySet, Task};
use crate::network::MaskedMlp;
use crate::scalar::Scalar;

pub const FORMAT: &str = "mhdeep-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub partition: u8,
    /// Seed of this run, derived from the global seed.
    pub run_seed: u64,
    pub provenance: Provenance,
    pub best_val_accuracy: f64,
    pub history: Vec<HistoryEntry>,
    /// Resolved run config, TOML.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub layer_sizes: Vec<usize>,
    pub categories: CategorySet,
    pub norm: NormStats<T>,
    pub network: MaskedMlp<T>,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(
        network: MaskedMlp<T>,
        norm: NormStats<T>,
        categories: CategorySet,
        meta: CheckpointMeta,
    ) -> Result<Self> {
        let ck = Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            scalar: T::NAME.to_string(),
            layer_sizes: network.layer_sizes(),
            categories,
            norm,
            network,
            meta,
        };
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::format(
                "checkpoint",
                format!("not a checkpoint (format `{}`)", self.format),
            ));
        }
        if self.version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {}", self.version),
            ));
        }
        if self.scalar != T::NAME {
            return Err(Error::format(
                "checkpoint",
                format!("holds {} weights, expected {}", self.scalar, T::NAME),
            ));
        }
        self.network.validate()?;
        if self.network.layer_sizes() != self.layer_sizes {
            return Err(Error::format(
                "checkpoint",
                "layer sizes disagree with the weights",
            ));
        }
        let dim = self.categories.dims(crate::ingest::WINDOW_S);
        if self.network.input_dim() != dim || self.norm.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: self.network.input_dim(),
            });
        }
        if !self.network.mask_holds() {
            return Err(Error::format("checkpoint", "a masked weight is non-zero"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::format("checkpoint", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint<T> =
            serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e))?;
        ck.check()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path.display().to_string(), e))
    }
}

/// Scalar name recorded in a checkpoint file, without decoding the weights.
pub fn scalar_of(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Head {
        format: String,
        scalar: String,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let head: Head =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?;
    if head.format != FORMAT {
        return Err(Error::format(
            path.display().to_string(),
            "not a checkpoint",
        ));
    }
    Ok(head.scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growprune::prune;
    use crate::network::init_mlp;
    use rand::Rng;

    fn sample<T: Scalar>() -> Checkpoint<T> {
        let cats = CategorySet::from_bits(0b0000_0100).unwrap(); // IBI, 15 dims
        let mut net = init_mlp::<T>(&[15, 6, 2], 9).unwrap();
        prune(&mut net, 0.5).unwrap();
        let mut rng = crate::rng::rng_for(1, &[]);
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b = T::of(rng.gen_range(-1.0..1.0) / 3.0);
            }
        }
        let norm = NormStats {
            mean: (0..15).map(|i| T::of(i as f64 / 7.0)).collect(),
            std: (0..15).map(|i| T::of(1.0 + i as f64 / 13.0)).collect(),
        };
        let meta = CheckpointMeta {
            task: Task::Mdd,
            partition: 2,
            run_seed: 11,
            provenance: Provenance {
                config_hash: "ab".repeat(32),
                seed: 5,
            },
            best_val_accuracy: 0.1 + 0.2,
            history: vec![],
            config: "seed = 5\n".into(),
        };
        Checkpoint::new(net, norm, cats, meta).unwrap()
    }

    fn bits_equal<T: Scalar>(a: &Checkpoint<T>, b: &Checkpoint<T>) -> bool {
        let bits = |v: &[T]| v.iter().map(|x| x.as_f64().to_bits()).collect::<Vec<_>>();
        a.network
            .layers
            .iter()
            .zip(&b.network.layers)
            .all(|(x, y)| {
                bits(x.weights.as_slice()) == bits(y.weights.as_slice())
                    && bits(&x.bias) == bits(&y.bias)
                    && x.mask == y.mask
            })
            && bits(&a.norm.mean) == bits(&b.norm.mean)
            && bits(&a.norm.std) == bits(&b.norm.std)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample::<f64>();
        let text = a.to_json().unwrap();
        let b = Checkpoint::<f64>::from_json(&text).unwrap();
        assert!(bits_equal(&a, &b));
        assert_eq!(a, b);
        assert_eq!(b.to_json().unwrap(), text);
        let a = sample::<f32>();
        let b = Checkpoint::<f32>::from_json(&a.to_json().unwrap()).unwrap();
        assert!(bits_equal(&a, &b));
    }

    #[test]
    fn rejects_wrong_scalar_and_tampering() {
        let text = sample::<f64>().to_json().unwrap();
        assert!(Checkpoint::<f32>::from_json(&text).is_err());
        let bad = text.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(Checkpoint::<f64>::from_json(&bad).is_err());
    }

    #[test]
    fn scalar_probe() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        sample::<f32>().save(&p).unwrap();
        assert_eq!(scalar_of(&p).unwrap(), "f32");
        assert_eq!(Checkpoint::<f32>::load(&p).unwrap(), sample::<f32>());
    }
}
