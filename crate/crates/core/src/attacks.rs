//! Poisoning behaviour for malicious clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{LabeledDataset, Model};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    LabelFlip,
    Gaussian,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "label_flip" => Ok(AttackKind::LabelFlip),
            "gaussian" => Ok(AttackKind::Gaussian),
            other => Err(Error::config("attack.kind", format!("unknown attack {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub l_src: usize,
    pub l_tar: usize,
    pub noise_std: f64,
    pub malicious_fraction: f64,
    /// Derived from the experiment seed when loaded as part of a config.
    #[serde(default)]
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            l_src: 0,
            l_tar: 4,
            noise_std: 0.5,
            malicious_fraction: 0.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.malicious_fraction) {
            return Err(Error::config("attack.malicious_fraction", "must lie in [0, 0.5]"));
        }
        if self.kind == AttackKind::LabelFlip && self.l_src == self.l_tar {
            return Err(Error::config("attack.l_tar", "label flip needs l_src != l_tar"));
        }
        if self.kind == AttackKind::Gaussian && (self.noise_std.is_nan() || self.noise_std <= 0.0) {
            return Err(Error::config("attack.noise_std", "must be positive"));
        }
        Ok(())
    }

    /// The first `floor(fraction * clients)` entries of a seeded permutation,
    /// returned as a per-client flag vector. Fixed for the whole run.
    pub fn malicious_mask(&self, clients: usize) -> Vec<bool> {
        let count = if self.kind == AttackKind::None {
            0
        } else {
            (self.malicious_fraction * clients as f64 + 1e-9).floor() as usize
        };
        let mut perm: Vec<usize> = (0..clients).collect();
        perm.shuffle(&mut stream(self.seed, "malicious", &[]));
        let mut mask = vec![false; clients];
        for &i in perm.iter().take(count) {
            mask[i] = true;
        }
        mask
    }
}

/// Relabel every `l_src` sample as `l_tar`.
pub fn flip_labels(data: &LabeledDataset, l_src: usize, l_tar: usize) -> LabeledDataset {
    let mut out = data.clone();
    for l in &mut out.labels {
        if *l == l_src {
            *l = l_tar;
        }
    }
    out
}

/// Add independent N(0, noise_std^2) noise to every parameter.
pub fn gaussian_poison<R: Rng + ?Sized>(model: &Model, noise_std: f64, rng: &mut R) -> Result<Model> {
    let normal = Normal::new(0.0, noise_std)
        .map_err(|_| Error::config("attack.noise_std", "must be finite and non-negative"))?;
    let params: Vec<f64> = model.flatten().into_iter().map(|p| p + normal.sample(rng)).collect();
    model.with_params(&params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[usize]) -> LabeledDataset {
        LabeledDataset::new(vec![0.0; v.len()], 1, v.to_vec(), 10).unwrap()
    }

    #[test]
    fn flip_examples() {
        assert_eq!(flip_labels(&labels(&[0, 1, 0, 4]), 0, 4).labels, vec![4, 1, 4, 4]);
        let none = labels(&[1, 2, 3]);
        assert_eq!(flip_labels(&none, 0, 4), none);
        let d = labels(&[0, 0, 4, 5, 0, 1]);
        let out = flip_labels(&d, 0, 4);
        let count = |d: &LabeledDataset, l| d.labels.iter().filter(|&&x| x == l).count();
        assert_eq!(count(&out, 4), count(&d, 4) + count(&d, 0));
        assert_eq!(flip_labels(&out, 0, 4), out);
    }

    #[test]
    fn gaussian_noise_statistics() {
        let model = Model::mlp(&[100, 100, 10], &mut stream(1, "init", &[]));
        assert!(model.param_count() >= 10_000);
        let out = gaussian_poison(&model, 0.5, &mut stream(1, "noise", &[])).unwrap();
        assert_eq!(out.param_count(), model.param_count());
        let diffs: Vec<f64> = out.flatten().iter().zip(model.flatten()).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 0.5).abs() < 0.025, "std {std}");
        let again = gaussian_poison(&model, 0.5, &mut stream(1, "noise", &[])).unwrap();
        assert_eq!(again, out);
        let tiny = gaussian_poison(&model, 1e-12, &mut stream(2, "noise", &[])).unwrap();
        assert!(tiny.flatten().iter().zip(model.flatten()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn malicious_set_is_fixed_and_sized() {
        let cfg = AttackConfig {
            kind: AttackKind::LabelFlip,
            malicious_fraction: 0.3,
            seed: 9,
            ..AttackConfig::default()
        };
        let mask = cfg.malicious_mask(20);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 6);
        assert_eq!(mask, cfg.malicious_mask(20));
        let none = AttackConfig { kind: AttackKind::None, ..cfg };
        assert!(none.malicious_mask(20).iter().all(|&m| !m));
    }

    #[test]
    fn validation() {
        let bad = AttackConfig { kind: AttackKind::LabelFlip, l_src: 3, l_tar: 3, ..AttackConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AttackConfig { malicious_fraction: 0.6, ..AttackConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!("gaussian".parse::<AttackKind>().unwrap(), AttackKind::Gaussian);
        assert!("flip".parse::<AttackKind>().is_err());
    }
}
