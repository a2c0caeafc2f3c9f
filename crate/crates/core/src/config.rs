//! Experiment configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::ml::TrainConfig;
use crate::numtheory::{PlaintextBound, MIN_GROUP_BITS};
use crate::rng::subseed;
use crate::robust::FilterRule;

/// Headroom, in bits above the fixed-point scale, that encoded parameters
/// must have before clipping.
pub const MIN_HEADROOM_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub group: GroupConfig,
    pub data: DataConfig,
    pub federation: FederationConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub control_fedavg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    /// Bit length of the modulus N.
    pub bits: u64,
    /// Secret exponents are sampled from `[1, 2^sigma_bits)`.
    pub sigma_bits: u64,
    /// Fixed-point scale is `2^scale_bits`.
    pub scale_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        n_samples: usize,
        n_classes: usize,
        n_features: usize,
        separation: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        n_classes: usize,
    },
}

impl DataConfig {
    pub fn n_classes(&self) -> usize {
        match self {
            DataConfig::Synthetic { n_classes, .. } | DataConfig::Csv { n_classes, .. } => *n_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: u64,
    /// Dirichlet concentration of the per-class client shares.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    /// When false, every client is selected each round.
    pub enabled: bool,
    pub k: usize,
    pub kmeans_max_iter: usize,
    /// Bound on `m_l * eta^2 / ||W_0^(l)||^2` for every layer.
    pub eta_ratio: f64,
    /// Also cluster noise-free projections each round and record agreement.
    #[serde(default)]
    pub probe_invariance: bool,
    #[serde(default)]
    pub filter: FilterRule,
}

/// Whether the run goes through the encryption scheme or through the
/// plaintext oracle that computes the same integers directly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Encrypted,
    Plaintext,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            group: GroupConfig {
                bits: 2048,
                sigma_bits: 3 * 2048,
                scale_bits: 16,
            },
            data: DataConfig::Synthetic {
                n_samples: 5000,
                n_classes: 10,
                n_features: 20,
                separation: 3.0,
            },
            federation: FederationConfig {
                clients: 20,
                rounds: 100,
                alpha: 0.5,
            },
            model: ModelConfig { hidden: vec![32] },
            training: TrainConfig::default(),
            attack: AttackConfig::default(),
            defense: DefenseConfig {
                enabled: true,
                k: 2,
                kmeans_max_iter: 100,
                eta_ratio: 1e-4,
                probe_invariance: false,
                filter: FilterRule::default(),
            },
            backend: Backend::Encrypted,
            control_fedavg: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// The desk-scale synthetic benchmark: 20 clients, Dirichlet 0.2,
    /// 10 classes, 30 rounds, 30% label flippers 0 -> 4. Single-client
    /// clusters are rejected.
    pub fn synthetic_benchmark() -> Self {
        let base = ExperimentConfig::default();
        ExperimentConfig {
            group: GroupConfig {
                bits: 256,
                sigma_bits: 768,
                scale_bits: 16,
            },
            data: DataConfig::Synthetic {
                n_samples: 20000,
                n_classes: 10,
                n_features: 20,
                separation: 3.0,
            },
            federation: FederationConfig {
                clients: 20,
                rounds: 30,
                alpha: 0.2,
            },
            attack: AttackConfig {
                kind: AttackKind::LabelFlip,
                l_src: 0,
                l_tar: 4,
                noise_std: 0.5,
                malicious_fraction: 0.3,
                seed: 0,
            },
            defense: DefenseConfig {
                filter: FilterRule {
                    reject_singletons: true,
                    ..FilterRule::default()
                },
                ..base.defense
            },
            control_fedavg: true,
            ..base
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg.resolved())
    }

    /// Copy with every derived field filled in from the top-level seed.
    pub fn resolved(mut self) -> Self {
        self.attack.seed = subseed(self.seed, "attack", &[]);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    /// Layer widths from input to output, when the input width is known
    /// without reading data.
    pub fn layer_dims(&self, n_features: usize) -> Vec<usize> {
        let mut dims = vec![n_features];
        dims.extend(&self.model.hidden);
        dims.push(self.data.n_classes());
        dims
    }

    /// Parameter count of the model for a given input width.
    pub fn param_count(&self, n_features: usize) -> usize {
        self.layer_dims(n_features).windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// The copy that is echoed into output headers: it omits the output
    /// location so that runs written to different directories compare equal.
    pub fn for_header(&self) -> Self {
        ExperimentConfig {
            output_dir: None,
            ..self.clone()
        }
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let g = &self.group;
        if g.bits < MIN_GROUP_BITS {
            return Err(Error::config("group.bits", format!("must be at least {MIN_GROUP_BITS}")));
        }
        if g.sigma_bits < 3 * g.bits {
            return Err(Error::config("group.sigma_bits", "must be at least 3 * group.bits"));
        }
        if !(1..=40).contains(&g.scale_bits) {
            return Err(Error::config("group.scale_bits", "must lie in [1, 40]"));
        }
        match &self.data {
            DataConfig::Synthetic {
                n_samples,
                n_classes,
                n_features,
                separation,
            } => {
                if *n_classes < 2 {
                    return Err(Error::config("data.n_classes", "need at least two classes"));
                }
                if *n_features == 0 {
                    return Err(Error::config("data.n_features", "must be positive"));
                }
                if *n_samples < 5 {
                    return Err(Error::config("data.n_samples", "need at least 5 samples for the split"));
                }
                if !separation.is_finite() || *separation < 0.0 {
                    return Err(Error::config("data.separation", "must be finite and non-negative"));
                }
            }
            DataConfig::Csv { n_classes, .. } => {
                if *n_classes < 2 {
                    return Err(Error::config("data.n_classes", "need at least two classes"));
                }
            }
        }
        let f = &self.federation;
        if f.clients == 0 {
            return Err(Error::config("federation.clients", "must be positive"));
        }
        if !(f.alpha > 0.0 && f.alpha.is_finite()) {
            return Err(Error::config("federation.alpha", "must be positive and finite"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        let t = &self.training;
        if t.epochs == 0 {
            return Err(Error::config("training.epochs", "must be positive"));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return Err(Error::config("training.lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config("training.momentum", "must lie in [0, 1)"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        self.attack.validate()?;
        let classes = self.data.n_classes();
        if self.attack.l_src >= classes {
            return Err(Error::config("attack.l_src", format!("must be below n_classes = {classes}")));
        }
        if self.attack.l_tar >= classes {
            return Err(Error::config("attack.l_tar", format!("must be below n_classes = {classes}")));
        }
        let d = &self.defense;
        if d.enabled && d.k < 2 {
            return Err(Error::config("defense.k", "must be at least 2"));
        }
        if d.enabled && d.k > f.clients {
            return Err(Error::config("defense.k", "must not exceed federation.clients"));
        }
        if d.enabled && d.k > 8 {
            return Err(Error::config("defense.k", "must not exceed 8"));
        }
        if d.kmeans_max_iter == 0 {
            return Err(Error::config("defense.kmeans_max_iter", "must be positive"));
        }
        if !(d.eta_ratio > 0.0 && d.eta_ratio.is_finite()) {
            return Err(Error::config("defense.eta_ratio", "must be positive and finite"));
        }
        if let DataConfig::Synthetic { n_features, .. } = self.data {
            self.validate_capacity(self.param_count(n_features))?;
        }
        Ok(())
    }

    /// Encoding dimension for the plaintext bound: the larger of the client
    /// count and the parameter count.
    pub fn bound_dimension(&self, zeta: usize) -> u64 {
        zeta.max(self.federation.clients) as u64
    }

    /// Checks that a modulus of `group.bits` bits leaves room for `zeta`
    /// encoded parameters without wrap-around, using the smallest modulus of
    /// that length.
    pub fn validate_capacity(&self, zeta: usize) -> Result<()> {
        let n_min = BigUint::one() << (self.group.bits - 1);
        let dim = self.bound_dimension(zeta);
        let bound = PlaintextBound::new(&n_min, dim)
            .map_err(|_| Error::config("group.bits", format!("too small for {zeta} parameters")))?;
        let four_m2 = BigUint::from(4u32) * &bound.m * &bound.m;
        if BigUint::from(zeta) * four_m2 >= n_min {
            return Err(Error::config("group.bits", "zeta * (2M)^2 must stay below N"));
        }
        let needed = BigUint::one() << (self.group.scale_bits + MIN_HEADROOM_BITS);
        if bound.x < needed {
            return Err(Error::config(
                "group.bits",
                format!(
                    "plaintext bound of {} bits leaves no headroom for scale 2^{}",
                    bound.x.bits(),
                    self.group.scale_bits
                ),
            ));
        }
        Ok(())
    }

    /// Integer limit of the codec implied by the smallest modulus of the
    /// configured length; used by the plaintext oracle.
    pub fn nominal_codec_limit(&self, zeta: usize) -> Result<i64> {
        let n_min = BigUint::one() << (self.group.bits - 1);
        let bound = PlaintextBound::new(&n_min, self.bound_dimension(zeta))?;
        Ok((&bound.x - 1u32).to_i64().unwrap_or(i64::MAX))
    }
}
