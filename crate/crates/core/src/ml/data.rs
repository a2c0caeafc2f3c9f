use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<f64>,
    pub n_features: usize,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() * n_features {
            return Err(Error::LengthMismatch {
                expected: labels.len() * n_features,
                actual: features.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Malformed(format!("label {bad} >= class count {n_classes}")));
        }
        Ok(LabeledDataset {
            features,
            n_features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        LabeledDataset {
            features,
            n_features: self.n_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Gaussian class clusters around centroids of norm `separation`, with an
/// 80/20 train/test split.
pub fn generate_synthetic(
    n: usize,
    n_classes: usize,
    n_features: usize,
    separation: f64,
    seed: u64,
) -> (LabeledDataset, LabeledDataset) {
    assert!(n_classes >= 2, "need at least two classes");
    let mut rng = stream(seed, "synthetic", &[]);
    let centroids: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            let dir: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.into_iter().map(|v| v * separation / norm).collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * n_features);
    for &l in &labels {
        for c in &centroids[l] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(c + noise);
        }
    }
    let all = LabeledDataset {
        features,
        n_features,
        labels,
        n_classes,
    };
    let split = n * 4 / 5;
    let train: Vec<usize> = (0..split).collect();
    let test: Vec<usize> = (split..n).collect();
    (all.subset(&train), all.subset(&test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
}

/// Symmetric Dirichlet draw via normalized Gamma(alpha, 1) variates.
pub fn dirichlet_draw(rng: &mut StreamRng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha must be positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // all draws underflowed; put the mass on one random client
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Split each class across clients in proportions drawn from
/// Dirichlet(alpha). Every sample lands on exactly one client.
pub fn dirichlet_partition(data: &LabeledDataset, spec: &PartitionSpec) -> Vec<LabeledDataset> {
    let clients = spec.n_clients.max(1);
    let mut rng = stream(spec.seed, "partition", &[]);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..data.n_classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let props = dirichlet_draw(&mut rng, spec.alpha, clients);
        let total = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, p) in props.iter().enumerate() {
            cum += p;
            let end = if c + 1 == clients {
                total
            } else {
                ((cum * total as f64).round() as usize).clamp(start, total)
            };
            assigned[c].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    assigned
        .into_iter()
        .map(|mut ix| {
            ix.sort_unstable();
            data.subset(&ix)
        })
        .collect()
}

/// Load a CSV with a header row: feature columns, then an integer label.
pub fn load_csv(path: &Path, n_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::Malformed(format!(
            "{}: need at least one feature and a label column",
            path.display()
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Malformed(format!("row {}: expected {width} fields", row + 1)));
        }
        for k in 0..width - 1 {
            let v: f64 = rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("row {}: bad feature {:?}", row + 1, &rec[k])))?;
            features.push(v);
        }
        let label: usize = rec[width - 1]
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("row {}: bad label {:?}", row + 1, &rec[width - 1])))?;
        labels.push(label);
    }
    let classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(features, width - 1, labels, classes)
}
