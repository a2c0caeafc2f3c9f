use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use super::model::Model;
use crate::error::{Error, Result};

/// Overall accuracy, source-class accuracy and attack success rate.
/// `sa`/`asr` are absent when the test set holds no source-class samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub sa: Option<f64>,
    pub asr: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], l_src: usize, l_tar: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
        let mut src = 0usize;
        let mut src_ok = 0usize;
        let mut src_tar = 0usize;
        for (&p, &t) in predicted.iter().zip(truth) {
            if t == l_src {
                src += 1;
                if p == l_src {
                    src_ok += 1;
                } else if p == l_tar {
                    src_tar += 1;
                }
            }
        }
        let frac = |k: usize| (src > 0).then(|| k as f64 / src as f64);
        Ok(Metrics {
            oa: correct as f64 / truth.len() as f64,
            sa: frac(src_ok),
            asr: frac(src_tar),
        })
    }
}

pub fn evaluate(model: &Model, test: &LabeledDataset, l_src: usize, l_tar: usize) -> Result<Metrics> {
    let predicted: Vec<usize> = (0..test.len()).map(|i| model.predict(test.row(i))).collect();
    Metrics::from_predictions(&predicted, &test.labels, l_src, l_tar)
}
