use rand::RngCore;

use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointCodec;
use crate::ml::Model;
use crate::rng::stream;

fn admissible(eta: i64, sizes: &[usize], norms_sq: &[f64], codec: &FixedPointCodec, ratio: f64) -> bool {
    let e = codec.decode(eta);
    sizes
        .iter()
        .zip(norms_sq)
        .all(|(&m, &n2)| m as f64 * e * e <= ratio * n2)
}

/// Largest encoded perturbation with `m_l * eta^2 <= ratio * ||W_0^(l)||^2`
/// for every parameter group `l`.
pub fn eta_ceiling(model: &Model, codec: &FixedPointCodec, ratio: f64) -> Result<i64> {
    let params = model.flatten();
    let ranges = model.group_ranges();
    let sizes: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
    let norms_sq: Vec<f64> = ranges
        .iter()
        .map(|r| params[r.clone()].iter().map(|v| v * v).sum())
        .collect();
    let real = sizes
        .iter()
        .zip(&norms_sq)
        .map(|(&m, &n2)| (ratio * n2 / m as f64).sqrt())
        .fold(f64::INFINITY, f64::min);
    if !real.is_finite() {
        return Err(Error::NoAdmissibleEta);
    }
    let mut eta = (real * codec.scale()).floor().min(codec.limit() as f64) as i64;
    while eta > 0 && !admissible(eta, &sizes, &norms_sq, codec, ratio) {
        eta -= 1;
    }
    if eta < 1 {
        return Err(Error::NoAdmissibleEta);
    }
    Ok(eta)
}

/// The shared perturbation: a hash-derived value truncated to the bit length
/// of the admissible ceiling, halved once more if it still exceeds it.
pub fn choose_eta(model: &Model, codec: &FixedPointCodec, ratio: f64, seed: u64) -> Result<i64> {
    let ceiling = eta_ceiling(model, codec, ratio)?;
    let bits = 64 - ceiling.leading_zeros();
    let raw = stream(seed, "eta", &[]).next_u64();
    let mut eta = (raw & ((1u64 << bits) - 1)) as i64;
    if eta > ceiling {
        eta >>= 1;
    }
    Ok(eta.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::with_limit(16, 1 << 40)
    }

    #[test]
    fn chosen_eta_satisfies_every_layer() {
        let model = Model::mlp(&[20, 32, 10], &mut stream(3, "init", &[]));
        let params = model.flatten();
        for seed in 0..50 {
            let eta = choose_eta(&model, &codec(), 1e-4, seed).unwrap();
            assert!(eta >= 1);
            assert!(eta <= eta_ceiling(&model, &codec(), 1e-4).unwrap());
            let e = codec().decode(eta);
            for r in model.group_ranges() {
                let n2: f64 = params[r.clone()].iter().map(|v| v * v).sum();
                assert!(r.len() as f64 * e * e <= 1e-4 * n2);
            }
            assert_eq!(eta, choose_eta(&model, &codec(), 1e-4, seed).unwrap());
        }
    }

    #[test]
    fn larger_layers_lower_the_ceiling() {
        // same per-parameter magnitude, so m / ||W||^2 is constant and the
        // ceiling is unchanged; halving the magnitude raises m / ||W||^2
        let small = Model::mlp(&[4, 8, 3], &mut stream(1, "init", &[]));
        let halved = small
            .with_params(&small.flatten().iter().map(|v| v * 0.5).collect::<Vec<_>>())
            .unwrap();
        let a = eta_ceiling(&small, &codec(), 1e-4).unwrap();
        let b = eta_ceiling(&halved, &codec(), 1e-4).unwrap();
        assert!(b < a);
        assert!(eta_ceiling(&small, &codec(), 1e-6).unwrap() < a);
    }

    #[test]
    fn zero_model_has_no_admissible_eta() {
        let model = Model::mlp(&[4, 8, 3], &mut stream(1, "init", &[]));
        let zero = model.with_params(&vec![0.0; model.param_count()]).unwrap();
        assert!(matches!(eta_ceiling(&zero, &codec(), 1e-4), Err(Error::NoAdmissibleEta)));
    }
}
