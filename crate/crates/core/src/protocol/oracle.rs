//! The plaintext counterpart of the server's two decryptions. It computes
//! the same integers from the noised encodings directly.

use std::ops::Range;

use super::messages::GlobalModelNoised;
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointCodec;
use crate::par;
use crate::robust::{project_layer_plain, ProjectionVector};

pub fn project_plain(
    noised: &[Vec<i64>],
    view: &[i64],
    layout: &[Range<usize>],
    codec: &FixedPointCodec,
    round: u64,
) -> Result<Vec<ProjectionVector>> {
    par::collect_results(par::map_range(noised.len(), |i| {
        let values = layout
            .iter()
            .enumerate()
            .map(|(l, r)| project_layer_plain(&noised[i][r.clone()], &view[r.clone()], codec, l))
            .collect::<Result<Vec<f64>>>()?;
        Ok(ProjectionVector {
            values,
            client_index: i as u32 + 1,
            round,
        })
    }))
}

/// Integer FedAvg over the selected clients.
pub fn aggregate_plain(noised: &[Vec<i64>], gamma: &[u8], round: u64) -> Result<GlobalModelNoised> {
    let divisor = gamma.iter().filter(|&&g| g == 1).count() as u64;
    if divisor == 0 {
        return Err(Error::Malformed("no client selected".into()));
    }
    let len = noised.first().map_or(0, Vec::len);
    let mut sums = vec![0i128; len];
    for (x, &g) in noised.iter().zip(gamma) {
        if g == 1 {
            for (s, &v) in sums.iter_mut().zip(x) {
                *s += v as i128;
            }
        }
    }
    Ok(GlobalModelNoised {
        round: round + 1,
        sums,
        divisor,
    })
}
