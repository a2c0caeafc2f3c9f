use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, "kmeans", &[]);
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

/// Move the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignments[i]]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let Some(i) = far else { return };
        assignments[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding. Output clusters are never empty.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewPoints { n: points.len(), k });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    repair_empty(points, &mut assignments, &mut centroids);
    update_centroids(points, &assignments, &mut centroids);
    let mut iterations = 1;
    while iterations < max_iter.max(1) {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        repair_empty(points, &mut next, &mut centroids);
        iterations += 1;
        let done = next == assignments;
        assignments = next;
        update_centroids(points, &assignments, &mut centroids);
        if done {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
    })
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Fraction of points placed identically by two clusterings, maximized over
/// relabelings of the clusters.
pub fn assignment_agreement(a: &[usize], b: &[usize], k: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(k <= 8, "relabeling search is exhaustive");
    if a.is_empty() {
        return 1.0;
    }
    let best = permutations(k)
        .iter()
        .map(|perm| a.iter().zip(b).filter(|(&x, &y)| perm[x] == y).count())
        .max()
        .unwrap_or(0);
    best as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_groups() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..12 {
            let jitter = (i as f64) * 0.01;
            if i % 3 == 0 {
                pts.push(vec![10.0 + jitter, 10.0 - jitter, 10.0]);
                truth.push(1);
            } else {
                pts.push(vec![1.0 - jitter, 1.0, 1.0 + jitter]);
                truth.push(0);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separates_well_separated_groups() {
        let (pts, truth) = two_groups();
        for seed in 0..10 {
            let r = kmeans(&pts, 2, seed, 100).unwrap();
            assert_eq!(assignment_agreement(&r.assignments, &truth, 2), 1.0);
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 3, 50).unwrap();
        let mut seen = r.assignments.clone();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for (p, &a) in pts.iter().zip(&r.assignments) {
            assert_eq!(sq_dist(p, &r.centroids[a]), 0.0);
        }
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let r = kmeans(&pts, 2, 0, 10).unwrap();
        assert!(r.assignments.contains(&0) && r.assignments.contains(&1));
    }

    #[test]
    fn errors() {
        assert!(matches!(kmeans(&[vec![1.0]], 2, 0, 10), Err(Error::TooFewPoints { .. })));
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 2, 0, 10).is_err());
    }

    #[test]
    fn agreement_handles_relabeling() {
        assert_eq!(assignment_agreement(&[0, 0, 1], &[1, 1, 0], 2), 1.0);
        assert!((assignment_agreement(&[0, 0, 1, 1], &[0, 1, 1, 1], 2) - 0.75).abs() < 1e-12);
        assert_eq!(permutations(3).len(), 6);
    }

    proptest! {
        #[test]
        fn deterministic_and_nonempty(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4..30),
            k in 2usize..4,
            seed in 0u64..1000,
        ) {
            let a = kmeans(&pts, k, seed, 50).unwrap();
            let b = kmeans(&pts.clone(), k, seed, 50).unwrap();
            prop_assert_eq!(&a, &b);
            for c in 0..k {
                prop_assert!(a.assignments.contains(&c));
            }
        }
    }
}
