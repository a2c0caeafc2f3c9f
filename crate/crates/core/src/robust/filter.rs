use serde::{Deserialize, Serialize};

/// Outcome of cluster filtering for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub avg_cos: Vec<f64>,
    pub rejected_cluster: usize,
    pub benign_mask: Vec<u8>,
}

impl ClusterReport {
    /// Report that keeps every client, used when filtering is disabled.
    pub fn accept_all(clients: usize) -> Self {
        ClusterReport {
            assignments: vec![0; clients],
            centroids: Vec::new(),
            avg_cos: Vec::new(),
            rejected_cluster: usize::MAX,
            benign_mask: vec![1; clients],
        }
    }

    pub fn rejected_size(&self) -> usize {
        self.benign_mask.iter().filter(|&&m| m == 0).count()
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// How cluster coherence is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRule {
    /// Subtract the mean projection vector over all clients before taking
    /// cosines.
    #[serde(default)]
    pub centered: bool,
    /// Score single-member clusters below every other cluster. A lone
    /// vector always has cosine 1 with itself as centroid.
    #[serde(default)]
    pub reject_singletons: bool,
}

/// Average member-to-centroid cosine per cluster; the lowest-scoring cluster
/// (lowest id on ties) is rejected.
pub fn filter_clusters(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> ClusterReport {
    filter_clusters_with(points, assignments, centroids, FilterRule::default())
}

pub fn filter_clusters_with(
    points: &[Vec<f64>],
    assignments: &[usize],
    centroids: &[Vec<f64>],
    rule: FilterRule,
) -> ClusterReport {
    let k = centroids.len();
    let dim = centroids.first().map_or(0, Vec::len);
    let mut offset = vec![0.0; dim];
    if rule.centered && !points.is_empty() {
        for p in points {
            for (o, v) in offset.iter_mut().zip(p) {
                *o += v;
            }
        }
        for o in &mut offset {
            *o /= points.len() as f64;
        }
    }
    let shift = |v: &[f64]| -> Vec<f64> { v.iter().zip(&offset).map(|(a, b)| a - b).collect() };
    let shifted: Vec<Vec<f64>> = centroids.iter().map(|c| shift(c)).collect();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a] += cosine_similarity(&shift(p), &shifted[a]);
        counts[a] += 1;
    }
    let avg_cos: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { f64::INFINITY } else { s / n as f64 })
        .collect();
    let score = |c: usize| {
        if rule.reject_singletons && counts[c] == 1 {
            f64::NEG_INFINITY
        } else {
            avg_cos[c]
        }
    };
    let mut rejected = 0;
    for c in 1..k {
        if score(c) < score(rejected) {
            rejected = c;
        }
    }
    let benign_mask = assignments.iter().map(|&a| (a != rejected) as u8).collect();
    ClusterReport {
        assignments: assignments.to_vec(),
        centroids: centroids.to_vec(),
        avg_cos,
        rejected_cluster: rejected,
        benign_mask,
    }
}

/// Selection weights: 1 for clients in kept clusters, 0 otherwise.
pub fn select_and_weight(report: &ClusterReport) -> Vec<u8> {
    report.benign_mask.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::kmeans;

    #[test]
    fn identical_points_tie_rejects_lowest_id() {
        let pts = vec![vec![1.0, 2.0, 3.0]; 4];
        let km = kmeans(&pts, 2, 1, 20).unwrap();
        let r = filter_clusters(&pts, &km.assignments, &km.centroids);
        assert_eq!(r.avg_cos, vec![1.0, 1.0]);
        assert_eq!(r.rejected_cluster, 0);
        let rejected = km.assignments.iter().filter(|&&a| a == 0).count();
        assert_eq!(r.benign_mask.iter().map(|&m| m as usize).sum::<usize>(), 4 - rejected);
    }

    #[test]
    fn dispersed_cluster_is_rejected() {
        // cluster 0 tight along (1,1,1); cluster 1 spread over orthogonal axes
        let pts = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.01, 0.99, 1.0],
            vec![0.99, 1.0, 1.01],
            vec![9.0, 0.0, 0.0],
            vec![0.0, 9.0, 0.0],
            vec![0.0, 0.0, 9.0],
        ];
        let assignments = vec![0, 0, 0, 1, 1, 1];
        let centroids = vec![vec![1.0, 1.0, 1.0], vec![3.0, 3.0, 3.0]];
        let r = filter_clusters(&pts, &assignments, &centroids);
        assert!(r.avg_cos[0] > 0.999);
        assert!(r.avg_cos[1] < 0.6);
        assert_eq!(r.rejected_cluster, 1);
        assert_eq!(select_and_weight(&r), vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(r.rejected_size(), 3);
    }

    #[test]
    fn never_rejects_everyone() {
        for seed in 0..20u64 {
            let pts: Vec<Vec<f64>> = (0..10)
                .map(|i| vec![((i * 7 + seed as usize) % 5) as f64 - 2.0, (i % 3) as f64])
                .collect();
            let km = kmeans(&pts, 2, seed, 50).unwrap();
            let r = filter_clusters(&pts, &km.assignments, &km.centroids);
            let gamma = select_and_weight(&r);
            assert!(gamma.contains(&1));
            for (g, a) in gamma.iter().zip(&r.assignments) {
                assert_eq!(*g == 0, *a == r.rejected_cluster);
            }
        }
    }

    #[test]
    fn singleton_rule() {
        let pts = vec![
            vec![1.0, 1.0],
            vec![1.0, 1.2],
            vec![1.2, 1.0],
            vec![9.0, 1.0],
        ];
        let assignments = vec![0, 0, 0, 1];
        let centroids = vec![vec![16.0 / 15.0, 16.0 / 15.0], vec![9.0, 1.0]];
        let plain = filter_clusters(&pts, &assignments, &centroids);
        assert!((plain.avg_cos[1] - 1.0).abs() < 1e-12);
        assert_eq!(plain.rejected_cluster, 0);
        let rule = FilterRule {
            reject_singletons: true,
            ..FilterRule::default()
        };
        let r = filter_clusters_with(&pts, &assignments, &centroids, rule);
        assert_eq!(r.avg_cos, plain.avg_cos);
        assert_eq!(r.rejected_cluster, 1);
        assert_eq!(r.benign_mask, vec![1, 1, 1, 0]);
    }

    #[test]
    fn centering_removes_common_offset() {
        // nearly parallel raw vectors; the spread only shows after centering
        let pts = vec![
            vec![101.0, 100.0],
            vec![101.1, 100.0],
            vec![101.0, 100.1],
            vec![98.0, 101.0],
            vec![98.0, 99.0],
        ];
        let assignments = vec![0, 0, 0, 1, 1];
        let centroids = vec![vec![101.1 / 3.0 + 202.0 / 3.0, 300.1 / 3.0], vec![98.0, 100.0]];
        let raw = filter_clusters(&pts, &assignments, &centroids);
        assert!(raw.avg_cos.iter().all(|&c| c > 0.9999));
        let rule = FilterRule {
            centered: true,
            ..FilterRule::default()
        };
        let c = filter_clusters_with(&pts, &assignments, &centroids, rule);
        assert!(c.avg_cos[0] > 0.99);
        assert!(c.avg_cos[1] < 0.9);
        assert_eq!(c.rejected_cluster, 1);
    }

    #[test]
    fn zero_vector_cosine() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
