//! Lloyd's K-means with elbow-based choice of K.

use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Default cap on Lloyd iterations.
pub const DEFAULT_MAX_ITERS: usize = 100;
/// Restarts per K during the elbow sweep; the lowest-SSE run is kept.
pub const ELBOW_RESTARTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    /// Cluster index of every input point, in input order.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared Euclidean distances.
    pub sse: f64,
    /// SSE after every assignment step.
    pub sse_trace: Vec<f64>,
}

impl ClusterModel {
    /// Index of the nearest center, lowest index on ties.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centers, x)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Indices of the first occurrence of every distinct point.
pub fn distinct_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..points.len())
        .filter(|&i| seen.insert(points[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect()
}

fn sse_of(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

/// Lloyd iterations from `k` distinct data points chosen uniformly at
/// random. Runs until the assignment stops changing or `max_iters` is hit.
/// A cluster that empties is re-seeded at the point farthest from its own
/// center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let mut distinct = distinct_indices(points);
    if k > distinct.len() {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the {} distinct points",
            distinct.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite point"));
    }
    let dim = points[0].len();
    distinct.shuffle(&mut rng::rng_for(seed, "kmeans-init", k as u64));
    let mut centers: Vec<Vec<f64>> = distinct[..k].iter().map(|&i| points[i].clone()).collect();

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
    let mut sse_trace = vec![sse_of(points, &centers, &assignments)];
    for _ in 0..max_iters {
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centers[assignments[a]]);
                        let db = sq_dist(&points[b], &centers[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centers[j] = points[far].clone();
                counts[assignments[far]] -= 1;
                assignments[far] = j;
                counts[j] = 1;
            }
        }
        // Assignment step.
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
        let changed = next != assignments;
        assignments = next;
        sse_trace.push(sse_of(points, &centers, &assignments));
        if !changed {
            break;
        }
    }
    let sse = sse_of(points, &centers, &assignments);
    Ok(ClusterModel {
        k,
        centers,
        assignments,
        sse,
        sse_trace,
    })
}

/// Best of `restarts` seeded runs by final SSE.
pub fn kmeans_restarts(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts.max(1) {
        let m = kmeans(points, k, rng::derive_seed(seed, "restart", r as u64), DEFAULT_MAX_ITERS)?;
        if best.as_ref().is_none_or(|b| m.sse < b.sse) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one run"))
}

/// SSE of the best restart for K = 1..=k_max (clipped to the number of
/// distinct points).
pub fn sse_curve(points: &[Vec<f64>], k_max: usize, seed: u64) -> Result<Vec<f64>> {
    let k_max = k_max.min(distinct_indices(points).len());
    (1..=k_max)
        .map(|k| kmeans_restarts(points, k, seed, ELBOW_RESTARTS).map(|m| m.sse))
        .collect()
}

/// Elbow of the SSE curve: the interior K with the largest second
/// difference `sse(K-1) - 2 sse(K) + sse(K+1)`, smaller K on ties.
/// Fewer than three distinct points give K = 1.
pub fn elbow_select_k(points: &[Vec<f64>], k_max: usize, seed: u64) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::invalid("no points to cluster"));
    }
    if distinct_indices(points).len() < 3 {
        return Ok(1);
    }
    if k_max < 3 {
        return Err(Error::invalid("k_max must be at least 3"));
    }
    let curve = sse_curve(points, k_max, seed)?;
    Ok(elbow_of_curve(&curve))
}

/// Elbow of an SSE curve indexed from K = 1.
pub fn elbow_of_curve(curve: &[f64]) -> usize {
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    for k in 2..curve.len() {
        let second = curve[k - 2] - 2.0 * curve[k - 1] + curve[k];
        if second > best {
            best = second;
            best_k = k;
        }
    }
    best_k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_far_points() {
        let m = kmeans(&[vec![0.0, 0.0], vec![100.0, 100.0]], 2, 1, 10).unwrap();
        let mut c = m.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.0], vec![100.0, 100.0]]);
        assert_eq!(m.sse, 0.0);
    }

    #[test]
    fn identical_points_one_cluster() {
        let p = vec![vec![3.0, 4.0]; 5];
        let m = kmeans(&p, 1, 0, 10).unwrap();
        assert_eq!(m.centers[0], vec![3.0, 4.0]);
        assert_eq!(m.sse, 0.0);
        assert!(kmeans(&p, 2, 0, 10).is_err());
        assert_eq!(elbow_select_k(&p, 8, 0).unwrap(), 1);
    }

    #[test]
    fn one_dimensional_reference() {
        for seed in 0..20 {
            let m = kmeans(&pts(&[0.0, 1.0, 9.0, 10.0]), 2, seed, 100).unwrap();
            let mut c: Vec<f64> = m.centers.iter().map(|c| c[0]).collect();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![0.5, 9.5]);
            assert_eq!(m.sse, 1.0);
        }
    }

    #[test]
    fn elbow_curve_tie_prefers_smaller_k() {
        assert_eq!(elbow_of_curve(&[10.0, 5.0, 0.0, 0.0, 0.0]), 3);
        assert_eq!(elbow_of_curve(&[9.0, 6.0, 3.0, 0.0]), 2);
    }
}
