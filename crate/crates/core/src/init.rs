//! Cold-start selection of the first labeled batch.
//!
//! All initializers take `(id, features)` pairs, sort them by id so the
//! result does not depend on pool ordering, and return exactly
//! `max(1, floor(fraction * N))` distinct ids.

use rand::seq::SliceRandom;

use crate::clustering::{elbow_select_k, kmeans_restarts, sq_dist, ELBOW_RESTARTS};
use crate::dataio::fraction_count;
use crate::error::{Error, Result};
use crate::pool::{ProbVector, SampleId};
use crate::rng;

/// Neighbour count for the density and divergence scores.
pub const DEFAULT_KNN: usize = 10;

/// Size of the initial batch.
pub fn init_size(fraction: f64, n: usize) -> usize {
    fraction_count(fraction, n).max(1).min(n)
}

fn canonical<'a>(items: &[(SampleId, &'a [f64])]) -> Result<Vec<(SampleId, &'a [f64])>> {
    if items.is_empty() {
        return Err(Error::invalid("cannot initialize from an empty pool"));
    }
    let mut sorted = items.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    Ok(sorted)
}

/// Clusters the pool (K by elbow) and repeatedly takes, per center, the
/// nearest unchosen sample. Centers are visited in order of how close
/// their nearest sample is, so a batch of one is the sample nearest to any
/// center.
pub fn kmeans_init(items: &[(SampleId, &[f64])], fraction: f64, seed: u64, k_max: usize) -> Result<Vec<SampleId>> {
    let sorted = canonical(items)?;
    let points: Vec<Vec<f64>> = sorted.iter().map(|(_, x)| x.to_vec()).collect();
    let m = init_size(fraction, points.len());
    let k = elbow_select_k(&points, k_max, seed)?;
    let model = kmeans_restarts(&points, k, seed, ELBOW_RESTARTS)?;
    Ok(center_round_robin(&points, &model.centers, m)
        .into_iter()
        .map(|i| sorted[i].0)
        .collect())
}

/// Round-robin nearest-to-center selection over point indices.
pub(crate) fn center_round_robin(points: &[Vec<f64>], centers: &[Vec<f64>], m: usize) -> Vec<usize> {
    // Per center: all points ordered by distance (ties by index).
    let orders: Vec<Vec<(f64, usize)>> = centers
        .iter()
        .map(|c| {
            let mut o: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (sq_dist(c, p), i)).collect();
            o.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            o
        })
        .collect();
    let mut visit: Vec<usize> = (0..centers.len()).collect();
    visit.sort_by(|&a, &b| orders[a][0].0.total_cmp(&orders[b][0].0).then(a.cmp(&b)));

    let m = m.min(points.len());
    let mut chosen = vec![false; points.len()];
    let mut cursor = vec![0usize; centers.len()];
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        for &c in &visit {
            if out.len() == m {
                break;
            }
            while chosen[orders[c][cursor[c]].1] {
                cursor[c] += 1;
            }
            let i = orders[c][cursor[c]].1;
            chosen[i] = true;
            out.push(i);
        }
    }
    out
}

/// Indices of the `k` nearest neighbours of point `i` (excluding itself),
/// ties by index.
fn neighbours(points: &[&[f64]], i: usize, k: usize) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(points[i], points[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d
}

/// Mean squared distance from `points[i]` to its `knn` nearest neighbours.
pub fn dacs_score(points: &[&[f64]], i: usize, knn: usize) -> Result<f64> {
    if knn == 0 {
        return Err(Error::invalid("knn must be at least 1"));
    }
    if points.len() < knn + 1 {
        return Err(Error::invalid(format!(
            "need at least {} points for {knn} neighbours",
            knn + 1
        )));
    }
    let nn = neighbours(points, i, knn);
    Ok(nn.iter().map(|(d, _)| d).sum::<f64>() / knn as f64)
}

/// Takes the samples with the highest density score (the sparsest ones).
/// `knn` is clipped to `N - 1`.
pub fn dacs_init(items: &[(SampleId, &[f64])], fraction: f64, knn: usize) -> Result<Vec<SampleId>> {
    let sorted = canonical(items)?;
    if sorted.len() == 1 {
        return Ok(vec![sorted[0].0]);
    }
    let points: Vec<&[f64]> = sorted.iter().map(|(_, x)| *x).collect();
    let knn = knn.min(points.len() - 1);
    let scores = (0..points.len())
        .map(|i| dacs_score(&points, i, knn))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_by_score(&sorted, &scores, init_size(fraction, points.len())))
}

/// KL divergence `Σ_j p_j ln(p_j / q_j)`, with `0 ln(0/q) = 0` and `q`
/// clamped away from zero.
pub fn bmal_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("probability vectors differ in length"));
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(crate::model::PROB_CLAMP)).ln())
        .sum())
}

/// Takes the samples whose predicted class distribution diverges most, on
/// average, from those of their `knn` nearest neighbours in feature space.
/// `probs[i]` belongs to `items[i]`.
pub fn bmal_init(
    items: &[(SampleId, &[f64])],
    probs: &[ProbVector],
    fraction: f64,
    knn: usize,
) -> Result<Vec<SampleId>> {
    if probs.len() != items.len() {
        return Err(Error::invalid("one probability vector per sample required"));
    }
    let mut paired: Vec<(SampleId, &[f64], &ProbVector)> =
        items.iter().zip(probs).map(|((id, x), p)| (*id, *x, p)).collect();
    paired.sort_by_key(|(id, _, _)| *id);
    let sorted: Vec<(SampleId, &[f64])> = paired.iter().map(|(id, x, _)| (*id, *x)).collect();
    if sorted.is_empty() {
        return Err(Error::invalid("cannot initialize from an empty pool"));
    }
    if sorted.len() == 1 {
        return Ok(vec![sorted[0].0]);
    }
    let points: Vec<&[f64]> = sorted.iter().map(|(_, x)| *x).collect();
    let knn = knn.min(points.len() - 1).max(1);
    let scores = (0..points.len())
        .map(|i| {
            let nn = neighbours(&points, i, knn);
            let mut total = 0.0;
            for (_, j) in &nn {
                total += bmal_divergence(paired[i].2, paired[*j].2)?;
            }
            Ok(total / nn.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(top_by_score(&sorted, &scores, init_size(fraction, points.len())))
}

/// Uniform sample without replacement.
pub fn random_init(items: &[(SampleId, &[f64])], fraction: f64, seed: u64) -> Result<Vec<SampleId>> {
    let sorted = canonical(items)?;
    let mut ids: Vec<SampleId> = sorted.iter().map(|(id, _)| *id).collect();
    ids.shuffle(&mut rng::rng_for(seed, "random-init", 0));
    ids.truncate(init_size(fraction, sorted.len()));
    Ok(ids)
}

fn top_by_score(sorted: &[(SampleId, &[f64])], scores: &[f64], m: usize) -> Vec<SampleId> {
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(sorted[a].0.cmp(&sorted[b].0)));
    order.into_iter().take(m).map(|i| sorted[i].0).collect()
}
