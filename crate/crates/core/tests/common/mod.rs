#![allow(dead_code)]

use poolal::dataio::{generate_synthetic, SyntheticSpec};
use poolal::experiment::EvalSet;
use poolal::Pool;

/// Imbalanced 4-class, 16-d mixture: 2,000 pool samples plus 500 held out,
/// 10% label flips, 10% exact duplicates, 4 source corpora.
pub fn standard_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        name: "standard".into(),
        samples_per_class: vec![1375, 625, 312, 188],
        outlier_fraction: 0.1,
        duplicate_fraction: 0.1,
        source_count: 4,
        source_shift: 0.5,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Same as the standard pool, but each class mean is a 2-d pattern shared by
/// 8 frames.
pub fn structured_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        name: "structured".into(),
        frames: 8,
        ..standard_spec(seed)
    }
}

pub fn pool_and_eval(spec: &SyntheticSpec) -> (Pool, EvalSet) {
    let ds = generate_synthetic(spec).unwrap();
    let (pool, eval) = ds.split(0.2, spec.seed).unwrap();
    (pool.to_pool().unwrap(), EvalSet::from_dataset(&eval).unwrap())
}

/// Small well-separated pool for fast loop tests.
pub fn small_pool(n_per_class: usize, seed: u64) -> (Pool, EvalSet) {
    let spec = SyntheticSpec {
        class_count: 3,
        feature_dim: 4,
        samples_per_class: vec![n_per_class; 3],
        mean_spread: 3.0,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let pool = ds.to_pool().unwrap();
    let eval = EvalSet::from_dataset(&ds).unwrap();
    (pool, eval)
}

/// Relative error of two gradient vectors in the 2-norm.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric)).max(1e-12);
    diff / scale
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` around `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}
