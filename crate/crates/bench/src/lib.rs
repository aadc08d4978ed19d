//! Shared inputs for the engine benchmarks.

use poolal::acquisition::McProbs;
use poolal::dataio::{generate_synthetic, SyntheticSpec};
use poolal::{ClassifierState, ProbVector, SampleId};

/// Rows and labels of a 4-class, 16-d mixture with `n` samples.
pub fn mixture(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let spec = SyntheticSpec {
        samples_per_class: vec![n / 4; 4],
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).expect("valid spec");
    (ds.rows_f64(), ds.labels.iter().map(|&l| usize::from(l)).collect())
}

pub fn ids(n: usize) -> Vec<SampleId> {
    (0..n as u64).map(SampleId).collect()
}

/// Predictions of an untrained classifier over `rows`.
pub fn predictions(rows: &[Vec<f64>]) -> Vec<ProbVector> {
    let model = ClassifierState::new(poolal::config::Architecture::OneHidden, rows[0].len(), 4, 32, 0.3, 1)
        .expect("valid shape");
    rows.iter().map(|x| model.predict_proba(x).expect("matching width")).collect()
}

/// MC-dropout draws for every row.
pub fn mc_draws(rows: &[Vec<f64>], draws: usize) -> Vec<McProbs> {
    let model = ClassifierState::new(poolal::config::Architecture::OneHidden, rows[0].len(), 4, 32, 0.3, 1)
        .expect("valid shape");
    rows.iter()
        .enumerate()
        .map(|(i, x)| McProbs::new(&model.mc_dropout_predict(x, draws, i as u64).expect("matching width")).expect("draws"))
        .collect()
}

pub fn one_hot_targets(labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&y| (0..classes).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
        .collect()
}
