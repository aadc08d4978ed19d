//! Scorers over per-annotator predictions.

use serde::{Deserialize, Serialize};

use super::pointwise::entropy;
use crate::config::IndividualAggregate;
use crate::error::{Error, Result};
use crate::pool::{argmax, softmax, SampleId};

/// Logit vectors of every annotator model for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorLogits {
    logits: Vec<Vec<f64>>,
}

impl AnnotatorLogits {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        let c = logits.first().map_or(0, Vec::len);
        if logits.is_empty() || c == 0 {
            return Err(Error::invalid("need at least one annotator with at least one class"));
        }
        if logits.iter().any(|z| z.len() != c) {
            return Err(Error::invalid("annotator logits differ in length"));
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite annotator logit"));
        }
        Ok(Self { logits })
    }

    pub fn annotators(&self) -> usize {
        self.logits.len()
    }

    pub fn classes(&self) -> usize {
        self.logits[0].len()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    /// Each annotator's predicted class.
    pub fn votes(&self) -> Vec<usize> {
        self.logits.iter().map(|z| argmax(z)).collect()
    }
}

/// Entropy of `softmax(z^a)` for every annotator `a`.
pub fn individual_entropy(logits: &AnnotatorLogits) -> Vec<f64> {
    logits.logits.iter().map(|z| entropy(&softmax(z))).collect()
}

/// The (sample, annotator) pair with the largest individual entropy.
/// Ties go to the earlier sample, then the lower annotator index.
pub fn pair_select(candidates: &[(SampleId, AnnotatorLogits)]) -> Result<(SampleId, usize)> {
    let mut best: Option<(SampleId, usize, f64)> = None;
    for (id, logits) in candidates {
        for (a, h) in individual_entropy(logits).into_iter().enumerate() {
            if best.is_none_or(|(_, _, b)| h > b) {
                best = Some((*id, a, h));
            }
        }
    }
    best.map(|(id, a, _)| (id, a))
        .ok_or_else(|| Error::invalid("no candidates"))
}

/// Entropy of the softmax of the summed, softmax-normalized annotator logits.
pub fn group_entropy(logits: &AnnotatorLogits) -> f64 {
    let c = logits.classes();
    let mut group = vec![0.0; c];
    for z in &logits.logits {
        for (g, p) in group.iter_mut().zip(softmax(z)) {
            *g += p;
        }
    }
    entropy(&softmax(&group))
}

/// Population variance of the annotators' class indices taken as numbers.
/// Depends on the class order.
pub fn vote_variance(votes: &[usize]) -> f64 {
    if votes.is_empty() {
        return 0.0;
    }
    let n = votes.len() as f64;
    let mean = votes.iter().map(|&v| v as f64).sum::<f64>() / n;
    votes.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Individual entropy (aggregated over annotators) plus group entropy.
pub fn mix_entropy(logits: &AnnotatorLogits, aggregate: IndividualAggregate) -> f64 {
    let indi = individual_entropy(logits);
    let indi = match aggregate {
        IndividualAggregate::Mean => indi.iter().sum::<f64>() / indi.len() as f64,
        IndividualAggregate::Max => indi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    indi + group_entropy(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn al(v: Vec<Vec<f64>>) -> AnnotatorLogits {
        AnnotatorLogits::new(v).unwrap()
    }

    #[test]
    fn individual_entropy_extremes() {
        let h = individual_entropy(&al(vec![vec![50.0, -50.0, -50.0], vec![0.0; 3]]));
        assert!(h[0] < 1e-12);
        assert!((h[1] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn group_entropy_of_uniform_annotators() {
        let l = al(vec![vec![0.0; 4], vec![1.0; 4], vec![-3.0; 4]]);
        assert!((group_entropy(&l) - 4f64.ln()).abs() < 1e-12);
        assert!((mix_entropy(&l, IndividualAggregate::Mean) - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_annotator_group_collapse() {
        let z = vec![2.0, 0.5, -1.0];
        let l = al(vec![z.clone()]);
        let expected = entropy(&softmax(&softmax(&z)));
        assert!((group_entropy(&l) - expected).abs() < 1e-15);
        let mix = mix_entropy(&l, IndividualAggregate::Mean);
        assert!((mix - (entropy(&softmax(&z)) + expected)).abs() < 1e-15);
    }

    #[test]
    fn vote_variance_reference_values() {
        assert_eq!(vote_variance(&[2, 2, 2]), 0.0);
        assert!((vote_variance(&[0, 1, 2]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(vote_variance(&[0, 1]), 0.25);
    }

    #[test]
    fn rejects_ragged_logits() {
        assert!(AnnotatorLogits::new(vec![vec![0.0, 1.0], vec![0.0]]).is_err());
        assert!(AnnotatorLogits::new(vec![]).is_err());
    }
}
