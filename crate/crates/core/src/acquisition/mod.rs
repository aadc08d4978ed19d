//! Query selection for one acquisition round.
//!
//! Pointwise strategies score each candidate independently and take the
//! top `k` ([`select_top_k`]). ALPS and BatchBALD build the batch as a
//! whole. The multi-annotator scorers live in [`multi`].

pub mod batchbald;
pub mod multi;
pub mod pointwise;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering::{elbow_select_k, kmeans_restarts, sq_dist, ELBOW_RESTARTS};
use crate::config::{IndividualAggregate, StrategyKind};
use crate::error::{Error, Result};
use crate::pool::{ProbVector, SampleId};
use crate::rng;

pub use batchbald::{bald, BatchBald, McProbs};
pub use multi::{group_entropy, individual_entropy, mix_entropy, pair_select, vote_variance, AnnotatorLogits};
pub use pointwise::{entropy_score, least_confidence_literal, least_confidence_score, margin_score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsQueried,
    LowerIsQueried,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub sample_id: SampleId,
    pub score: f64,
    pub direction: Direction,
}

/// Top `k` candidates in query order. Ties go to the lower id.
pub fn select_top_k(candidates: &[ScoredCandidate], k: usize) -> Result<Vec<SampleId>> {
    if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(Error::invalid(format!("non-finite score for sample {}", c.sample_id)));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        let by_score = match a.direction {
            Direction::HigherIsQueried => b.score.total_cmp(&a.score),
            Direction::LowerIsQueried => a.score.total_cmp(&b.score),
        };
        by_score.then(a.sample_id.cmp(&b.sample_id))
    });
    Ok(sorted.into_iter().take(k).map(|c| c.sample_id).collect())
}

/// ALPS-style selection: cluster the candidates (K by elbow) and take the
/// `k` samples closest to any center.
pub fn alps_select(embeddings: &[(SampleId, &[f64])], k: usize, seed: u64, k_max: usize) -> Result<Vec<SampleId>> {
    if k > embeddings.len() {
        return Err(Error::invalid("k exceeds the number of candidates"));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut sorted = embeddings.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let points: Vec<Vec<f64>> = sorted.iter().map(|(_, x)| x.to_vec()).collect();
    let clusters = elbow_select_k(&points, k_max, seed)?;
    let model = kmeans_restarts(&points, clusters, seed, ELBOW_RESTARTS)?;
    let candidates: Vec<ScoredCandidate> = sorted
        .iter()
        .map(|(id, x)| ScoredCandidate {
            sample_id: *id,
            score: model
                .centers
                .iter()
                .map(|c| sq_dist(c, x))
                .fold(f64::INFINITY, f64::min),
            direction: Direction::LowerIsQueried,
        })
        .collect();
    select_top_k(&candidates, k)
}

/// Uniform random selection.
pub fn random_select(ids: &[SampleId], k: usize, seed: u64) -> Result<Vec<SampleId>> {
    if k > ids.len() {
        return Err(Error::invalid("k exceeds the number of candidates"));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.shuffle(&mut rng::rng_for(seed, "random-select", 0));
    sorted.truncate(k);
    Ok(sorted)
}

/// Everything a strategy may need about the current unlabeled pool. Each
/// field is indexed like `ids`; fields a strategy does not use may be empty.
#[derive(Debug, Default)]
pub struct RoundInputs<'a> {
    pub ids: Vec<SampleId>,
    /// Deterministic predictions of the current classifier.
    pub probs: Vec<ProbVector>,
    /// Feature-space representation used for clustering.
    pub embeddings: Vec<&'a [f64]>,
    /// MC-dropout predictions, one `T x c` matrix per candidate.
    pub mc_probs: Vec<McProbs>,
    /// Per-annotator logits for the multi-annotator strategies.
    pub annotator_logits: Vec<AnnotatorLogits>,
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub k_max: usize,
    pub batchbald: BatchBald,
    pub individual_aggregate: IndividualAggregate,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            k_max: 10,
            batchbald: BatchBald::default(),
            individual_aggregate: IndividualAggregate::Mean,
        }
    }
}

fn need<T>(field: &[T], n: usize, what: &str) -> Result<()> {
    if field.len() != n {
        return Err(Error::invalid(format!("strategy needs {what} for every candidate")));
    }
    Ok(())
}

/// Per-candidate scores for the pointwise strategies.
pub fn pointwise_scores(
    strategy: StrategyKind,
    inputs: &RoundInputs<'_>,
    opts: &SelectOptions,
) -> Result<Vec<ScoredCandidate>> {
    let n = inputs.ids.len();
    let scored = |scores: Vec<f64>, direction| {
        inputs
            .ids
            .iter()
            .zip(scores)
            .map(|(&sample_id, score)| ScoredCandidate {
                sample_id,
                score,
                direction,
            })
            .collect()
    };
    use Direction::*;
    Ok(match strategy {
        StrategyKind::Entropy => {
            need(&inputs.probs, n, "probabilities")?;
            scored(inputs.probs.iter().map(entropy_score).collect(), HigherIsQueried)
        }
        StrategyKind::LeastConfidence => {
            need(&inputs.probs, n, "probabilities")?;
            scored(inputs.probs.iter().map(least_confidence_score).collect(), HigherIsQueried)
        }
        StrategyKind::Margin => {
            need(&inputs.probs, n, "probabilities")?;
            scored(inputs.probs.iter().map(margin_score).collect(), LowerIsQueried)
        }
        StrategyKind::Indi => {
            need(&inputs.annotator_logits, n, "annotator logits")?;
            scored(
                inputs
                    .annotator_logits
                    .iter()
                    .map(|l| individual_entropy(l).into_iter().fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
                HigherIsQueried,
            )
        }
        StrategyKind::Group => {
            need(&inputs.annotator_logits, n, "annotator logits")?;
            scored(inputs.annotator_logits.iter().map(group_entropy).collect(), HigherIsQueried)
        }
        StrategyKind::Vote => {
            need(&inputs.annotator_logits, n, "annotator logits")?;
            scored(
                inputs
                    .annotator_logits
                    .iter()
                    .map(|l| vote_variance(&l.votes()))
                    .collect(),
                HigherIsQueried,
            )
        }
        StrategyKind::Mix => {
            need(&inputs.annotator_logits, n, "annotator logits")?;
            scored(
                inputs
                    .annotator_logits
                    .iter()
                    .map(|l| mix_entropy(l, opts.individual_aggregate))
                    .collect(),
                HigherIsQueried,
            )
        }
        other => return Err(Error::invalid(format!("{other:?} is not a pointwise strategy"))),
    })
}

/// Picks `k` ids from the candidates for one round.
pub fn select_batch(
    strategy: StrategyKind,
    inputs: &RoundInputs<'_>,
    k: usize,
    seed: u64,
    opts: &SelectOptions,
) -> Result<Vec<SampleId>> {
    let n = inputs.ids.len();
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} candidates")));
    }
    match strategy {
        StrategyKind::Random => random_select(&inputs.ids, k, seed),
        StrategyKind::Alps => {
            need(&inputs.embeddings, n, "embeddings")?;
            let pairs: Vec<(SampleId, &[f64])> = inputs.ids.iter().copied().zip(inputs.embeddings.iter().copied()).collect();
            alps_select(&pairs, k, seed, opts.k_max)
        }
        StrategyKind::Batchbald => {
            need(&inputs.mc_probs, n, "MC-dropout samples")?;
            opts.batchbald.select(&inputs.ids, &inputs.mc_probs, k, seed)
        }
        _ => select_top_k(&pointwise_scores(strategy, inputs, opts)?, k),
    }
}
