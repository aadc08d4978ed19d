//! Greedy BatchBALD.
//!
//! The score of a batch is the mutual information between its joint
//! prediction and the model parameters,
//!
//! ```text
//! I(y_1..y_b; w) = H(y_1..y_b) - Σ_i E_w[H(y_i | w)]
//! ```
//!
//! with the parameter posterior represented by `T` MC-dropout draws. The
//! joint entropy averages joint outcome probabilities over the draws. Up to
//! `exact_limit` points the `c^b` joint outcomes are enumerated; beyond
//! that, outcome configurations are sampled from the joint predictive and
//! the entropy is estimated by importance weighting.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::pointwise::entropy;
use crate::error::{Error, Result};
use crate::pool::{ProbVector, SampleId};
use crate::rng;

/// Scores closer than this count as tied.
const TIE_TOL: f64 = 1e-12;

/// MC-dropout predictions for one candidate: `draws` rows of `classes`
/// probabilities. Row `t` of every candidate must come from the same draw.
#[derive(Debug, Clone, PartialEq)]
pub struct McProbs {
    draws: usize,
    classes: usize,
    data: Vec<f64>,
}

impl McProbs {
    pub fn new(rows: &[ProbVector]) -> Result<Self> {
        let classes = rows.first().map_or(0, ProbVector::len);
        if rows.is_empty() || classes == 0 {
            return Err(Error::invalid("MC probabilities need at least one draw"));
        }
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::invalid("MC draws differ in class count"));
        }
        Ok(Self {
            draws: rows.len(),
            classes,
            data: rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect(),
        })
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Probability of class `y` under draw `t`.
    pub fn prob(&self, t: usize, y: usize) -> f64 {
        self.data[t * self.classes + y]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    /// Posterior-averaged predictive distribution.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.classes];
        for t in 0..self.draws {
            for (acc, p) in m.iter_mut().zip(self.row(t)) {
                *acc += p;
            }
        }
        m.iter().map(|v| v / self.draws as f64).collect()
    }

    /// `E_w[H(y | w)]`.
    pub fn expected_entropy(&self) -> f64 {
        (0..self.draws).map(|t| entropy(self.row(t))).sum::<f64>() / self.draws as f64
    }
}

/// Pointwise BALD: `H(mean_t p_t) - mean_t H(p_t)`.
pub fn bald(mc: &McProbs) -> f64 {
    entropy(&mc.mean()) - mc.expected_entropy()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchBald {
    /// Largest batch whose joint outcomes are enumerated exactly.
    pub exact_limit: usize,
    /// Sampled outcome configurations once the batch outgrows `exact_limit`.
    pub outcome_samples: usize,
}

impl Default for BatchBald {
    fn default() -> Self {
        Self {
            exact_limit: 4,
            outcome_samples: 1000,
        }
    }
}

/// Joint-outcome state of the batch built so far.
enum Joint {
    /// `probs[t * configs + y]`: probability of configuration `y` under draw `t`.
    Exact { configs: usize, probs: Vec<f64> },
    /// `weights[m * draws + t]`: probability of sampled configuration `m` under draw `t`.
    Sampled { paths: usize, weights: Vec<f64> },
}

impl Joint {
    /// Joint entropy after adding `cand` to the batch.
    fn entropy_with(&self, cand: &McProbs) -> f64 {
        let (t_n, c) = (cand.draws, cand.classes);
        match self {
            Joint::Exact { configs, probs } => {
                let mut h = 0.0;
                for y in 0..*configs {
                    for yc in 0..c {
                        let p: f64 = (0..t_n).map(|t| probs[t * configs + y] * cand.prob(t, yc)).sum::<f64>()
                            / t_n as f64;
                        if p > 0.0 {
                            h -= p * p.ln();
                        }
                    }
                }
                h
            }
            Joint::Sampled { paths, weights } => {
                let mut h = 0.0;
                for m in 0..*paths {
                    let w = &weights[m * t_n..(m + 1) * t_n];
                    let base: f64 = w.iter().sum::<f64>() / t_n as f64;
                    if base <= 0.0 {
                        continue;
                    }
                    for yc in 0..c {
                        let p: f64 = (0..t_n).map(|t| w[t] * cand.prob(t, yc)).sum::<f64>() / t_n as f64;
                        if p > 0.0 {
                            h -= (p / base) * p.ln();
                        }
                    }
                }
                h / *paths as f64
            }
        }
    }

    fn extend(&mut self, cand: &McProbs, rng: &mut rng::Rng) {
        let (t_n, c) = (cand.draws, cand.classes);
        match self {
            Joint::Exact { configs, probs } => {
                let mut next = vec![0.0; t_n * *configs * c];
                for t in 0..t_n {
                    for y in 0..*configs {
                        for yc in 0..c {
                            next[t * *configs * c + y * c + yc] = probs[t * *configs + y] * cand.prob(t, yc);
                        }
                    }
                }
                *configs *= c;
                *probs = next;
            }
            Joint::Sampled { paths, weights } => {
                for m in 0..*paths {
                    let w = &mut weights[m * t_n..(m + 1) * t_n];
                    let pred: Vec<f64> = (0..c).map(|yc| (0..t_n).map(|t| w[t] * cand.prob(t, yc)).sum()).collect();
                    let yc = sample_index(&pred, rng);
                    for (t, wt) in w.iter_mut().enumerate() {
                        *wt *= cand.prob(t, yc);
                    }
                }
            }
        }
    }

    /// Replaces exact enumeration with `paths` configurations drawn from the
    /// joint predictive.
    fn into_sampled(self, draws: usize, paths: usize, rng: &mut rng::Rng) -> Joint {
        match self {
            Joint::Exact { configs, probs } => {
                let marginal: Vec<f64> = (0..configs)
                    .map(|y| (0..draws).map(|t| probs[t * configs + y]).sum())
                    .collect();
                let mut weights = Vec::with_capacity(paths * draws);
                for _ in 0..paths {
                    let y = sample_index(&marginal, rng);
                    weights.extend((0..draws).map(|t| probs[t * configs + y]));
                }
                Joint::Sampled { paths, weights }
            }
            sampled => sampled,
        }
    }
}

fn sample_index(weights: &[f64], rng: &mut rng::Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn check_shapes(mc: &[McProbs]) -> Result<(usize, usize)> {
    let first = mc.first().ok_or_else(|| Error::invalid("no candidates"))?;
    let (t, c) = (first.draws, first.classes);
    if mc.iter().any(|m| m.draws != t || m.classes != c) {
        return Err(Error::invalid("candidates differ in draw or class count"));
    }
    Ok((t, c))
}

impl BatchBald {
    /// Mutual information of the batch `members` (indices into `mc`),
    /// always by exact enumeration of the joint outcomes.
    pub fn exact_score(mc: &[McProbs], members: &[usize]) -> Result<f64> {
        let (t, _) = check_shapes(mc)?;
        let mut joint = Joint::Exact {
            configs: 1,
            probs: vec![1.0; t],
        };
        let mut rng = rng::seeded(0);
        let Some((&last, rest)) = members.split_last() else {
            return Ok(0.0);
        };
        for &i in rest {
            joint.extend(&mc[i], &mut rng);
        }
        let cond: f64 = members.iter().map(|&i| mc[i].expected_entropy()).sum();
        Ok(joint.entropy_with(&mc[last]) - cond)
    }

    /// Greedy batch of `k` candidates; `mc[i]` belongs to `ids[i]`. Ties go
    /// to the candidate earlier in a seed-determined order. Returns ids in
    /// the order they were added.
    pub fn select(&self, ids: &[SampleId], mc: &[McProbs], k: usize, seed: u64) -> Result<Vec<SampleId>> {
        if ids.len() != mc.len() {
            return Err(Error::invalid("one MC matrix per candidate required"));
        }
        if k > ids.len() {
            return Err(Error::invalid(format!("k = {k} exceeds the {} candidates", ids.len())));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let (t_n, _) = check_shapes(mc)?;
        if t_n < 2 {
            return Err(Error::invalid("BatchBALD needs at least two MC draws"));
        }
        let order = self.tie_order(ids, seed);
        let cond: Vec<f64> = mc.iter().map(McProbs::expected_entropy).collect();
        let mut rng = rng::rng_for(seed, "batchbald-paths", 0);
        let mut joint = Joint::Exact {
            configs: 1,
            probs: vec![1.0; t_n],
        };
        let mut taken = vec![false; ids.len()];
        let mut chosen = Vec::with_capacity(k);
        let mut cond_sum = 0.0;
        for step in 0..k {
            if step >= self.exact_limit.max(1) {
                joint = joint.into_sampled(t_n, self.outcome_samples.max(1), &mut rng);
            }
            let mut best: Option<(usize, f64)> = None;
            for &i in &order {
                if taken[i] {
                    continue;
                }
                let score = joint.entropy_with(&mc[i]) - cond_sum - cond[i];
                if best.is_none_or(|(_, b)| score > b + TIE_TOL) {
                    best = Some((i, score));
                }
            }
            let (i, _) = best.expect("k <= candidates");
            taken[i] = true;
            cond_sum += cond[i];
            joint.extend(&mc[i], &mut rng);
            chosen.push(ids[i]);
        }
        Ok(chosen)
    }

    /// Candidate indices in seed-determined tie-break order.
    fn tie_order(&self, ids: &[SampleId], seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| ids[i]);
        order.shuffle(&mut rng::rng_for(seed, "batchbald-ties", 0));
        order
    }
}
