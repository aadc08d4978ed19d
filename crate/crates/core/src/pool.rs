//! Domain types and the pool state machine.
//!
//! Every sample of a dataset lives in exactly one of three sets:
//! `unlabeled` (the acquisition pool), `pending` (queried, awaiting a
//! label) and `labeled` (the training set). Samples only ever move
//! forward: unlabeled → pending → labeled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    /// Ground truth, masked until the sample is queried. Read it through
    /// [`Pool::reveal_label`] so label accesses are counted.
    pub(crate) true_label: Option<usize>,
    pub audio_ref: Option<String>,
}

impl Sample {
    pub fn new(id: SampleId, features: Vec<f64>) -> Result<Self> {
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample {id}: feature {pos} is not finite"
            )));
        }
        Ok(Self {
            id,
            features,
            true_label: None,
            audio_ref: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.true_label = Some(label);
        self
    }

    pub fn with_audio_ref(mut self, audio_ref: impl Into<String>) -> Self {
        self.audio_ref = Some(audio_ref.into());
        self
    }

    pub fn has_true_label(&self) -> bool {
        self.true_label.is_some()
    }
}

/// A non-negative vector of class probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probability vector is empty"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Hard(usize),
    Soft(ProbVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sample_id: SampleId,
    pub kind: LabelKind,
    /// Per-annotator label sets; an annotator may emit more than one class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_ids: Option<Vec<String>>,
    #[serde(default)]
    pub iteration_acquired: usize,
}

impl LabelRecord {
    pub fn hard(sample_id: SampleId, class: usize) -> Self {
        Self {
            sample_id,
            kind: LabelKind::Hard(class),
            votes: None,
            annotator_ids: None,
            iteration_acquired: 0,
        }
    }

    /// Training target as a dense probability vector over `classes`.
    pub fn target(&self, classes: usize) -> Vec<f64> {
        match &self.kind {
            LabelKind::Hard(c) => {
                let mut t = vec![0.0; classes];
                t[*c] = 1.0;
                t
            }
            LabelKind::Soft(p) => p.as_slice().to_vec(),
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self.kind, LabelKind::Soft(_))
    }

    /// Class used for hard decisions: the label itself, or the soft mode.
    pub fn hard_class(&self) -> usize {
        match &self.kind {
            LabelKind::Hard(c) => *c,
            LabelKind::Soft(p) => p.argmax(),
        }
    }

    pub(crate) fn validate(&self, classes: usize) -> Result<()> {
        match &self.kind {
            LabelKind::Hard(c) if *c >= classes => Err(Error::invalid(format!(
                "sample {}: class {c} out of range for {classes} classes",
                self.sample_id
            ))),
            LabelKind::Soft(p) if p.len() != classes => Err(Error::invalid(format!(
                "sample {}: soft label has {} entries, expected {classes}",
                self.sample_id,
                p.len()
            ))),
            LabelKind::Soft(_) if self.votes.as_ref().is_none_or(|v| v.is_empty()) => Err(
                Error::invalid(format!("sample {}: soft label without votes", self.sample_id)),
            ),
            _ => Ok(()),
        }?;
        if let Some(votes) = &self.votes {
            if votes.iter().flatten().any(|&c| c >= classes) {
                return Err(Error::invalid(format!(
                    "sample {}: vote outside {classes} classes",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-round acquisition size: the budget divided by the number of rounds,
/// rounded down. The remainder of the budget is never spent.
pub fn split_budget(budget: usize, iterations: usize) -> Result<usize> {
    if iterations == 0 {
        return Err(Error::Budget("iteration count must be at least 1".into()));
    }
    if budget < iterations {
        return Err(Error::Budget(format!(
            "budget {budget} is smaller than the iteration count {iterations}"
        )));
    }
    Ok(budget / iterations)
}

/// The partition of a dataset into unlabeled, pending and labeled samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pool {
    all: BTreeMap<SampleId, Sample>,
    unlabeled: BTreeSet<SampleId>,
    pending: BTreeSet<SampleId>,
    labeled: BTreeMap<SampleId, LabelRecord>,
    class_count: usize,
    iteration: usize,
    label_reads: usize,
}

impl Pool {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        let dim = samples.first().map(|s| s.features.len());
        let mut all = BTreeMap::new();
        for (index, s) in samples.into_iter().enumerate() {
            if Some(s.features.len()) != dim {
                return Err(Error::Record {
                    index,
                    reason: format!("expected {} features, found {}", dim.unwrap_or(0), s.features.len()),
                });
            }
            if let Some(label) = s.true_label {
                if label >= class_count {
                    return Err(Error::Record {
                        index,
                        reason: format!("label {label} out of range for {class_count} classes"),
                    });
                }
            }
            let id = s.id;
            if all.insert(id, s).is_some() {
                return Err(Error::Record {
                    index,
                    reason: format!("duplicate sample id {id}"),
                });
            }
        }
        let unlabeled = all.keys().copied().collect();
        Ok(Self {
            all,
            unlabeled,
            pending: BTreeSet::new(),
            labeled: BTreeMap::new(),
            class_count,
            iteration: 0,
            label_reads: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.all.values().next().map_or(0, |s| s.features.len())
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Number of ground-truth labels read through [`Pool::reveal_label`].
    pub fn label_reads(&self) -> usize {
        self.label_reads
    }

    pub fn sample(&self, id: SampleId) -> Option<&Sample> {
        self.all.get(&id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.all.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.all.keys().copied()
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn pending(&self) -> &BTreeSet<SampleId> {
        &self.pending
    }

    pub fn labeled(&self) -> &BTreeMap<SampleId, LabelRecord> {
        &self.labeled
    }

    pub fn is_exhausted(&self) -> bool {
        self.unlabeled.is_empty()
    }

    /// Starts the next acquisition round.
    pub fn advance_iteration(&mut self) {
        self.iteration += 1;
    }

    /// Moves `ids` from the unlabeled pool to the pending set. Either every
    /// id moves or none does.
    pub fn stage_query(&mut self, ids: &[SampleId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &id in ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            if !self.unlabeled.contains(&id) {
                return Err(Error::NotUnlabeled(id));
            }
        }
        for id in ids {
            self.unlabeled.remove(id);
            self.pending.insert(*id);
        }
        Ok(())
    }

    /// Reveals the masked ground truth of a pending sample.
    pub fn reveal_label(&mut self, id: SampleId) -> Result<usize> {
        if !self.pending.contains(&id) {
            return Err(Error::NotPending(id));
        }
        let label = self.all[&id]
            .true_label
            .ok_or_else(|| Error::invalid(format!("sample {id} has no ground-truth label")))?;
        self.label_reads += 1;
        Ok(label)
    }

    /// Moves labeled samples from pending to the training set. The batch is
    /// validated as a whole before anything changes.
    pub fn commit_labels(&mut self, records: Vec<LabelRecord>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.sample_id) {
                return Err(Error::DuplicateId(r.sample_id));
            }
            if self.labeled.contains_key(&r.sample_id) {
                return Err(Error::AlreadyLabeled(r.sample_id));
            }
            if !self.pending.contains(&r.sample_id) {
                return Err(Error::NotPending(r.sample_id));
            }
            r.validate(self.class_count)?;
        }
        for mut r in records {
            r.iteration_acquired = self.iteration;
            self.pending.remove(&r.sample_id);
            self.labeled.insert(r.sample_id, r);
        }
        Ok(())
    }

    /// Checks the partition invariant; used by tests and snapshot loading.
    pub fn check_invariants(&self) -> Result<()> {
        let total = self.unlabeled.len() + self.pending.len() + self.labeled.len();
        if total != self.all.len() {
            return Err(Error::invalid(format!(
                "partition sizes sum to {total}, pool has {}",
                self.all.len()
            )));
        }
        let disjoint = self.unlabeled.is_disjoint(&self.pending)
            && self.labeled.keys().all(|id| !self.unlabeled.contains(id) && !self.pending.contains(id));
        if !disjoint {
            return Err(Error::invalid("partition sets overlap"));
        }
        if let Some(id) = self
            .unlabeled
            .iter()
            .chain(&self.pending)
            .chain(self.labeled.keys())
            .find(|id| !self.all.contains_key(id))
        {
            return Err(Error::invalid(format!("unknown sample {id} in partition")));
        }
        Ok(())
    }
}
