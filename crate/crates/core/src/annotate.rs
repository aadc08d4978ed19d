//! Label provisioning: the masked oracle, simulated annotator pools, soft
//! labels from votes, and the queue that human annotators drain.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{LabelKind, LabelRecord, Pool, ProbVector, SampleId, PROB_SUM_TOL};
use crate::rng;

/// Reveals the ground truth of a pending sample as a hard label.
pub fn oracle_label(pool: &mut Pool, id: SampleId) -> Result<LabelRecord> {
    let class = pool.reveal_label(id)?;
    Ok(LabelRecord {
        iteration_acquired: pool.iteration(),
        ..LabelRecord::hard(id, class)
    })
}

/// A simulated annotator: row `y` of the confusion matrix is the
/// distribution of the reported class when the truth is `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    confusion: Vec<Vec<f64>>,
    multi_label_rate: f64,
}

impl AnnotatorProfile {
    pub fn new(id: impl Into<String>, confusion: Vec<Vec<f64>>, multi_label_rate: f64) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(Error::invalid("confusion matrix must be square and non-empty"));
        }
        for row in &confusion {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid("confusion rows must be probability vectors"));
            }
        }
        if !(0.0..1.0).contains(&multi_label_rate) {
            return Err(Error::invalid("multi_label_rate must be in [0, 1)"));
        }
        Ok(Self {
            id: id.into(),
            confusion,
            multi_label_rate,
        })
    }

    /// Correct with probability `accuracy`, otherwise uniform over the
    /// other classes.
    pub fn with_accuracy(id: impl Into<String>, classes: usize, accuracy: f64, multi_label_rate: f64) -> Result<Self> {
        if classes < 2 {
            return Self::new(id, vec![vec![1.0]], multi_label_rate);
        }
        let off = (1.0 - accuracy) / (classes - 1) as f64;
        let confusion = (0..classes)
            .map(|y| (0..classes).map(|j| if j == y { accuracy } else { off }).collect())
            .collect();
        Self::new(id, confusion, multi_label_rate)
    }

    pub fn perfect(id: impl Into<String>, classes: usize) -> Result<Self> {
        Self::with_accuracy(id, classes, 1.0, 0.0)
    }

    pub fn uniform(id: impl Into<String>, classes: usize) -> Result<Self> {
        let row = vec![1.0 / classes as f64; classes];
        Self::new(id, vec![row; classes], 0.0)
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    /// One annotator's label set for a sample whose truth is `truth`.
    pub fn draw(&self, truth: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let row = &self.confusion[truth];
        let first = sample_from(row, rng);
        let mut labels = vec![first];
        if self.classes() > 1 && rng.random::<f64>() < self.multi_label_rate {
            let mut rest: Vec<f64> = row.clone();
            rest[first] = 0.0;
            if rest.iter().sum::<f64>() <= 0.0 {
                rest = (0..self.classes()).map(|j| if j == first { 0.0 } else { 1.0 }).collect();
            }
            labels.push(sample_from(&rest, rng));
        }
        labels
    }
}

fn sample_from(weights: &[f64], rng: &mut rng::Rng) -> usize {
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

/// Votes of every annotator in `profiles` for sample `id` with truth
/// `truth`. Deterministic in `(seed, id)`.
pub fn simulate_votes(profiles: &[AnnotatorProfile], id: SampleId, truth: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng::rng_for(seed, "votes", id.0);
    profiles.iter().map(|p| p.draw(truth, &mut rng)).collect()
}

/// Vote counts over classes; the soft label is `counts / total` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub counts: Vec<u32>,
    pub total: u32,
}

impl SoftLabel {
    pub fn probs(&self) -> Vec<f64> {
        self.counts.iter().map(|&n| f64::from(n) / f64::from(self.total)).collect()
    }

    pub fn to_prob_vector(&self) -> ProbVector {
        ProbVector::new(self.probs()).expect("vote shares form a distribution")
    }
}

/// Sums the one-hot (or multi-hot) vote vectors of all annotators and
/// divides by the total number of emitted labels.
pub fn aggregate_soft(votes: &[Vec<usize>], classes: usize) -> Result<SoftLabel> {
    if votes.iter().all(Vec::is_empty) {
        return Err(Error::invalid("no votes to aggregate"));
    }
    let mut counts = vec![0u32; classes];
    for &v in votes.iter().flatten() {
        if v >= classes {
            return Err(Error::invalid(format!("vote {v} out of range for {classes} classes")));
        }
        counts[v] += 1;
    }
    let total = counts.iter().sum();
    Ok(SoftLabel { counts, total })
}

/// Majority over every emitted label, lowest class index on ties.
pub fn hard_from_votes(votes: &[Vec<usize>], classes: usize) -> Result<usize> {
    let soft = aggregate_soft(votes, classes)?;
    let mut best = 0;
    for (i, &n) in soft.counts.iter().enumerate() {
        if n > soft.counts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Builds a soft-label record that keeps the votes it came from.
pub fn soft_record(sample_id: SampleId, votes: Vec<Vec<usize>>, annotator_ids: Option<Vec<String>>, classes: usize) -> Result<LabelRecord> {
    let soft = aggregate_soft(&votes, classes)?;
    Ok(LabelRecord {
        sample_id,
        kind: LabelKind::Soft(soft.to_prob_vector()),
        votes: Some(votes),
        annotator_ids,
        iteration_acquired: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// The first few feature values.
    pub head: Vec<f64>,
}

impl FeatureSummary {
    pub const HEAD: usize = 4;

    pub fn of(features: &[f64]) -> Self {
        let n = features.len().max(1) as f64;
        Self {
            min: features.iter().copied().fold(f64::INFINITY, f64::min),
            max: features.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: features.iter().sum::<f64>() / n,
            head: features.iter().take(Self::HEAD).copied().collect(),
        }
    }
}

/// A queried sample as shown to human annotators. Never carries the
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub sample_id: SampleId,
    pub feature_summary: FeatureSummary,
    pub audio_ref: Option<String>,
    pub iteration: usize,
}

/// A label posted by a human annotator: either a hard class or per-annotator
/// vote sets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub sample_id: SampleId,
    #[serde(default)]
    pub hard: Option<usize>,
    #[serde(default)]
    pub votes: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub annotator_id: Option<String>,
    #[serde(default)]
    pub annotator_ids: Option<Vec<String>>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostOutcome {
    Accepted,
    /// Same idempotency key seen before; nothing was committed.
    Replayed,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct QueueState {
    class_count: usize,
    open: BTreeMap<SampleId, QueryEntry>,
    received: BTreeMap<SampleId, LabelRecord>,
    labeled: BTreeSet<SampleId>,
    keys: HashMap<String, SampleId>,
}

/// Pending-query queue shared by the labeling loop and the annotation
/// service. Many readers, one writer at a time.
#[derive(Debug, Clone)]
pub struct HumanQueue {
    inner: Arc<(Mutex<QueueState>, Condvar)>,
}

impl HumanQueue {
    pub fn new(class_count: usize) -> Self {
        Self::from_state(QueueState {
            class_count,
            ..Default::default()
        })
    }

    pub fn from_state(state: QueueState) -> Self {
        Self {
            inner: Arc::new((Mutex::new(state), Condvar::new())),
        }
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn class_count(&self) -> usize {
        self.lock().class_count
    }

    /// Serializable copy of the queue for snapshots.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&*self.lock()).expect("queue state serializes")
    }

    pub fn restore(value: serde_json::Value) -> Result<Self> {
        Ok(Self::from_state(serde_json::from_value(value)?))
    }

    pub fn enqueue(&self, entries: Vec<QueryEntry>) {
        let mut s = self.lock();
        for e in entries {
            if !s.labeled.contains(&e.sample_id) && !s.received.contains_key(&e.sample_id) {
                s.open.insert(e.sample_id, e);
            }
        }
    }

    /// Entries still waiting for a label, by ascending id.
    pub fn open_queries(&self) -> Vec<QueryEntry> {
        self.lock().open.values().cloned().collect()
    }

    pub fn is_open(&self, id: SampleId) -> bool {
        self.lock().open.contains_key(&id)
    }

    /// Validates and records a label. Replays of a known idempotency key are
    /// acknowledged without a second commit.
    pub fn post(&self, sub: LabelSubmission) -> Result<PostOutcome> {
        let mut s = self.lock();
        if let Some(key) = &sub.idempotency_key {
            if let Some(&id) = s.keys.get(key) {
                return if id == sub.sample_id {
                    Ok(PostOutcome::Replayed)
                } else {
                    Err(Error::invalid(format!("idempotency key reused for sample {id}")))
                };
            }
        }
        let id = sub.sample_id;
        if s.labeled.contains(&id) || s.received.contains_key(&id) {
            return Err(Error::AlreadyLabeled(id));
        }
        if !s.open.contains_key(&id) {
            return Err(Error::NotPending(id));
        }
        let classes = s.class_count;
        let record = match (sub.hard, sub.votes) {
            (Some(class), None) => {
                if class >= classes {
                    return Err(Error::invalid(format!(
                        "class_index {class} out of range for {classes} classes"
                    )));
                }
                LabelRecord {
                    annotator_ids: sub.annotator_id.map(|a| vec![a]),
                    ..LabelRecord::hard(id, class)
                }
            }
            (None, Some(votes)) => {
                let ids = sub.annotator_ids.or_else(|| sub.annotator_id.map(|a| vec![a]));
                soft_record(id, votes, ids, classes)?
            }
            _ => return Err(Error::invalid("provide exactly one of `hard` or `votes`")),
        };
        s.open.remove(&id);
        s.received.insert(id, record);
        if let Some(key) = sub.idempotency_key {
            s.keys.insert(key, id);
        }
        self.inner.1.notify_all();
        Ok(PostOutcome::Accepted)
    }

    /// Blocks until every id in `ids` has a label, then hands the records
    /// over. `None` waits indefinitely. On timeout nothing is consumed.
    pub fn await_labels(&self, ids: &[SampleId], timeout: Option<Duration>) -> Result<Vec<LabelRecord>> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut s = self.lock();
        loop {
            let outstanding = ids.iter().filter(|id| !s.received.contains_key(id)).count();
            if outstanding == 0 {
                break;
            }
            match deadline {
                None => s = self.inner.1.wait(s).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(Error::Paused { outstanding });
                    }
                    s = self.inner.1.wait_timeout(s, d - now).unwrap_or_else(|e| e.into_inner()).0;
                }
            }
        }
        Ok(ids
            .iter()
            .map(|id| {
                s.labeled.insert(*id);
                s.received.remove(id).expect("checked above")
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANGER: usize = 0;
    const HAPPINESS: usize = 1;
    const NEUTRAL: usize = 2;
    const SADNESS: usize = 3;

    #[test]
    fn soft_labels_from_vote_table() {
        let rows: [(Vec<Vec<usize>>, [u32; 4], u32, usize); 3] = [
            (vec![vec![ANGER], vec![ANGER], vec![ANGER]], [3, 0, 0, 0], 3, ANGER),
            (vec![vec![HAPPINESS], vec![NEUTRAL], vec![NEUTRAL]], [0, 1, 2, 0], 3, NEUTRAL),
            (vec![vec![SADNESS], vec![SADNESS], vec![SADNESS, NEUTRAL]], [0, 0, 1, 3], 4, SADNESS),
        ];
        for (votes, counts, total, hard) in rows {
            let s = aggregate_soft(&votes, 4).unwrap();
            assert_eq!(s.counts, counts);
            assert_eq!(s.total, total);
            assert_eq!(hard_from_votes(&votes, 4).unwrap(), hard);
        }
    }

    #[test]
    fn hard_tie_goes_to_lower_class() {
        assert_eq!(hard_from_votes(&[vec![3, 1], vec![1, 3]], 4).unwrap(), 1);
        assert!(aggregate_soft(&[], 4).is_err());
        assert!(aggregate_soft(&[vec![4]], 4).is_err());
    }

    #[test]
    fn perfect_annotators_agree() {
        let profiles: Vec<_> = (0..3).map(|i| AnnotatorProfile::perfect(format!("a{i}"), 4).unwrap()).collect();
        for truth in 0..4 {
            let v = simulate_votes(&profiles, SampleId(truth as u64), truth, 11);
            assert_eq!(v, vec![vec![truth]; 3]);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(AnnotatorProfile::new("x", vec![vec![0.5, 0.6], vec![0.5, 0.5]], 0.0).is_err());
        assert!(AnnotatorProfile::new("x", vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).is_err());
        let multi = AnnotatorProfile::with_accuracy("x", 4, 1.0, 0.99).unwrap();
        let mut rng = rng::seeded(1);
        let sets: Vec<_> = (0..50).map(|_| multi.draw(2, &mut rng)).collect();
        assert!(sets.iter().any(|s| s.len() == 2));
        assert!(sets.iter().all(|s| s[0] == 2 && s.iter().collect::<BTreeSet<_>>().len() == s.len()));
    }

    fn entry(id: u64) -> QueryEntry {
        QueryEntry {
            sample_id: SampleId(id),
            feature_summary: FeatureSummary::of(&[1.0, 2.0]),
            audio_ref: None,
            iteration: 0,
        }
    }

    #[test]
    fn queue_post_and_await() {
        let q = HumanQueue::new(3);
        q.enqueue(vec![entry(1), entry(2)]);
        assert_eq!(q.open_queries().len(), 2);
        let sub = LabelSubmission {
            sample_id: SampleId(1),
            hard: Some(2),
            idempotency_key: Some("k1".into()),
            ..Default::default()
        };
        assert_eq!(q.post(sub.clone()).unwrap(), PostOutcome::Accepted);
        assert_eq!(q.post(sub).unwrap(), PostOutcome::Replayed);
        assert!(matches!(
            q.post(LabelSubmission {
                sample_id: SampleId(1),
                hard: Some(0),
                ..Default::default()
            }),
            Err(Error::AlreadyLabeled(_))
        ));
        assert!(q
            .post(LabelSubmission {
                sample_id: SampleId(2),
                hard: Some(3),
                ..Default::default()
            })
            .is_err());
        assert_eq!(q.open_queries().len(), 1);

        let paused = q.await_labels(&[SampleId(1), SampleId(2)], Some(Duration::from_millis(20)));
        assert!(matches!(paused, Err(Error::Paused { outstanding: 1 })));

        let q2 = q.clone();
        let waiter = std::thread::spawn(move || q2.await_labels(&[SampleId(1), SampleId(2)], None));
        q.post(LabelSubmission {
            sample_id: SampleId(2),
            votes: Some(vec![vec![0], vec![1]]),
            ..Default::default()
        })
        .unwrap();
        let records = waiter.join().unwrap().unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[1].is_soft());
        assert!(q.open_queries().is_empty());
    }
}
