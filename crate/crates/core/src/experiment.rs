//! The active-learning loop, evaluation metrics and run reports.
//!
//! One run: optional pretraining on the pool features, an initial query
//! set, then `iterations` rounds of select → stage → label → commit →
//! retrain → evaluate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::acquisition::{select_batch, AnnotatorLogits, BatchBald, McProbs, RoundInputs, SelectOptions};
use crate::annotate::{
    oracle_label, simulate_votes, soft_record, AnnotatorProfile, FeatureSummary, HumanQueue, QueryEntry,
};
use crate::config::{AnnotatorMode, ExperimentConfig, InitializerKind, StrategyKind};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::init::{bmal_init, dacs_init, kmeans_init, random_init};
use crate::model::{ClassifierState, TrainConfig};
use crate::pool::{split_budget, LabelRecord, Pool, ProbVector, SampleId};
use crate::rng;
use crate::tapt::{pretrain, TaptState};

/// Held-out samples with their (possibly noisy) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl EvalSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid("evaluation features and labels differ in length"));
        }
        if let Some(index) = labels.iter().position(|&l| l >= class_count) {
            return Err(Error::Record {
                index,
                reason: format!("label out of range for {class_count} classes"),
            });
        }
        Ok(Self { features, labels, class_count })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::new(
            ds.rows_f64(),
            ds.labels.iter().map(|&l| usize::from(l)).collect(),
            ds.manifest.class_count,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean per-class recall over the classes present in the split.
    pub ua: f64,
    /// Overall fraction correct.
    pub wa: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// UA, WA and the confusion matrix of a set of predictions.
pub fn evaluate_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Evaluation> {
    if truth.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::invalid("one prediction per evaluation sample required"));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::invalid(format!("class outside {classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let wa = correct as f64 / truth.len() as f64;
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let ua = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(Evaluation { ua, wa, confusion })
}

/// Scores a classifier on an evaluation split given in its input space.
pub fn evaluate(model: &ClassifierState, eval: &EvalSet) -> Result<Evaluation> {
    let predicted = eval
        .features
        .iter()
        .map(|x| Ok(model.predict_proba(x)?.argmax()))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&predicted, &eval.labels, eval.class_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// `0` for the initial training set.
    pub iteration: usize,
    pub labeled: usize,
    pub ua: f64,
    pub wa: f64,
    pub train_loss: f64,
    /// Per-sample gradient evaluations spent retraining this round.
    pub gradient_steps: u64,
    /// Zero unless timing is enabled in the config.
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub pool_size: usize,
    pub per_round: usize,
    pub records: Vec<IterationRecord>,
    pub confusion: Vec<Vec<u64>>,
    pub label_reads: usize,
    /// Ids acquired in each round, the initial set first.
    pub queried: Vec<Vec<SampleId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tapt_loss: Option<Vec<f64>>,
}

pub const TSV_HEADER: &str = "iteration\tlabeled\tua\twa\ttrain_loss\tgradient_steps\twall_time_secs";

impl RunReport {
    pub fn total_gradient_steps(&self) -> u64 {
        self.records.iter().map(|r| r.gradient_steps).sum()
    }

    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_ua(&self) -> f64 {
        self.final_record().map_or(0.0, |r| r.ua)
    }

    /// One tab-separated line per evaluated round, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.iteration, r.labeled, r.ua, r.wa, r.train_loss, r.gradient_steps, r.wall_time_secs
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.tsv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let tsv = dir.join("report.tsv");
        let json = dir.join("report.json");
        fs::write(&tsv, self.to_tsv())?;
        fs::write(&json, self.to_json())?;
        Ok((tsv, json))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    #[default]
    Starting,
    Training,
    AwaitingLabels,
    Paused,
    Finished,
    Failed,
}

/// Live view of a run for monitoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: usize,
    pub iterations: usize,
    pub labeled: usize,
    pub pending: usize,
    pub budget: usize,
    pub ua: Option<f64>,
    pub wa: Option<f64>,
    pub phase: RunPhase,
    /// True once the run has finished or failed.
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub type ProgressHandle = Arc<RwLock<Progress>>;

/// Everything needed to pick a run back up after a crash or a pause.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: ExperimentConfig,
    pub pool: Pool,
    pub queue: Option<serde_json::Value>,
    pub model: Option<ClassifierState>,
    pub report: RunReport,
    pub next_round: usize,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// A configured run. [`run_experiment`] covers the common case; use this
/// type directly to attach a human queue, progress reporting or snapshots.
pub struct Experiment {
    config: ExperimentConfig,
    pool: Pool,
    eval: EvalSet,
    queue: Option<HumanQueue>,
    progress: Option<ProgressHandle>,
    snapshot_path: Option<PathBuf>,
    model: Option<ClassifierState>,
    tapt: Option<TaptState>,
    report: RunReport,
    next_round: usize,
}

/// Runs the full loop on `pool`, scoring every round on `eval`.
pub fn run_experiment(config: &ExperimentConfig, pool: Pool, eval: &EvalSet) -> Result<RunReport> {
    Experiment::new(config.clone(), pool, eval.clone())?.run()
}

impl Experiment {
    pub fn new(config: ExperimentConfig, pool: Pool, eval: EvalSet) -> Result<Self> {
        config.validate(pool.len())?;
        if eval.class_count != pool.class_count() {
            return Err(Error::invalid("evaluation split and pool disagree on the class count"));
        }
        let per_round = split_budget(config.budget, config.iterations)?;
        let queue = (config.annotator_mode == AnnotatorMode::Human).then(|| HumanQueue::new(pool.class_count()));
        let report = RunReport {
            config: config.clone(),
            seed: config.seed,
            pool_size: pool.len(),
            per_round,
            records: Vec::new(),
            confusion: Vec::new(),
            label_reads: 0,
            queried: Vec::new(),
            tapt_loss: None,
        };
        Ok(Self {
            config,
            pool,
            eval,
            queue,
            progress: None,
            snapshot_path: None,
            model: None,
            tapt: None,
            report,
            next_round: 0,
        })
    }

    /// Continues a run from a snapshot. Samples that were pending when the
    /// snapshot was taken are re-queued, not re-selected.
    pub fn resume(snapshot: Snapshot, eval: EvalSet) -> Result<Self> {
        snapshot.pool.check_invariants()?;
        let queue = match snapshot.queue {
            Some(v) => Some(HumanQueue::restore(v)?),
            None => None,
        };
        Ok(Self {
            config: snapshot.config,
            pool: snapshot.pool,
            eval,
            queue,
            progress: None,
            snapshot_path: None,
            model: snapshot.model,
            tapt: None,
            report: snapshot.report,
            next_round: snapshot.next_round,
        })
    }

    pub fn with_progress(mut self, progress: ProgressHandle) -> Self {
        self.progress = Some(progress);
        self
    }

    /// Writes a snapshot to `path` after every stage and commit.
    pub fn with_snapshots(mut self, path: impl Into<PathBuf>) -> Self {
        self.snapshot_path = Some(path.into());
        self
    }

    /// The queue human labels are posted to, in human mode.
    pub fn queue(&self) -> Option<&HumanQueue> {
        self.queue.as_ref()
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn model(&self) -> Option<&ClassifierState> {
        self.model.as_ref()
    }

    pub fn tapt(&self) -> Option<&TaptState> {
        self.tapt.as_ref()
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    /// Runs to completion. On error the progress handle is marked failed
    /// (or paused) and a snapshot is written if configured.
    pub fn run(&mut self) -> Result<RunReport> {
        match self.run_inner() {
            Ok(()) => {
                self.update_progress(|p| {
                    p.phase = RunPhase::Finished;
                    p.terminal = true;
                });
                Ok(self.report.clone())
            }
            Err(e) => {
                let paused = matches!(e, Error::Paused { .. });
                let msg = e.to_string();
                self.update_progress(|p| {
                    p.phase = if paused { RunPhase::Paused } else { RunPhase::Failed };
                    p.terminal = !paused;
                    p.error = Some(msg);
                });
                // The original error matters more than a failed snapshot.
                let _ = self.save_snapshot();
                Err(e)
            }
        }
    }

    fn run_inner(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let (features, eval) = self.feature_space()?;
        let per_round = self.report.per_round;
        self.update_progress(|p| {
            p.iterations = cfg.iterations;
            p.budget = cfg.budget;
        });
        let mut annotator_models = Vec::new();

        if self.next_round == 0 {
            let ids = if self.pool.pending().is_empty() {
                let ids = self.initial_query(&features)?;
                self.pool.stage_query(&ids)?;
                self.save_snapshot()?;
                ids
            } else {
                self.pool.pending().iter().copied().collect()
            };
            self.acquire(&ids, &features, &eval, 0, &mut annotator_models)?;
            self.next_round = 1;
            self.save_snapshot()?;
        }

        for round in self.next_round..=cfg.iterations {
            while self.pool.iteration() < round {
                self.pool.advance_iteration();
            }
            let ids = if self.pool.pending().is_empty() {
                let k = per_round.min(self.pool.unlabeled().len());
                if k == 0 {
                    break;
                }
                if self.model.is_none() {
                    self.retrain(&features, round)?;
                }
                if cfg.strategy.is_multi_annotator() && annotator_models.is_empty() {
                    annotator_models = self.train_annotator_models(&features, round)?;
                }
                let ids = self.select(&features, &annotator_models, k, round)?;
                self.pool.stage_query(&ids)?;
                self.save_snapshot()?;
                ids
            } else {
                self.pool.pending().iter().copied().collect()
            };
            self.acquire(&ids, &features, &eval, round, &mut annotator_models)?;
            self.next_round = round + 1;
            self.save_snapshot()?;
        }
        Ok(())
    }

    // Label, commit, retrain and evaluate one query set.
    fn acquire(
        &mut self,
        ids: &[SampleId],
        features: &BTreeMap<SampleId, Vec<f64>>,
        eval: &EvalSet,
        round: usize,
        annotator_models: &mut Vec<ClassifierState>,
    ) -> Result<()> {
        let start = Instant::now();
        let records = self.label(ids)?;
        self.pool.commit_labels(records)?;
        self.report.queried.push(ids.to_vec());
        self.update_progress(|p| p.phase = RunPhase::Training);
        let trained = self.retrain(features, round)?;
        if self.config.strategy.is_multi_annotator() {
            *annotator_models = self.train_annotator_models(features, round)?;
        }
        let model = self.model.as_ref().expect("trained above");
        let ev = evaluate(model, eval)?;
        let wall = if self.config.timing { start.elapsed().as_secs_f64() } else { 0.0 };
        self.report.records.push(IterationRecord {
            iteration: round,
            labeled: self.pool.labeled().len(),
            ua: ev.ua,
            wa: ev.wa,
            train_loss: trained.0,
            gradient_steps: trained.1,
            wall_time_secs: wall,
        });
        self.report.confusion = ev.confusion;
        self.report.label_reads = self.pool.label_reads();
        let (labeled, pending) = (self.pool.labeled().len(), self.pool.pending().len());
        self.update_progress(|p| {
            p.iteration = round;
            p.labeled = labeled;
            p.pending = pending;
            p.ua = Some(ev.ua);
            p.wa = Some(ev.wa);
        });
        Ok(())
    }

    // Pool and eval features in the classifier's input space.
    fn feature_space(&mut self) -> Result<(BTreeMap<SampleId, Vec<f64>>, EvalSet)> {
        let raw: BTreeMap<SampleId, Vec<f64>> = self.pool.samples().map(|s| (s.id, s.features.clone())).collect();
        if !self.config.tapt_enabled {
            return Ok((raw, self.eval.clone()));
        }
        let refs: Vec<&[f64]> = raw.values().map(Vec::as_slice).collect();
        let (state, report) = pretrain(&refs, &self.config.tapt, rng::derive_seed(self.config.seed, "tapt", 0))?;
        let encoded = raw
            .iter()
            .map(|(id, x)| Ok((*id, state.encode(x)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let eval_features = self.eval.features.iter().map(|x| state.encode(x)).collect::<Result<Vec<_>>>()?;
        let eval = EvalSet { features: eval_features, ..self.eval.clone() };
        self.report.tapt_loss = Some(report.loss_trace);
        self.tapt = Some(state);
        Ok((encoded, eval))
    }

    fn fresh_model(&self, input_dim: usize, tag: &str) -> Result<ClassifierState> {
        let c = &self.config;
        ClassifierState::new(
            c.architecture,
            input_dim,
            self.pool.class_count(),
            c.hidden_width,
            c.dropout_rate,
            rng::derive_seed(c.seed, tag, 0),
        )
    }

    fn input_dim(features: &BTreeMap<SampleId, Vec<f64>>) -> usize {
        features.values().next().map_or(0, Vec::len)
    }

    fn train_config(&self, tag: &str, round: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.config.epochs,
            learning_rate: self.config.learning_rate,
            patience: self.config.patience,
            seed: rng::derive_seed(self.config.seed, tag, round as u64),
        }
    }

    // Returns (final training loss, gradient steps).
    fn retrain(&mut self, features: &BTreeMap<SampleId, Vec<f64>>, round: usize) -> Result<(f64, u64)> {
        let mut model = match self.model.take() {
            Some(m) if self.config.warm_start => m,
            _ => self.fresh_model(Self::input_dim(features), "model-init")?,
        };
        let c = self.pool.class_count();
        let labeled = self.pool.labeled();
        let inputs: Vec<&[f64]> = labeled.keys().map(|id| features[id].as_slice()).collect();
        let targets: Vec<Vec<f64>> = labeled.values().map(|r| r.target(c)).collect();
        let result = model.train(&inputs, &targets, &self.train_config("train", round));
        self.model = Some(model);
        let report = result?;
        Ok((report.final_loss, report.gradient_steps))
    }

    // One classifier per simulated annotator, trained on that annotator's
    // own votes over the labeled set.
    fn train_annotator_models(
        &self,
        features: &BTreeMap<SampleId, Vec<f64>>,
        round: usize,
    ) -> Result<Vec<ClassifierState>> {
        let c = self.pool.class_count();
        let count = self.config.annotators.count;
        let labeled = self.pool.labeled();
        let inputs: Vec<&[f64]> = labeled.keys().map(|id| features[id].as_slice()).collect();
        (0..count)
            .map(|a| {
                let targets: Vec<Vec<f64>> = labeled.values().map(|r| annotator_target(r, a, c)).collect();
                let tag = format!("annotator-{a}");
                let mut model = self.fresh_model(Self::input_dim(features), &tag)?;
                model.train(&inputs, &targets, &self.train_config(&tag, round))?;
                Ok(model)
            })
            .collect()
    }

    fn candidates<'a>(&self, features: &'a BTreeMap<SampleId, Vec<f64>>) -> Vec<(SampleId, &'a [f64])> {
        self.pool.unlabeled().iter().map(|id| (*id, features[id].as_slice())).collect()
    }

    fn initial_query(&self, features: &BTreeMap<SampleId, Vec<f64>>) -> Result<Vec<SampleId>> {
        let cfg = &self.config;
        let items = self.candidates(features);
        let seed = rng::derive_seed(cfg.seed, "init", 0);
        match cfg.initializer {
            InitializerKind::Kmeans => kmeans_init(&items, cfg.init_fraction, seed, cfg.k_max),
            InitializerKind::Dacs => dacs_init(&items, cfg.init_fraction, cfg.knn),
            InitializerKind::Random => random_init(&items, cfg.init_fraction, seed),
            InitializerKind::Bmal => {
                let model = self.fresh_model(Self::input_dim(features), "model-init")?;
                let probs = items
                    .iter()
                    .map(|(_, x)| model.predict_proba(x))
                    .collect::<Result<Vec<ProbVector>>>()?;
                bmal_init(&items, &probs, cfg.init_fraction, cfg.knn)
            }
        }
    }

    fn select(
        &self,
        features: &BTreeMap<SampleId, Vec<f64>>,
        annotator_models: &[ClassifierState],
        k: usize,
        round: usize,
    ) -> Result<Vec<SampleId>> {
        let cfg = &self.config;
        let model = self.model.as_ref().expect("model exists before selection");
        let items = self.candidates(features);
        let mut inputs = RoundInputs {
            ids: items.iter().map(|(id, _)| *id).collect(),
            ..RoundInputs::default()
        };
        match cfg.strategy {
            StrategyKind::Entropy | StrategyKind::LeastConfidence | StrategyKind::Margin => {
                inputs.probs = items.iter().map(|(_, x)| model.predict_proba(x)).collect::<Result<_>>()?;
            }
            StrategyKind::Alps => inputs.embeddings = items.iter().map(|(_, x)| *x).collect(),
            StrategyKind::Batchbald => {
                let xs: Vec<&[f64]> = items.iter().map(|(_, x)| *x).collect();
                let draws = model.mc_dropout_predict_batch(
                    &xs,
                    cfg.mc_samples,
                    rng::derive_seed(cfg.seed, "mc-dropout", round as u64),
                )?;
                inputs.mc_probs = draws.iter().map(|d| McProbs::new(d)).collect::<Result<_>>()?;
            }
            StrategyKind::Indi | StrategyKind::Group | StrategyKind::Vote | StrategyKind::Mix => {
                inputs.annotator_logits = items
                    .iter()
                    .map(|(_, x)| {
                        let logits = annotator_models.iter().map(|m| m.logits(x)).collect::<Result<Vec<_>>>()?;
                        AnnotatorLogits::new(logits)
                    })
                    .collect::<Result<_>>()?;
            }
            StrategyKind::Random => {}
        }
        let opts = SelectOptions {
            k_max: cfg.k_max,
            batchbald: BatchBald {
                exact_limit: cfg.batchbald_exact_limit,
                outcome_samples: cfg.batchbald_outcome_samples,
            },
            individual_aggregate: cfg.individual_aggregate,
        };
        select_batch(cfg.strategy, &inputs, k, rng::derive_seed(cfg.seed, "select", round as u64), &opts)
    }

    fn label(&mut self, ids: &[SampleId]) -> Result<Vec<LabelRecord>> {
        let c = self.pool.class_count();
        match self.config.annotator_mode {
            AnnotatorMode::Oracle => ids.iter().map(|&id| oracle_label(&mut self.pool, id)).collect(),
            AnnotatorMode::SimulatedMulti => {
                let a = &self.config.annotators;
                let profiles = (0..a.count)
                    .map(|i| AnnotatorProfile::with_accuracy(format!("annotator-{i}"), c, a.accuracy, a.multi_label_rate))
                    .collect::<Result<Vec<_>>>()?;
                let names: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
                let seed = rng::derive_seed(self.config.seed, "annotators", 0);
                ids.iter()
                    .map(|&id| {
                        let truth = self.pool.reveal_label(id)?;
                        let votes = simulate_votes(&profiles, id, truth, seed);
                        soft_record(id, votes, Some(names.clone()), c)
                    })
                    .collect()
            }
            AnnotatorMode::Human => {
                let queue = self
                    .queue
                    .clone()
                    .ok_or_else(|| Error::invalid("human mode needs a label queue"))?;
                let iteration = self.pool.iteration();
                let entries = ids
                    .iter()
                    .map(|&id| {
                        let s = self.pool.sample(id).expect("pending ids exist");
                        QueryEntry {
                            sample_id: id,
                            feature_summary: FeatureSummary::of(&s.features),
                            audio_ref: s.audio_ref.clone(),
                            iteration,
                        }
                    })
                    .collect();
                queue.enqueue(entries);
                let pending = self.pool.pending().len();
                self.update_progress(|p| {
                    p.phase = RunPhase::AwaitingLabels;
                    p.pending = pending;
                });
                self.save_snapshot()?;
                let timeout = match self.config.human_timeout_secs {
                    0 => None,
                    s => Some(Duration::from_secs(s)),
                };
                queue.await_labels(ids, timeout)
            }
        }
    }

    fn update_progress(&self, f: impl FnOnce(&mut Progress)) {
        if let Some(p) = &self.progress {
            let mut guard = p.write().unwrap_or_else(|e| e.into_inner());
            f(&mut guard);
        }
    }

    fn save_snapshot(&self) -> Result<()> {
        let Some(path) = &self.snapshot_path else {
            return Ok(());
        };
        Snapshot {
            config: self.config.clone(),
            pool: self.pool.clone(),
            queue: self.queue.as_ref().map(HumanQueue::snapshot),
            model: self.model.clone(),
            report: self.report.clone(),
            next_round: self.next_round,
        }
        .write(path)
    }
}

// Annotator `a`'s label set as a distribution; falls back to the record's
// own target when there are no per-annotator votes.
fn annotator_target(record: &LabelRecord, a: usize, classes: usize) -> Vec<f64> {
    match record.votes.as_ref().and_then(|v| v.get(a)).filter(|v| !v.is_empty()) {
        Some(set) => {
            let mut t = vec![0.0; classes];
            for &y in set {
                t[y] += 1.0 / set.len() as f64;
            }
            t
        }
        None => record.target(classes),
    }
}
