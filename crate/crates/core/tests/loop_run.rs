mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use poolal::annotate::{simulate_votes, AnnotatorProfile, LabelSubmission};
use poolal::config::{Architecture, InitializerKind, StrategyKind};
use poolal::experiment::{EvalSet, Experiment, Progress, RunPhase, Snapshot};
use poolal::{
    run_experiment, AnnotatorMode, Error, ExperimentConfig, Pool, Sample, SampleId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::small_pool;

fn quick(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        architecture: Architecture::Linear,
        epochs: 30,
        patience: 5,
        mc_samples: 5,
        seed,
        ..ExperimentConfig::default()
    }
}

/// Pool whose ground truth the test keeps a copy of.
fn known_pool(n: usize, seed: u64) -> (Pool, EvalSet, BTreeMap<SampleId, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = BTreeMap::new();
    let mut samples = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 3;
        let x: Vec<f64> = (0..4).map(|k| if k == y { 3.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect();
        let id = SampleId(100 + i as u64);
        truth.insert(id, y);
        samples.push(Sample::new(id, x.clone()).unwrap().with_label(y));
        features.push(x);
        labels.push(y);
    }
    (Pool::new(samples, 3).unwrap(), EvalSet::new(features, labels, 3).unwrap(), truth)
}

#[test]
fn nine_labels_over_three_rounds() {
    let (pool, eval) = small_pool(100, 1);
    let n = pool.len();
    let cfg = ExperimentConfig { budget: 9, iterations: 3, init_fraction: 0.01, ..quick(1) };
    let report = run_experiment(&cfg, pool, &eval).unwrap();
    assert_eq!(report.per_round, 3);
    let labeled: Vec<usize> = report.records.iter().map(|r| r.labeled).collect();
    assert_eq!(labeled, vec![3, 6, 9, 12]);
    assert_eq!(report.queried.len(), 4);
    let all: BTreeSet<SampleId> = report.queried.iter().flatten().copied().collect();
    assert_eq!(all.len(), 12, "no sample is queried twice");
    assert_eq!(report.label_reads, 12);
    assert_eq!(report.pool_size, n);
}

#[test]
fn single_round_takes_the_whole_budget() {
    let (pool, eval) = small_pool(40, 2);
    let cfg = ExperimentConfig { budget: 7, iterations: 1, ..quick(2) };
    let report = run_experiment(&cfg, pool, &eval).unwrap();
    assert_eq!(report.per_round, 7);
    assert_eq!(report.records.len(), 2);
    assert_eq!(report.records[1].labeled - report.records[0].labeled, 7);
}

#[test]
fn budget_below_round_count_is_rejected() {
    let (pool, eval) = small_pool(20, 3);
    let cfg = ExperimentConfig { budget: 2, iterations: 3, ..quick(3) };
    assert!(run_experiment(&cfg, pool, &eval).is_err());
}

#[test]
fn exhausted_pool_stops_early() {
    let (pool, eval) = small_pool(5, 4);
    let n = pool.len();
    let cfg = ExperimentConfig { budget: n, iterations: 3, ..quick(4) };
    let report = run_experiment(&cfg, pool, &eval).unwrap();
    assert_eq!(report.records.last().unwrap().labeled, n);
    assert!(report.records.len() <= 4);
}

#[test]
fn every_strategy_runs() {
    let strategies = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::LeastConfidence,
        StrategyKind::Margin,
        StrategyKind::Alps,
        StrategyKind::Batchbald,
        StrategyKind::Indi,
        StrategyKind::Group,
        StrategyKind::Vote,
        StrategyKind::Mix,
    ];
    let initializers = [InitializerKind::Kmeans, InitializerKind::Dacs, InitializerKind::Bmal, InitializerKind::Random];
    for (i, strategy) in strategies.into_iter().enumerate() {
        let (pool, eval) = small_pool(30, 10 + i as u64);
        let mode = if strategy.is_multi_annotator() { AnnotatorMode::SimulatedMulti } else { AnnotatorMode::Oracle };
        let cfg = ExperimentConfig {
            strategy,
            initializer: initializers[i % 4],
            annotator_mode: mode,
            budget: 12,
            iterations: 3,
            init_fraction: 0.05,
            ..quick(i as u64)
        };
        let report = run_experiment(&cfg, pool, &eval).unwrap_or_else(|e| panic!("{strategy:?}: {e}"));
        assert_eq!(report.records.len(), 4, "{strategy:?}");
        let r = report.final_record().unwrap();
        assert!((0.0..=1.0).contains(&r.ua) && (0.0..=1.0).contains(&r.wa), "{strategy:?}");
        let all: BTreeSet<SampleId> = report.queried.iter().flatten().copied().collect();
        assert_eq!(all.len(), report.queried.iter().map(Vec::len).sum::<usize>(), "{strategy:?}");
    }
}

#[test]
fn simulated_annotators_store_soft_labels() {
    let (pool, eval) = small_pool(30, 5);
    let cfg = ExperimentConfig {
        strategy: StrategyKind::Vote,
        annotator_mode: AnnotatorMode::SimulatedMulti,
        budget: 6,
        iterations: 2,
        ..quick(5)
    };
    let mut exp = Experiment::new(cfg, pool, eval).unwrap();
    exp.run().unwrap();
    let labeled = exp.pool().labeled();
    assert!(labeled.values().all(|r| r.is_soft() && r.votes.as_ref().unwrap().len() == 3));
    for r in labeled.values() {
        let t = r.target(3);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn simulated_votes_follow_the_accuracy() {
    let profiles = vec![AnnotatorProfile::with_accuracy("a", 4, 0.7, 0.0).unwrap()];
    let trials = 20_000;
    let hits = (0..trials)
        .filter(|&i| simulate_votes(&profiles, SampleId(i), 2, 99)[0] == vec![2])
        .count();
    let rate = hits as f64 / trials as f64;
    // Binomial standard error is about 0.0032.
    assert!((rate - 0.7).abs() < 0.015, "observed accuracy {rate}");
}

#[test]
fn warm_start_changes_training_but_not_bookkeeping() {
    let (pool, eval) = small_pool(40, 6);
    let warm = ExperimentConfig { budget: 12, iterations: 3, ..quick(6) };
    let cold = ExperimentConfig { warm_start: false, ..warm.clone() };
    let a = run_experiment(&warm, pool.clone(), &eval).unwrap();
    let b = run_experiment(&cold, pool, &eval).unwrap();
    assert_eq!(a.queried[0], b.queried[0]);
    let labeled = |r: &poolal::RunReport| r.records.iter().map(|x| x.labeled).collect::<Vec<_>>();
    assert_eq!(labeled(&a), labeled(&b));
}

#[test]
fn human_labels_drive_the_loop() {
    let (pool, eval, truth) = known_pool(60, 7);
    let cfg = ExperimentConfig {
        annotator_mode: AnnotatorMode::Human,
        budget: 6,
        iterations: 2,
        init_fraction: 0.05,
        ..quick(7)
    };
    let progress = Arc::new(RwLock::new(Progress::default()));
    let mut exp = Experiment::new(cfg, pool, eval).unwrap().with_progress(progress.clone());
    let queue = exp.queue().unwrap().clone();
    let annotator = thread::spawn(move || {
        let mut posted = 0;
        while posted < 9 {
            for q in queue.open_queries() {
                let sub = LabelSubmission {
                    sample_id: q.sample_id,
                    hard: Some(truth[&q.sample_id]),
                    idempotency_key: Some(format!("k{}", q.sample_id.0)),
                    ..LabelSubmission::default()
                };
                queue.post(sub.clone()).unwrap();
                // A retry with the same key is acknowledged, not re-committed.
                assert_eq!(queue.post(sub).unwrap(), poolal::annotate::PostOutcome::Replayed);
                posted += 1;
            }
            thread::sleep(Duration::from_millis(2));
        }
    });
    let report = exp.run().unwrap();
    annotator.join().unwrap();
    assert_eq!(report.records.last().unwrap().labeled, 9);
    assert_eq!(report.label_reads, 0, "human mode never reads the hidden labels");
    let p = progress.read().unwrap();
    assert_eq!(p.phase, RunPhase::Finished);
    assert!(p.terminal);
}

#[test]
fn human_timeout_pauses_and_resume_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("run.snapshot.json");
    let (pool, eval, truth) = known_pool(60, 8);
    let cfg = ExperimentConfig {
        annotator_mode: AnnotatorMode::Human,
        human_timeout_secs: 1,
        budget: 6,
        iterations: 2,
        init_fraction: 0.05,
        ..quick(8)
    };
    let progress = Arc::new(RwLock::new(Progress::default()));
    let mut exp = Experiment::new(cfg, pool, eval.clone())
        .unwrap()
        .with_progress(progress.clone())
        .with_snapshots(&snap);
    let err = exp.run().unwrap_err();
    assert!(matches!(err, Error::Paused { outstanding: 3 }), "{err}");
    assert_eq!(progress.read().unwrap().phase, RunPhase::Paused);
    let waiting: Vec<SampleId> = exp.queue().unwrap().open_queries().iter().map(|q| q.sample_id).collect();
    assert_eq!(waiting.len(), 3);

    let snapshot = Snapshot::load(&snap).unwrap();
    assert_eq!(snapshot.pool.pending().iter().copied().collect::<Vec<_>>(), waiting);
    let mut resumed = Experiment::resume(snapshot, eval).unwrap();
    let queue = resumed.queue().unwrap().clone();
    let annotator = thread::spawn(move || {
        let mut posted = 0;
        while posted < 9 {
            for q in queue.open_queries() {
                let sub = LabelSubmission { sample_id: q.sample_id, hard: Some(truth[&q.sample_id]), ..Default::default() };
                queue.post(sub).unwrap();
                posted += 1;
            }
            thread::sleep(Duration::from_millis(2));
        }
    });
    let report = resumed.run().unwrap();
    annotator.join().unwrap();
    // The first query set is the one that was pending, not a fresh draw.
    let first: BTreeSet<SampleId> = report.queried[0].iter().copied().collect();
    assert_eq!(first, waiting.into_iter().collect());
    assert_eq!(report.records.last().unwrap().labeled, 9);
}

#[test]
fn oracle_run_resumes_from_a_mid_run_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.json");
    let (pool, eval) = small_pool(40, 9);
    let cfg = ExperimentConfig { budget: 12, iterations: 3, ..quick(9) };
    let full = run_experiment(&cfg, pool.clone(), &eval).unwrap();
    let mut exp = Experiment::new(cfg, pool, eval.clone()).unwrap().with_snapshots(&snap);
    exp.run().unwrap();
    let snapshot = Snapshot::load(&snap).unwrap();
    assert_eq!(snapshot.next_round, 4);
    assert_eq!(snapshot.report.to_json(), full.to_json());
}
