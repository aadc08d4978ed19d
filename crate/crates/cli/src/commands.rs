use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::thread;

use anyhow::{bail, Context};
use poolal::dataio::{generate_synthetic, load_dataset, SyntheticSpec};
use poolal::experiment::{EvalSet, Experiment, Progress, ProgressHandle, Snapshot};
use poolal::tapt::TaptState;
use poolal::{evaluate, AnnotatorMode, ClassifierState, Evaluation, Pool, RunReport};
use tokio::net::TcpListener;

use crate::service::{router, ServiceState};
use crate::settings::RunSettings;

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const MODEL_PREFIX: &str = "model";
pub const TAPT_PREFIX: &str = "tapt";

/// Files a finished run leaves in its output directory.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub report: RunReport,
    pub tsv: PathBuf,
    pub json: PathBuf,
    pub model: PathBuf,
    pub tapt: Option<PathBuf>,
}

struct Prepared {
    pool: Pool,
    eval: EvalSet,
    class_names: Vec<String>,
}

fn prepare(settings: &RunSettings) -> anyhow::Result<Prepared> {
    let ds = load_dataset(&settings.dataset).with_context(|| format!("loading {}", settings.dataset.display()))?;
    let class_names = ds.manifest.class_names.clone();
    let (pool, eval) = match &settings.eval_dataset {
        Some(path) => {
            let eval = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
            (ds, eval)
        }
        None => ds.split(settings.eval_fraction, settings.experiment.seed)?,
    };
    Ok(Prepared { pool: pool.to_pool()?, eval: EvalSet::from_dataset(&eval)?, class_names })
}

fn finish(settings: &RunSettings, exp: &Experiment, report: RunReport) -> anyhow::Result<RunOutputs> {
    let dir = &settings.output_dir;
    let (tsv, json) = report.write(dir)?;
    let model = exp.model().context("run finished without a trained model")?.save(&dir.join(MODEL_PREFIX))?;
    let tapt = exp.tapt().map(|t| t.save(&dir.join(TAPT_PREFIX))).transpose()?;
    Ok(RunOutputs { report, tsv, json, model, tapt })
}

/// Runs an experiment with simulated or oracle labels and writes its report
/// and checkpoints.
pub fn run(config: &Path) -> anyhow::Result<RunOutputs> {
    let settings = RunSettings::load(config)?;
    if settings.experiment.annotator_mode == AnnotatorMode::Human {
        bail!("annotator_mode = \"human\" needs the annotation service; use `serve`");
    }
    let p = prepare(&settings)?;
    fs::create_dir_all(&settings.output_dir)?;
    let mut exp = Experiment::new(settings.experiment.clone(), p.pool, p.eval)?
        .with_snapshots(settings.output_dir.join(SNAPSHOT_FILE));
    let report = exp.run()?;
    finish(&settings, &exp, report)
}

/// Writes a synthetic dataset described by a TOML spec into `out`, returning
/// the manifest path.
pub fn generate(spec: &Path, out: &Path) -> anyhow::Result<PathBuf> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| poolal::Error::Config {
        key: poolal::config::toml_error_key(&text, &e),
        reason: e.message().to_string(),
    })?;
    Ok(generate_synthetic(&spec)?.write(out)?)
}

/// UA/WA of a saved classifier on a dataset. With a pretraining checkpoint
/// the features are encoded first.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path, tapt: Option<&Path>) -> anyhow::Result<Evaluation> {
    let model = ClassifierState::load(checkpoint)?;
    let mut eval = EvalSet::from_dataset(&load_dataset(dataset)?)?;
    if let Some(path) = tapt {
        let state = TaptState::load(path)?;
        eval.features = eval.features.iter().map(|x| state.encode(x)).collect::<poolal::Result<_>>()?;
    }
    Ok(evaluate(&model, &eval)?)
}

pub struct ServeOptions {
    /// Continue from the snapshot in the output directory, if present.
    pub resume: bool,
    /// Shut the server down once the run ends instead of waiting for Ctrl-C.
    pub exit_on_finish: bool,
}

/// Starts a human-annotation run and serves the annotation API on
/// `listener` until the run ends (or Ctrl-C, unless `exit_on_finish`).
pub async fn serve_on(settings: RunSettings, listener: TcpListener, opts: ServeOptions) -> anyhow::Result<RunOutputs> {
    let mut settings = settings;
    settings.experiment.annotator_mode = AnnotatorMode::Human;
    let p = prepare(&settings)?;
    fs::create_dir_all(&settings.output_dir)?;
    let snapshot_path = settings.output_dir.join(SNAPSHOT_FILE);
    let exp = if opts.resume && snapshot_path.exists() {
        Experiment::resume(Snapshot::load(&snapshot_path)?, p.eval)?
    } else {
        Experiment::new(settings.experiment.clone(), p.pool, p.eval)?
    };
    let progress: ProgressHandle = Arc::new(RwLock::new(Progress::default()));
    let mut exp = exp.with_progress(progress.clone()).with_snapshots(&snapshot_path);
    let queue = exp.queue().context("human mode creates a label queue")?.clone();
    let state = ServiceState {
        queue,
        progress,
        class_names: Arc::new(p.class_names),
        secret: settings.annotation_secret.as_deref().map(Arc::from),
    };

    let (done_tx, done_rx) = tokio::sync::oneshot::channel();
    let worker = thread::spawn(move || {
        let result = exp.run().map_err(anyhow::Error::from).and_then(|report| finish(&settings, &exp, report));
        let _ = done_tx.send(());
        result
    });
    let exit_on_finish = opts.exit_on_finish;
    let shutdown = async move {
        if exit_on_finish {
            let _ = done_rx.await;
        } else {
            let _ = tokio::signal::ctrl_c().await;
        }
    };
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    match worker.join() {
        Ok(result) => result,
        Err(_) => bail!("labeling loop panicked"),
    }
}

pub async fn serve(config: &Path, opts: ServeOptions) -> anyhow::Result<RunOutputs> {
    let settings = RunSettings::load(config)?;
    let addr = settings.bind_address();
    let listener = TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("annotation service listening on http://{}", listener.local_addr()?);
    serve_on(settings, listener, opts).await
}
