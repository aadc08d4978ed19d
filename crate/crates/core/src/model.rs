//! The probabilistic classifier retrained every round.
//!
//! Two architectures share one flat parameter vector: a linear softmax
//! model (convex loss) and a one-hidden-layer ReLU network with dropout on
//! the hidden units. Dropout masks double as posterior samples for
//! MC-dropout prediction.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::Architecture;
use crate::dataio::{read_features, write_features, FeatureMatrix};
use crate::error::{Error, Result};
use crate::pool::{softmax, LabelKind, LabelRecord, ProbVector};
use crate::rng;

/// Floor applied to probabilities inside logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    architecture: Architecture,
    feature_dim: usize,
    class_count: usize,
    hidden_width: usize,
    dropout_rate: f64,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Loss of the final parameters with dropout disabled.
    pub final_loss: f64,
    /// Per-sample gradient evaluations: epochs times training-set size.
    pub gradient_steps: u64,
    /// Training loss at the start of every epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

/// Offsets of the parameter blocks inside the flat vector.
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    len: usize,
}

impl ClassifierState {
    pub fn new(
        architecture: Architecture,
        feature_dim: usize,
        class_count: usize,
        hidden_width: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if feature_dim == 0 || class_count == 0 {
            return Err(Error::invalid("classifier needs positive dimensions"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        let hidden_width = match architecture {
            Architecture::Linear => 0,
            Architecture::OneHidden if hidden_width == 0 => {
                return Err(Error::invalid("hidden width must be positive"))
            }
            Architecture::OneHidden => hidden_width,
        };
        let mut state = Self {
            architecture,
            feature_dim,
            class_count,
            hidden_width,
            dropout_rate,
            params: Vec::new(),
        };
        let layout = state.layout();
        state.params = vec![0.0; layout.len];
        if architecture == Architecture::OneHidden {
            let mut rng = rng::rng_for(seed, "classifier-init", 0);
            let a1 = (6.0 / (feature_dim + hidden_width) as f64).sqrt();
            let a2 = (6.0 / (hidden_width + class_count) as f64).sqrt();
            for v in &mut state.params[layout.w1..layout.b1] {
                *v = rng.random_range(-a1..a1);
            }
            for v in &mut state.params[layout.w2..layout.b2] {
                *v = rng.random_range(-a2..a2);
            }
        }
        Ok(state)
    }

    pub fn linear(feature_dim: usize, class_count: usize) -> Result<Self> {
        Self::new(Architecture::Linear, feature_dim, class_count, 0, 0.0, 0)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        let (d, h, c) = (self.feature_dim, self.hidden_width, self.class_count);
        match self.architecture {
            // The linear model reuses the output block only.
            Architecture::Linear => Layout {
                w1: 0,
                b1: 0,
                w2: 0,
                b2: c * d,
                len: c * d + c,
            },
            Architecture::OneHidden => Layout {
                w1: 0,
                b1: h * d,
                w2: h * d + h,
                b2: h * d + h + c * h,
                len: h * d + h + c * h + c,
            },
        }
    }

    /// Sets the output bias; handy for constructing known states.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.class_count {
            return Err(Error::invalid("bias length differs from class count"));
        }
        let l = self.layout();
        self.params[l.b2..l.len].copy_from_slice(bias);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.feature_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input feature"));
        }
        Ok(())
    }

    /// Hidden activations (post-ReLU, post-mask) and output logits.
    fn forward(&self, x: &[f64], mask: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let (d, c) = (self.feature_dim, self.class_count);
        let (input, width) = match self.architecture {
            Architecture::Linear => (x.to_vec(), d),
            Architecture::OneHidden => {
                let h = self.hidden_width;
                let mut a = vec![0.0; h];
                for (k, a_k) in a.iter_mut().enumerate() {
                    let row = &p[l.w1 + k * d..l.w1 + (k + 1) * d];
                    let z = p[l.b1 + k] + dot(row, x);
                    *a_k = z.max(0.0) * mask.map_or(1.0, |m| m[k]);
                }
                (a, h)
            }
        };
        let logits = (0..c)
            .map(|j| p[l.b2 + j] + dot(&p[l.w2 + j * width..l.w2 + (j + 1) * width], &input))
            .collect();
        (input, logits)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x, None).1)
    }

    /// Class probabilities with dropout disabled.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(ProbVector::softmax(&self.logits(x)?))
    }

    fn dropout_mask(&self, rng: &mut rng::Rng) -> Option<Vec<f64>> {
        if self.architecture != Architecture::OneHidden || self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout_rate;
        Some(
            (0..self.hidden_width)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    }

    /// `samples` stochastic forward passes, each with its own dropout mask.
    pub fn mc_dropout_predict(&self, x: &[f64], samples: usize, seed: u64) -> Result<Vec<ProbVector>> {
        Ok(self
            .mc_dropout_predict_batch(&[x], samples, seed)?
            .pop()
            .expect("one input"))
    }

    /// MC-dropout over a batch. Mask `t` is shared by every input, so column
    /// `t` of the result is one consistent draw of the network weights.
    /// Returns one list of `samples` vectors per input.
    pub fn mc_dropout_predict_batch(
        &self,
        xs: &[&[f64]],
        samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<ProbVector>>> {
        if samples == 0 {
            return Err(Error::invalid("MC-dropout needs at least one sample"));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let masks: Vec<Option<Vec<f64>>> = (0..samples)
            .map(|t| self.dropout_mask(&mut rng::rng_for(seed, "mc-dropout", t as u64)))
            .collect();
        Ok(xs
            .iter()
            .map(|x| {
                masks
                    .iter()
                    .map(|m| ProbVector::softmax(&self.forward(x, m.as_deref()).1))
                    .collect()
            })
            .collect())
    }

    /// Mean cross-entropy over `inputs` and its gradient with respect to
    /// every parameter. `masks`, when given, holds one dropout mask per input.
    pub fn loss_and_grad(
        &self,
        inputs: &[&[f64]],
        targets: &[Vec<f64>],
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let (d, c, h) = (self.feature_dim, self.class_count, self.hidden_width);
        let n = inputs.len().max(1) as f64;
        let mut grad = vec![0.0; l.len];
        let mut loss = 0.0;
        for (i, (x, y)) in inputs.iter().zip(targets).enumerate() {
            let mask = masks.map(|m| m[i].as_slice());
            let (act, logits) = self.forward(x, mask);
            let probs = softmax(&logits);
            loss -= y
                .iter()
                .zip(&probs)
                .filter(|(t, _)| **t > 0.0)
                .map(|(t, q)| t * q.max(PROB_CLAMP).ln())
                .sum::<f64>();
            let width = act.len();
            let mut d_act = vec![0.0; width];
            for j in 0..c {
                let dz = (probs[j] - y[j]) / n;
                grad[l.b2 + j] += dz;
                let row = l.w2 + j * width;
                for k in 0..width {
                    grad[row + k] += dz * act[k];
                    d_act[k] += dz * p[row + k];
                }
            }
            if self.architecture == Architecture::OneHidden {
                for k in 0..h {
                    if act[k] <= 0.0 {
                        continue;
                    }
                    let dz = d_act[k] * mask.map_or(1.0, |m| m[k]);
                    grad[l.b1 + k] += dz;
                    let row = l.w1 + k * d;
                    for (g, xv) in grad[row..row + d].iter_mut().zip(x.iter()) {
                        *g += dz * xv;
                    }
                }
            }
        }
        (loss / n, grad)
    }

    /// Full-batch gradient descent on the mean cross-entropy, continuing
    /// from the current parameters. Stops early once the training loss has
    /// not improved for `patience` epochs. On divergence the parameters are
    /// restored and an error is returned.
    pub fn train(&mut self, inputs: &[&[f64]], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport> {
        if inputs.is_empty() {
            return Err(Error::invalid("training needs at least one labeled sample"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::invalid("inputs and targets differ in length"));
        }
        for (x, y) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            if y.len() != self.class_count {
                return Err(Error::invalid("target length differs from class count"));
            }
        }
        let backup = self.params.clone();
        let mut trace = Vec::new();
        let mut best = f64::INFINITY;
        let mut stale = 0;
        let mut epochs_run = 0;
        for epoch in 0..cfg.epochs {
            let mut mask_rng = rng::rng_for(cfg.seed, "train-dropout", epoch as u64);
            let masks: Option<Vec<Vec<f64>>> = inputs
                .iter()
                .map(|_| self.dropout_mask(&mut mask_rng))
                .collect();
            let (loss, grad) = self.loss_and_grad(inputs, targets, masks.as_deref());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                self.params = backup;
                return Err(Error::Diverged { epoch, loss });
            }
            trace.push(loss);
            for (w, g) in self.params.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            epochs_run += 1;
            if loss < best - 1e-9 {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        let (final_loss, _) = self.loss_and_grad(inputs, targets, None);
        if !final_loss.is_finite() {
            self.params = backup;
            return Err(Error::Diverged {
                epoch: epochs_run,
                loss: final_loss,
            });
        }
        Ok(TrainReport {
            epochs_run,
            final_loss,
            gradient_steps: (epochs_run * inputs.len()) as u64,
            loss_trace: trace,
        })
    }

    /// Writes `<prefix>.toml` (header) and `<prefix>.params` (parameters as
    /// a one-row feature matrix). Parameters are stored as 32-bit floats.
    pub fn save(&self, prefix: &Path) -> Result<PathBuf> {
        let params_path = prefix.with_extension("params");
        let header = CheckpointHeader {
            architecture: self.architecture,
            feature_dim: self.feature_dim,
            class_count: self.class_count,
            hidden_width: self.hidden_width,
            dropout_rate: self.dropout_rate,
            param_count: self.params.len(),
            params_path: PathBuf::from(params_path.file_name().expect("prefix has a file name")),
        };
        let m = FeatureMatrix::new(1, self.params.len(), self.params.iter().map(|&v| v as f32).collect())?;
        write_features(&params_path, &m)?;
        let path = prefix.with_extension("toml");
        fs::write(&path, toml::to_string(&header).map_err(|e| Error::format(&path, e.to_string()))?)?;
        Ok(path)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(header_path)?;
        let header: CheckpointHeader =
            toml::from_str(&text).map_err(|e| Error::format(header_path, e.message().to_string()))?;
        let base = header_path.parent().unwrap_or(Path::new("."));
        let m = read_features(&base.join(&header.params_path))?;
        let mut state = Self::new(
            header.architecture,
            header.feature_dim,
            header.class_count,
            header.hidden_width,
            header.dropout_rate,
            0,
        )?;
        if m.as_slice().len() != header.param_count || header.param_count != state.params.len() {
            return Err(Error::format(header_path, "parameter count does not match the architecture"));
        }
        state.params = m.as_slice().iter().map(|&v| f64::from(v)).collect();
        Ok(state)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    architecture: Architecture,
    feature_dim: usize,
    class_count: usize,
    hidden_width: usize,
    dropout_rate: f64,
    param_count: usize,
    params_path: PathBuf,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cross-entropy `-(1/k) Σ_i Σ_j y_ij ln ŷ_ij` (natural log). Labels
/// must be all hard or all soft. Probabilities are clamped at
/// [`PROB_CLAMP`] so the result is always finite.
pub fn ce_loss(predictions: &[ProbVector], labels: &[LabelRecord]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    let soft = labels[0].is_soft();
    if labels.iter().any(|l| l.is_soft() != soft) {
        return Err(Error::invalid("labels mix hard and soft targets"));
    }
    let mut total = 0.0;
    for (p, label) in predictions.iter().zip(labels) {
        let c = p.len();
        if let LabelKind::Soft(s) = &label.kind {
            if s.len() != c {
                return Err(Error::invalid("soft label length differs from prediction"));
            }
        }
        if label.hard_class() >= c {
            return Err(Error::invalid("hard label out of range"));
        }
        let target = label.target(c);
        total -= target
            .iter()
            .zip(p.as_slice())
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, q)| t * q.max(PROB_CLAMP).ln())
            .sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::SampleId;

    #[test]
    fn zero_state_is_uniform() {
        let s = ClassifierState::linear(3, 4).unwrap();
        let p = s.predict_proba(&[1.0, -2.0, 5.0]).unwrap();
        for v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_only_state_is_softmax_of_bias() {
        let mut s = ClassifierState::linear(2, 4).unwrap();
        s.set_output_bias(&[10.0, 0.0, 0.0, 0.0]).unwrap();
        let p = s.predict_proba(&[0.3, 0.7]).unwrap();
        let denom = 10f64.exp() + 3.0;
        assert!((p.as_slice()[0] - 10f64.exp() / denom).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1.0 / denom).abs() < 1e-15);
        assert_eq!(p.argmax(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = ClassifierState::linear(2, 2).unwrap();
        assert!(s.predict_proba(&[f64::NAN, 0.0]).is_err());
        assert!(s.predict_proba(&[0.0]).is_err());
        assert!(s.mc_dropout_predict(&[0.0, 0.0], 0, 1).is_err());
    }

    #[test]
    fn ce_loss_reference_values() {
        let hard: Vec<_> = (0..4).map(|c| LabelRecord::hard(SampleId(c), c as usize)).collect();
        let uniform = vec![ProbVector::uniform(4); 4];
        assert!((ce_loss(&uniform, &hard).unwrap() - 4f64.ln()).abs() < 1e-12);

        let perfect: Vec<_> = (0..4).map(|c| ProbVector::one_hot(4, c)).collect();
        assert_eq!(ce_loss(&perfect, &hard).unwrap(), 0.0);

        let wrong = vec![ProbVector::one_hot(4, 1)];
        let l = ce_loss(&wrong, &hard[..1]).unwrap();
        assert!(l.is_finite());
        assert!((l + PROB_CLAMP.ln()).abs() < 1e-9);

        let target = ProbVector::new(vec![0.0, 0.0, 0.25, 0.75]).unwrap();
        let soft = LabelRecord {
            kind: LabelKind::Soft(target.clone()),
            votes: Some(vec![vec![3], vec![3], vec![3, 2]]),
            ..LabelRecord::hard(SampleId(0), 0)
        };
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((ce_loss(&[target], &[soft]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn ce_loss_rejects_mixed_labels() {
        let soft = LabelRecord {
            kind: LabelKind::Soft(ProbVector::uniform(2)),
            votes: Some(vec![vec![0], vec![1]]),
            ..LabelRecord::hard(SampleId(1), 0)
        };
        let preds = vec![ProbVector::uniform(2); 2];
        assert!(ce_loss(&preds, &[LabelRecord::hard(SampleId(0), 0), soft]).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut s = ClassifierState::new(Architecture::OneHidden, 3, 2, 5, 0.3, 1).unwrap();
        let before = s.clone();
        let x = [1.0, 2.0, 3.0];
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let r = s.train(&[&x], &[vec![1.0, 0.0]], &cfg).unwrap();
        assert_eq!(s, before);
        assert_eq!(r.epochs_run, 0);
        assert_eq!(r.gradient_steps, 0);
    }

    #[test]
    fn no_dropout_means_identical_mc_samples() {
        let s = ClassifierState::new(Architecture::OneHidden, 2, 3, 8, 0.0, 4).unwrap();
        let out = s.mc_dropout_predict(&[0.5, -1.0], 5, 7).unwrap();
        assert!(out.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn mc_dropout_is_seeded() {
        let s = ClassifierState::new(Architecture::OneHidden, 2, 3, 8, 0.5, 4).unwrap();
        let a = s.mc_dropout_predict(&[0.5, -1.0], 10, 7).unwrap();
        let b = s.mc_dropout_predict(&[0.5, -1.0], 10, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn divergence_restores_parameters() {
        let mut s = ClassifierState::linear(1, 2).unwrap();
        let before = s.clone();
        let x = [1e300];
        let cfg = TrainConfig {
            learning_rate: 1e10,
            epochs: 50,
            ..Default::default()
        };
        let err = s.train(&[&x], &[vec![1.0, 0.0]], &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert_eq!(s, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ClassifierState::new(Architecture::OneHidden, 3, 2, 4, 0.2, 9).unwrap();
        let header = s.save(&dir.path().join("model")).unwrap();
        let back = ClassifierState::load(&header).unwrap();
        assert_eq!(back.architecture(), s.architecture());
        for (a, b) in back.params().iter().zip(s.params()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }
}
