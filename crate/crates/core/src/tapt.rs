//! Task-adaptive pretraining at toy scale.
//!
//! A flat feature vector of width `d` is read as a sequence of `F` frames of
//! width `f = d / F`. Each frame is embedded by a linear encoder, a context
//! transform mixes every embedding with the sequence mean, and the result is
//! trained with a contrastive term against quantized clean embeddings plus a
//! masked-token reconstruction term. The trained map replaces the raw
//! features downstream.
//!
//! Quantization is straight-through: gradients reach the context vectors and
//! the codewords, never the argmin.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::sq_dist;
use crate::config::TaptConfig;
use crate::dataio::{fraction_count, read_features, write_features, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{dot, PROB_CLAMP};
use crate::pool::{softmax, ProbVector};
use crate::rng;

/// An ordered list of equally wide, finite frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Vec<f64>>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        let width = frames.first().map_or(0, Vec::len);
        if frames.is_empty() {
            return Err(Error::invalid("frame sequence is empty"));
        }
        if width == 0 || frames.iter().any(|f| f.len() != width) {
            return Err(Error::invalid("frames must share a positive width"));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame value is not finite"));
        }
        Ok(Self { frames })
    }

    /// Splits a flat vector into `count` consecutive frames.
    pub fn from_flat(x: &[f64], count: usize) -> Result<Self> {
        if count == 0 || x.is_empty() || !x.len().is_multiple_of(count) {
            return Err(Error::invalid(format!(
                "cannot split {} values into {count} equal frames",
                x.len()
            )));
        }
        Self::new(x.chunks(x.len() / count).map(<[f64]>::to_vec).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }
}

/// Number of masked frames for a sequence of length `n`.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    fraction_count(ratio, n).max(1).min(n)
}

/// Sorted positions to mask, drawn without replacement.
pub fn mask_indices(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot mask an empty sequence"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let mut rng = rng::rng_for(seed, "mask", n as u64);
    let mut picked = index::sample(&mut rng, n, mask_count(n, ratio)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Replaces `max(1, floor(n * ratio))` random frames with the zero vector,
/// the initial value of the learned mask embedding.
pub fn mask_frames(seq: &FrameSequence, ratio: f64, seed: u64) -> Result<(FrameSequence, Vec<usize>)> {
    let masked = mask_indices(seq.len(), ratio, seed)?;
    let fill = vec![0.0; seq.frame_dim()];
    Ok((apply_mask(seq, &masked, &fill), masked))
}

fn apply_mask(seq: &FrameSequence, masked: &[usize], fill: &[f64]) -> FrameSequence {
    let mut frames = seq.frames.clone();
    for &t in masked {
        frames[t] = fill.to_vec();
    }
    FrameSequence { frames }
}

/// Nearest codeword by Euclidean distance, lowest index on ties.
pub fn quantize<'a>(embedding: &[f64], codebook: &'a [Vec<f64>]) -> (usize, &'a [f64]) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (v, c) in codebook.iter().enumerate() {
        let d = sq_dist(embedding, c);
        if d < best_d {
            best = v;
            best_d = d;
        }
    }
    (best, &codebook[best])
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity and its gradients with respect to both arguments.
fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let s = dot(a, b) / (na * nb);
    let da = a.iter().zip(b).map(|(ai, bi)| bi / (na * nb) - s * ai / (na * na)).collect();
    let db = a.iter().zip(b).map(|(ai, bi)| ai / (na * nb) - s * bi / (nb * nb)).collect();
    (s, da, db)
}

fn check_pairs(zc: &[Vec<f64>], zq: &[Vec<f64>], temperature: f64) -> Result<()> {
    if zc.is_empty() || zc.len() != zq.len() {
        return Err(Error::invalid(format!(
            "need equal, non-zero counts of context and quantized vectors, got {} and {}",
            zc.len(),
            zq.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let h = zc[0].len();
    if zc.iter().chain(zq).any(|v| v.len() != h) {
        return Err(Error::invalid("vectors differ in width"));
    }
    if zc.iter().chain(zq).any(|v| norm(v) == 0.0) {
        return Err(Error::invalid("zero-norm vector has no cosine similarity"));
    }
    Ok(())
}

/// `-log softmax_j(s_ij / κ)[i]` for every position `i`. Each term is ≥ 0.
pub fn contrastive_terms(zc: &[Vec<f64>], zq: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    check_pairs(zc, zq, temperature)?;
    let sims = similarity_matrix(zc, zq);
    Ok(sims.iter().enumerate().map(|(i, row)| position_term(row, i, temperature).0).collect())
}

fn similarity_matrix(zc: &[Vec<f64>], zq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    zc.iter()
        .map(|c| zq.iter().map(|q| dot(c, q) / (norm(c) * norm(q))).collect())
        .collect()
}

// Returns the term and the softmax weights over j.
fn position_term(row: &[f64], i: usize, temperature: f64) -> (f64, Vec<f64>) {
    let shifted: Vec<f64> = row.iter().map(|s| (s - row[i]) / temperature).collect();
    let m = shifted.iter().copied().fold(0.0, f64::max);
    let term = if m == 0.0 {
        let rest: f64 = shifted.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.exp()).sum();
        rest.ln_1p()
    } else {
        m + shifted.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    };
    (term, softmax(&shifted))
}

/// Contrastive loss summed over positions; the positive pair is part of the
/// denominator.
pub fn contrastive_loss(zc: &[Vec<f64>], zq: &[Vec<f64>], temperature: f64) -> Result<f64> {
    Ok(contrastive_terms(zc, zq, temperature)?.iter().sum())
}

/// Loss with gradients with respect to every context and quantized vector.
pub fn contrastive_loss_grad(
    zc: &[Vec<f64>],
    zq: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_pairs(zc, zq, temperature)?;
    let n = zc.len();
    let h = zc[0].len();
    let mut dzc = vec![vec![0.0; h]; n];
    let mut dzq = vec![vec![0.0; h]; n];
    let mut loss = 0.0;
    let cos: Vec<Vec<(f64, Vec<f64>, Vec<f64>)>> =
        zc.iter().map(|c| zq.iter().map(|q| cosine_with_grad(c, q)).collect()).collect();
    for i in 0..n {
        let row: Vec<f64> = cos[i].iter().map(|(s, _, _)| *s).collect();
        let (term, weights) = position_term(&row, i, temperature);
        loss += term;
        for j in 0..n {
            let g = (weights[j] - if i == j { 1.0 } else { 0.0 }) / temperature;
            if g == 0.0 {
                continue;
            }
            let (_, da, db) = &cos[i][j];
            for k in 0..h {
                dzc[i][k] += g * da[k];
                dzq[j][k] += g * db[k];
            }
        }
    }
    Ok((loss, dzc, dzq))
}

/// Mean negative log-probability of the true token at each masked position,
/// with probabilities clamped away from zero.
pub fn reconstruction_loss(true_tokens: &[usize], predicted: &[ProbVector]) -> Result<f64> {
    if true_tokens.is_empty() || true_tokens.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "need one prediction per masked position, got {} tokens and {} predictions",
            true_tokens.len(),
            predicted.len()
        )));
    }
    let mut total = 0.0;
    for (&t, p) in true_tokens.iter().zip(predicted) {
        let pt = p.as_slice().get(t).ok_or_else(|| {
            Error::invalid(format!("token {t} outside a codebook of {}", p.len()))
        })?;
        total -= pt.max(PROB_CLAMP).ln();
    }
    Ok(total / true_tokens.len() as f64)
}

/// Reconstruction loss from raw logits, with the gradient per logit.
pub fn reconstruction_loss_grad(true_tokens: &[usize], logits: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let predicted: Vec<ProbVector> = logits.iter().map(|z| ProbVector::softmax(z)).collect();
    let loss = reconstruction_loss(true_tokens, &predicted)?;
    let nm = true_tokens.len() as f64;
    let grads = predicted
        .into_iter()
        .zip(true_tokens)
        .map(|(p, &t)| {
            let mut g = p.into_inner();
            g[t] -= 1.0;
            g.iter_mut().for_each(|v| *v /= nm);
            g
        })
        .collect();
    Ok((loss, grads))
}

/// The combined pretraining objective.
pub fn tapt_loss(contrastive: f64, reconstruction: f64) -> f64 {
    contrastive + reconstruction
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaptState {
    frames: usize,
    frame_dim: usize,
    embed_dim: usize,
    codebook_size: usize,
    mask_ratio: f64,
    temperature: f64,
    /// Encoder `h×f`, self transform `h×h`, mean transform `h×h`, mask
    /// vector `f`, codebook `V×h`, token predictor `V×h`.
    params: Vec<f64>,
}

struct Offsets {
    encoder: usize,
    ctx_self: usize,
    ctx_mean: usize,
    mask: usize,
    codebook: usize,
    predictor: usize,
    end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub loss_trace: Vec<f64>,
}

// Intermediate values of one sequence.
struct Pass {
    inputs: Vec<Vec<f64>>,
    embedded: Vec<Vec<f64>>,
    mean: Vec<f64>,
    context: Vec<Vec<f64>>,
    tokens: Vec<usize>,
}

impl TaptState {
    /// Encoder, self transform and mean transform all start at the
    /// (rectangular) identity, so a masked position begins at the sequence
    /// mean rather than at zero. The codebook is random until
    /// [`TaptState::init_codebook`] is called.
    pub fn new(frames: usize, frame_dim: usize, cfg: &TaptConfig, seed: u64) -> Result<Self> {
        if frames == 0 || frame_dim == 0 {
            return Err(Error::invalid("frame count and width must be positive"));
        }
        if !(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0) {
            return Err(Error::invalid("mask ratio must be in (0, 1)"));
        }
        if !(cfg.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if cfg.codebook_size == 0 {
            return Err(Error::invalid("codebook must have at least one codeword"));
        }
        let embed_dim = if cfg.embed_dim == 0 { frame_dim } else { cfg.embed_dim };
        let mut state = Self {
            frames,
            frame_dim,
            embed_dim,
            codebook_size: cfg.codebook_size,
            mask_ratio: cfg.mask_ratio,
            temperature: cfg.temperature,
            params: Vec::new(),
        };
        let o = state.offsets();
        state.params = vec![0.0; o.end];
        for i in 0..embed_dim.min(frame_dim) {
            state.params[o.encoder + i * frame_dim + i] = 1.0;
        }
        for i in 0..embed_dim {
            state.params[o.ctx_self + i * embed_dim + i] = 1.0;
            state.params[o.ctx_mean + i * embed_dim + i] = 1.0;
        }
        let mut rng = rng::rng_for(seed, "tapt-init", 0);
        for v in &mut state.params[o.codebook..o.end] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = 0.1 * z;
        }
        Ok(state)
    }

    fn offsets(&self) -> Offsets {
        let (h, f, v) = (self.embed_dim, self.frame_dim, self.codebook_size);
        let encoder = 0;
        let ctx_self = encoder + h * f;
        let ctx_mean = ctx_self + h * h;
        let mask = ctx_mean + h * h;
        let codebook = mask + f;
        let predictor = codebook + v * h;
        Offsets { encoder, ctx_self, ctx_mean, mask, codebook, predictor, end: predictor + v * h }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn mask_ratio(&self) -> f64 {
        self.mask_ratio
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Width of [`TaptState::encode`] output.
    pub fn output_dim(&self) -> usize {
        self.frames * self.embed_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn encoder(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.encoder..o.ctx_self]
    }

    pub fn mask_vector(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.mask..o.codebook]
    }

    pub fn codebook(&self) -> Vec<Vec<f64>> {
        let o = self.offsets();
        self.params[o.codebook..o.predictor].chunks(self.embed_dim).map(<[f64]>::to_vec).collect()
    }

    /// Sets the codewords to embeddings of distinct random frames, falling
    /// back to small random vectors when there are too few frames.
    pub fn init_codebook(&mut self, features: &[&[f64]], seed: u64) -> Result<()> {
        let mut embedded = Vec::new();
        for x in features {
            let seq = self.sequence(x)?;
            embedded.extend(seq.frames.iter().map(|fr| self.embed(fr)));
        }
        let mut rng = rng::rng_for(seed, "tapt-codebook", 0);
        let take = self.codebook_size.min(embedded.len());
        let picked = index::sample(&mut rng, embedded.len(), take);
        let o = self.offsets();
        for (v, i) in picked.iter().enumerate() {
            for (k, e) in embedded[i].iter().enumerate() {
                let jitter: f64 = StandardNormal.sample(&mut rng);
                self.params[o.codebook + v * self.embed_dim + k] = e + 1e-3 * jitter;
            }
        }
        Ok(())
    }

    fn sequence(&self, x: &[f64]) -> Result<FrameSequence> {
        if x.len() != self.frames * self.frame_dim {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.frames * self.frame_dim,
                x.len()
            )));
        }
        FrameSequence::from_flat(x, self.frames)
    }

    fn embed(&self, frame: &[f64]) -> Vec<f64> {
        let o = self.offsets();
        self.params[o.encoder..o.ctx_self].chunks(self.frame_dim).map(|row| dot(row, frame)).collect()
    }

    fn mat_vec(&self, at: usize, v: &[f64]) -> Vec<f64> {
        let h = self.embed_dim;
        self.params[at..at + h * h].chunks(h).map(|row| dot(row, v)).collect()
    }

    fn forward(&self, seq: &FrameSequence, masked: &[usize]) -> Pass {
        let o = self.offsets();
        let h = self.embed_dim;
        let inputs = apply_mask(seq, masked, self.mask_vector()).frames;
        let embedded: Vec<Vec<f64>> = inputs.iter().map(|fr| self.embed(fr)).collect();
        let mut mean = vec![0.0; h];
        for e in &embedded {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v / embedded.len() as f64;
            }
        }
        let mixed = self.mat_vec(o.ctx_mean, &mean);
        let context = embedded
            .iter()
            .map(|e| self.mat_vec(o.ctx_self, e).iter().zip(&mixed).map(|(a, b)| a + b).collect())
            .collect();
        let codebook = self.codebook();
        let tokens = seq.frames.iter().map(|fr| quantize(&self.embed(fr), &codebook).0).collect();
        Pass { inputs, embedded, mean, context, tokens }
    }

    fn predictor_logits(&self, z: &[f64]) -> Vec<f64> {
        let o = self.offsets();
        self.params[o.predictor..o.end].chunks(self.embed_dim).map(|row| dot(row, z)).collect()
    }

    /// Pretraining loss of one flat feature vector under a fixed mask. The
    /// contrastive term is skipped when a vector has zero norm.
    pub fn sequence_loss(&self, x: &[f64], masked: &[usize]) -> Result<f64> {
        Ok(self.sequence_loss_grad(x, masked)?.0)
    }

    /// Loss and its gradient with respect to [`TaptState::params`].
    pub fn sequence_loss_grad(&self, x: &[f64], masked: &[usize]) -> Result<(f64, Vec<f64>)> {
        let seq = self.sequence(x)?;
        if masked.is_empty() || masked.iter().any(|&t| t >= seq.len()) {
            return Err(Error::invalid("mask positions must be non-empty and in range"));
        }
        let o = self.offsets();
        let (h, f, n) = (self.embed_dim, self.frame_dim, seq.len());
        let pass = self.forward(&seq, masked);
        let codebook = self.codebook();
        let zq: Vec<Vec<f64>> = pass.tokens.iter().map(|&t| codebook[t].clone()).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut dz = vec![vec![0.0; h]; n];

        let mut loss = 0.0;
        if pass.context.iter().chain(&zq).all(|v| norm(v) > 0.0) {
            let (l, dzc, dzq) = contrastive_loss_grad(&pass.context, &zq, self.temperature)?;
            loss += l;
            dz = dzc;
            for (t, g) in pass.tokens.iter().zip(dzq) {
                for k in 0..h {
                    grad[o.codebook + t * h + k] += g[k];
                }
            }
        }

        let logits: Vec<Vec<f64>> = masked.iter().map(|&t| self.predictor_logits(&pass.context[t])).collect();
        let targets: Vec<usize> = masked.iter().map(|&t| pass.tokens[t]).collect();
        let (l, dlogits) = reconstruction_loss_grad(&targets, &logits)?;
        loss = tapt_loss(loss, l);
        for (&t, g) in masked.iter().zip(&dlogits) {
            for (v, gv) in g.iter().enumerate() {
                let row = o.predictor + v * h;
                for k in 0..h {
                    grad[row + k] += gv * pass.context[t][k];
                    dz[t][k] += gv * self.params[row + k];
                }
            }
        }

        // z_t = S e_t + M mean
        let mut de = vec![vec![0.0; h]; n];
        let mut dmean = vec![0.0; h];
        for t in 0..n {
            for r in 0..h {
                let g = dz[t][r];
                if g == 0.0 {
                    continue;
                }
                for k in 0..h {
                    grad[o.ctx_self + r * h + k] += g * pass.embedded[t][k];
                    grad[o.ctx_mean + r * h + k] += g * pass.mean[k];
                    de[t][k] += g * self.params[o.ctx_self + r * h + k];
                    dmean[k] += g * self.params[o.ctx_mean + r * h + k];
                }
            }
        }
        for (t, de_t) in de.iter_mut().enumerate() {
            for k in 0..h {
                de_t[k] += dmean[k] / n as f64;
            }
            // e_t = E x_t, with masked inputs taken from the mask vector.
            for r in 0..h {
                for k in 0..f {
                    grad[o.encoder + r * f + k] += de_t[r] * pass.inputs[t][k];
                }
            }
            if masked.contains(&t) {
                for k in 0..f {
                    grad[o.mask + k] += (0..h).map(|r| de_t[r] * self.params[o.encoder + r * f + k]).sum::<f64>();
                }
            }
        }
        Ok((loss, grad))
    }

    /// Downstream features: the concatenated context vectors of the
    /// unmasked sequence.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let seq = self.sequence(x)?;
        Ok(self.forward(&seq, &[]).context.concat())
    }

    pub fn save(&self, prefix: &Path) -> Result<PathBuf> {
        let params_path = prefix.with_extension("params");
        let header = TaptHeader {
            frames: self.frames,
            frame_dim: self.frame_dim,
            embed_dim: self.embed_dim,
            codebook_size: self.codebook_size,
            mask_ratio: self.mask_ratio,
            temperature: self.temperature,
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
        let header: TaptHeader =
            toml::from_str(&text).map_err(|e| Error::format(header_path, e.message().to_string()))?;
        let base = header_path.parent().unwrap_or(Path::new("."));
        let m = read_features(&base.join(&header.params_path))?;
        let cfg = TaptConfig {
            embed_dim: header.embed_dim,
            codebook_size: header.codebook_size,
            mask_ratio: header.mask_ratio,
            temperature: header.temperature,
            ..TaptConfig::default()
        };
        let mut state = Self::new(header.frames, header.frame_dim, &cfg, 0)
            .map_err(|e| Error::format(header_path, e.to_string()))?;
        if m.as_slice().len() != header.param_count || header.param_count != state.params.len() {
            return Err(Error::format(header_path, "parameter count does not match the shape"));
        }
        state.params = m.as_slice().iter().map(|&v| f64::from(v)).collect();
        Ok(state)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TaptHeader {
    frames: usize,
    frame_dim: usize,
    embed_dim: usize,
    codebook_size: usize,
    mask_ratio: f64,
    temperature: f64,
    param_count: usize,
    params_path: PathBuf,
}

/// Full-batch gradient descent on the pretraining objective. Each sample
/// keeps one mask for the whole run. Takes features only; labels never
/// reach this stage.
pub fn pretrain(features: &[&[f64]], cfg: &TaptConfig, seed: u64) -> Result<(TaptState, PretrainReport)> {
    let first = features.first().ok_or_else(|| Error::invalid("cannot pretrain on an empty pool"))?;
    let d = first.len();
    if cfg.frames == 0 || !d.is_multiple_of(cfg.frames) {
        return Err(Error::invalid(format!(
            "feature width {d} is not divisible into {} frames",
            cfg.frames
        )));
    }
    let mut state = TaptState::new(cfg.frames, d / cfg.frames, cfg, seed)?;
    state.init_codebook(features, seed)?;
    let masks: Vec<Vec<usize>> = (0..features.len())
        .map(|i| mask_indices(cfg.frames, cfg.mask_ratio, rng::derive_seed(seed, "tapt-mask", i as u64)))
        .collect::<Result<_>>()?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / features.len() as f64;
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut grad = vec![0.0; state.params.len()];
        for (x, m) in features.iter().zip(&masks) {
            let (l, g) = state.sequence_loss_grad(x, m)?;
            loss += l * scale;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b * scale;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        trace.push(loss);
        for (p, g) in state.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
    }
    Ok((state, PretrainReport { epochs_run: cfg.epochs, loss_trace: trace }))
}
