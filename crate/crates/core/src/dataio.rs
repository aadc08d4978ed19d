//! Dataset files and the synthetic pool generator.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! b"AFTR" | rows: u32 | cols: u32 | rows * cols f32, row-major
//! ```
//!
//! Label files are a bare sequence of `u16` class indices, one per sample.
//! A dataset is described by a TOML manifest whose payload paths are
//! resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Pool, Sample, SampleId};
use crate::rng;

pub const FEATURE_MAGIC: [u8; 4] = *b"AFTR";
const HEADER_LEN: usize = 12;

/// Row-major matrix of 32-bit features, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Record {
                index: pos.checked_div(cols).unwrap_or(0),
                reason: "non-finite feature value".into(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Record {
                    index: i,
                    reason: format!("expected {cols} columns, found {}", r.len()),
                });
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(path, "truncated header"));
        }
        if bytes[..4] != FEATURE_MAGIC {
            return Err(Error::format(path, "bad magic, expected AFTR"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
        if body.len() != expected {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, header implies {expected}", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, cols, data)
    }
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    fs::write(path, m.to_bytes())?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(&fs::read(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u16>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 2 != 0 {
        return Err(Error::format(path, "odd byte count in label file"));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub sample_count: usize,
    pub features_path: PathBuf,
    pub labels_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_refs: Option<Vec<String>>,
    /// Source corpus of every sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<String>>,
}

/// A manifest together with its payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub features: FeatureMatrix,
    pub labels: Vec<u16>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if self.features.rows() != m.sample_count {
            return Err(Error::invalid(format!(
                "manifest declares {} samples, feature file has {} rows",
                m.sample_count,
                self.features.rows()
            )));
        }
        if self.labels.len() != m.sample_count {
            return Err(Error::invalid(format!(
                "manifest declares {} samples, label file has {} entries",
                m.sample_count,
                self.labels.len()
            )));
        }
        if self.features.cols() != m.feature_dim {
            return Err(Error::invalid(format!(
                "manifest declares dimension {}, feature file has {}",
                m.feature_dim,
                self.features.cols()
            )));
        }
        if m.class_names.len() != m.class_count {
            return Err(Error::invalid("class_names length differs from class_count"));
        }
        if let Some(index) = self.labels.iter().position(|&l| usize::from(l) >= m.class_count) {
            return Err(Error::Record {
                index,
                reason: format!("label {} out of range for {} classes", self.labels[index], m.class_count),
            });
        }
        for (key, list) in [("audio_refs", &m.audio_refs), ("sources", &m.sources)] {
            if list.as_ref().is_some_and(|l| l.len() != m.sample_count) {
                return Err(Error::invalid(format!("{key} length differs from sample_count")));
            }
        }
        Ok(())
    }

    /// Feature rows widened to `f64`.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.features.rows()).map(|i| self.features.row_f64(i)).collect()
    }

    /// Builds a pool with every sample unlabeled and ground truth masked.
    /// Sample ids are row indices.
    pub fn to_pool(&self) -> Result<Pool> {
        let samples = (0..self.len())
            .map(|i| {
                let mut s = Sample::new(SampleId(i as u64), self.features.row_f64(i))?
                    .with_label(usize::from(self.labels[i]));
                if let Some(refs) = &self.manifest.audio_refs {
                    s = s.with_audio_ref(refs[i].clone());
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Pool::new(samples, self.manifest.class_count)
    }

    /// Writes manifest and payload into `dir`, returning the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest.clone();
        manifest.features_path = PathBuf::from(format!("{}.features", manifest.name));
        manifest.labels_path = PathBuf::from(format!("{}.labels", manifest.name));
        write_features(&dir.join(&manifest.features_path), &self.features)?;
        write_labels(&dir.join(&manifest.labels_path), &self.labels)?;
        let path = dir.join(format!("{}.toml", manifest.name));
        let text = toml::to_string(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize], name: &str) -> Result<Dataset> {
        let cols = self.features.cols();
        let data = rows.iter().flat_map(|&i| self.features.row(i).iter().copied()).collect();
        let pick = |list: &Option<Vec<String>>| {
            list.as_ref().map(|l| rows.iter().map(|&i| l[i].clone()).collect())
        };
        let manifest = DatasetManifest {
            name: name.to_string(),
            sample_count: rows.len(),
            audio_refs: pick(&self.manifest.audio_refs),
            sources: pick(&self.manifest.sources),
            ..self.manifest.clone()
        };
        Ok(Dataset {
            manifest,
            features: FeatureMatrix::new(rows.len(), cols, data)?,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Random split into `(pool, eval)` with `floor(eval_fraction * N)`
    /// evaluation rows.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::invalid("eval_fraction must be in [0, 1)"));
        }
        let n_eval = fraction_count(eval_fraction, self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::rng_for(seed, "split", 0));
        let (eval, pool) = order.split_at(n_eval);
        let mut pool = pool.to_vec();
        let mut eval = eval.to_vec();
        pool.sort_unstable();
        eval.sort_unstable();
        let name = &self.manifest.name;
        Ok((
            self.select(&pool, &format!("{name}-pool"))?,
            self.select(&eval, &format!("{name}-eval"))?,
        ))
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::format(manifest_path, e.message().to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let features = read_features(&base.join(&manifest.features_path))?;
    let labels = read_labels(&base.join(&manifest.labels_path))?;
    let ds = Dataset {
        manifest,
        features,
        labels,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_pool(manifest_path: &Path) -> Result<Pool> {
    load_dataset(manifest_path)?.to_pool()
}

/// `floor(fraction * n)`, robust to representation error in `fraction`.
pub(crate) fn fraction_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Parameters of the Gaussian-mixture pool generator.
///
/// Each class has a mean vector; each simulated source corpus adds its own
/// offset to every sample it contributes. Noise comes in two kinds: label
/// flips (outliers) and exact feature copies of earlier rows (redundant
/// samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub class_count: usize,
    pub feature_dim: usize,
    pub samples_per_class: Vec<usize>,
    /// Standard deviation of randomly drawn class means.
    pub mean_spread: f64,
    /// Explicit class means; overrides `mean_spread` when present.
    pub means: Option<Vec<Vec<f64>>>,
    /// Per-class noise standard deviation (`1.0` when empty).
    pub class_scales: Vec<f64>,
    pub outlier_fraction: f64,
    pub duplicate_fraction: f64,
    pub source_count: usize,
    /// Standard deviation of the per-source mean shift.
    pub source_shift: f64,
    /// When greater than one, a class mean is a short pattern repeated
    /// `frames` times, so the class signal is shared across frames while
    /// the noise is independent per frame.
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            class_count: 4,
            feature_dim: 16,
            samples_per_class: vec![250; 4],
            mean_spread: 1.0,
            means: None,
            class_scales: Vec::new(),
            outlier_fraction: 0.0,
            duplicate_fraction: 0.0,
            source_count: 1,
            source_shift: 0.0,
            frames: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn sample_count(&self) -> usize {
        self.samples_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.samples_per_class.len() != self.class_count {
            return bad("samples_per_class needs one entry per class");
        }
        if self.sample_count() == 0 {
            return bad("no samples requested");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) || !(0.0..1.0).contains(&self.duplicate_fraction) {
            return bad("fractions must be in [0, 1)");
        }
        if self.source_count == 0 {
            return bad("source_count must be at least 1");
        }
        if self.frames == 0 || !self.feature_dim.is_multiple_of(self.frames) {
            return bad("frames must divide feature_dim");
        }
        if !self.class_scales.is_empty() && self.class_scales.len() != self.class_count {
            return bad("class_scales needs one entry per class");
        }
        if let Some(means) = &self.means {
            if means.len() != self.class_count || means.iter().any(|m| m.len() != self.feature_dim) {
                return bad("means must be class_count vectors of feature_dim entries");
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let d = spec.feature_dim;
    let c = spec.class_count;
    let n = spec.sample_count();

    let means: Vec<Vec<f64>> = match &spec.means {
        Some(m) => m.clone(),
        None => (0..c)
            .map(|_| {
                let pattern: Vec<f64> = (0..d / spec.frames)
                    .map(|_| spec.mean_spread * normal(&mut rng))
                    .collect();
                pattern.iter().copied().cycle().take(d).collect()
            })
            .collect(),
    };
    let offsets: Vec<Vec<f64>> = (0..spec.source_count)
        .map(|_| (0..d).map(|_| spec.source_shift * normal(&mut rng)).collect())
        .collect();

    let mut components: Vec<usize> = spec
        .samples_per_class
        .iter()
        .enumerate()
        .flat_map(|(class, &count)| std::iter::repeat_n(class, count))
        .collect();
    components.shuffle(&mut rng);

    let mut sources = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for &y in &components {
        let s = rng.random_range(0..spec.source_count);
        let scale = spec.class_scales.get(y).copied().unwrap_or(1.0);
        let row: Vec<f64> = (0..d)
            .map(|j| means[y][j] + offsets[s][j] + scale * normal(&mut rng))
            .collect();
        sources.push(s);
        rows.push(row);
    }

    // Redundant samples: exact copies of earlier rows that are not copies themselves.
    let n_dup = fraction_count(spec.duplicate_fraction, n).min(n.saturating_sub(1));
    if n_dup > 0 {
        let mut dup: Vec<usize> = index::sample(&mut rng, n - 1, n_dup)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        dup.sort_unstable();
        let dup_set: std::collections::BTreeSet<usize> = dup.iter().copied().collect();
        for &i in &dup {
            let originals: Vec<usize> = (0..i).filter(|j| !dup_set.contains(j)).collect();
            let j = originals[rng.random_range(0..originals.len())];
            rows[i] = rows[j].clone();
            components[i] = components[j];
            sources[i] = sources[j];
        }
    }

    // Outliers: labels re-drawn uniformly among the wrong classes.
    let mut labels: Vec<u16> = components.iter().map(|&y| y as u16).collect();
    let n_out = fraction_count(spec.outlier_fraction, n);
    for i in index::sample(&mut rng, n, n_out) {
        let shift = rng.random_range(1..c);
        labels[i] = ((components[i] + shift) % c) as u16;
    }

    let features = FeatureMatrix::from_rows(&rows)?;
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        class_count: c,
        class_names: (0..c).map(|i| format!("class-{i}")).collect(),
        feature_dim: d,
        sample_count: n,
        features_path: PathBuf::new(),
        labels_path: PathBuf::new(),
        audio_refs: None,
        sources: Some(sources.iter().map(|s| format!("source-{s}")).collect()),
    };
    Ok(Dataset {
        manifest,
        features,
        labels,
    })
}

fn normal(rng: &mut rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}
