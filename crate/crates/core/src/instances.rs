//! Noisy per-occurrence embeddings drawn around a base space.
//!
//! Each word of the base space yields `per_word` instances, the base vector
//! plus isotropic Gaussian noise. A contamination fraction of the instances is
//! then replaced by convex mixtures of two random base vectors, which stands in
//! for badly segmented occurrences. Instances keep the label of the word they
//! were drawn for, including contaminated ones.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::store::{load_embeddings, save_embeddings, EmbeddingSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    vectors: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl InstanceSet {
    pub fn new(vectors: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if vectors.ncols() == 0 {
            return Err(Error::InvalidConfig("instance dimension must be positive".into()));
        }
        if let Some(i) = (0..vectors.nrows()).find(|&i| vectors.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        if let Some(l) = &labels {
            if l.len() != vectors.nrows() {
                return Err(Error::DimensionMismatch { expected: vectors.nrows(), actual: l.len() });
            }
        }
        Ok(Self { vectors, labels })
    }

    /// Type-level queries: one instance per word, labelled with its own token.
    pub fn from_space(space: &EmbeddingSpace) -> Self {
        Self { vectors: space.vectors().clone(), labels: Some(space.vocab().to_vec()) }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[String]> {
        self.labels().ok_or_else(|| Error::InvalidConfig("instance labels are required".into()))
    }

    /// Rows whose label satisfies `keep`, in order.
    pub fn filter_labels(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let labels = self.require_labels()?;
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&labels[i])).collect();
        Ok(Self {
            vectors: self.vectors.select_rows(&rows),
            labels: Some(rows.iter().map(|&i| labels[i].clone()).collect()),
        })
    }

    /// Replace labels, e.g. to rename source words after their translations.
    pub fn relabel(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        let labels = self.require_labels()?;
        Ok(Self { vectors: self.vectors.clone(), labels: Some(labels.iter().map(|l| f(l)).collect()) })
    }

    /// The instances as a space with tokens `inst_<i>`, which carry no label information.
    pub fn to_space(&self) -> Result<EmbeddingSpace> {
        EmbeddingSpace::new(instance_tokens(self.len()), self.vectors.clone())
    }
}

fn instance_tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("inst_{i}")).collect()
}

pub fn generate_instances(
    base: &EmbeddingSpace,
    per_word: usize,
    noise_sigma: f64,
    contamination: f64,
    seed: u64,
) -> Result<InstanceSet> {
    if base.is_empty() {
        return Err(Error::Empty("base space".into()));
    }
    if per_word == 0 {
        return Err(Error::InvalidConfig("per-word count must be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig("noise sigma must be a non-negative number".into()));
    }
    if !(0.0..=1.0).contains(&contamination) {
        return Err(Error::InvalidConfig("contamination must be in [0, 1]".into()));
    }
    let (n, d) = (base.len(), base.dim());
    let total = n * per_word;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma).expect("checked sigma");
    let mut vectors = DMatrix::zeros(total, d);
    let mut labels = Vec::with_capacity(total);
    let b = base.vectors();
    for w in 0..n {
        for r in 0..per_word {
            let i = w * per_word + r;
            for j in 0..d {
                let noise = if noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                vectors[(i, j)] = b[(w, j)] + noise;
            }
            labels.push(base.token(w).to_string());
        }
    }

    let n_bad = (contamination * total as f64).round() as usize;
    let mut bad = sample(&mut rng, total, n_bad).into_vec();
    bad.sort_unstable();
    for i in bad {
        // Two distinct words, mixed strictly inside the segment between them.
        let u = rng.random_range(0..n);
        let v = if n > 1 { (u + rng.random_range(1..n)) % n } else { u };
        let a: f64 = rng.random_range(0.2..0.8);
        for j in 0..d {
            let noise = if noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            vectors[(i, j)] = a * b[(u, j)] + (1.0 - a) * b[(v, j)] + noise;
        }
    }
    InstanceSet::new(vectors, Some(labels))
}

/// Writes vectors with `inst_<i>` tokens and, when present, one label per line to `labels_path`.
pub fn save_instances(set: &InstanceSet, vectors_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<()> {
    save_embeddings(&set.to_space()?, vectors_path)?;
    if let (Some(path), Some(labels)) = (labels_path, set.labels()) {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for l in labels {
            writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let label = line.trim();
        if label.is_empty() || label.contains(char::is_whitespace) {
            return Err(Error::parse(path, i + 1, "expected a single label"));
        }
        out.push(label.to_string());
    }
    Ok(out)
}

/// Instance vectors in embedding format; tokens are ignored beyond uniqueness.
pub fn load_instances(vectors_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<InstanceSet> {
    let space = load_embeddings(vectors_path, None)?;
    let labels = labels_path.map(load_labels).transpose()?;
    InstanceSet::new(space.vectors().clone(), labels)
}
