//! Synthetic aligned pairs of embedding spaces with known ground truth.
//!
//! The source space is drawn with anisotropic, skewed coordinates and a family
//! structure so that its distribution has no rotational or reflective symmetry.
//! The target space is the source space under a seeded random orthogonal
//! transform, plus Gaussian noise, with token names and row order scrambled by
//! a seeded bijection.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{random_orthonormal, save_map, LinearMap};
use crate::store::{save_dictionary, save_embeddings, save_frequencies, BilingualDictionary, EmbeddingSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Words per semantic family; family members share a common component.
    pub family_size: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { vocab_size: 2000, dim: 50, noise_sigma: 0.0, seed: 0, holdout_fraction: 0.2, family_size: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source: EmbeddingSpace,
    pub target: EmbeddingSpace,
    /// The planted orthogonal transform: `target_row = Q source_row + noise`.
    pub rotation: LinearMap,
    pub train: BilingualDictionary,
    pub test: BilingualDictionary,
    /// Source row index of each source word's family.
    pub families: Vec<usize>,
    /// True when `vocab_size < 2 dim`.
    pub undersized: bool,
}

impl Benchmark {
    /// All ground-truth pairs, train first.
    pub fn full_dictionary(&self) -> BilingualDictionary {
        BilingualDictionary::from_pairs(self.train.pairs().iter().chain(self.test.pairs()).cloned())
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_embeddings(&self.source, dir.join("source.vec"))?;
        save_embeddings(&self.target, dir.join("target.vec"))?;
        save_frequencies(&self.source, dir.join("source.freq"))?;
        save_frequencies(&self.target, dir.join("target.freq"))?;
        save_dictionary(&self.train, dir.join("dict.train.txt"))?;
        save_dictionary(&self.test, dir.join("dict.test.txt"))?;
        save_map(&self.rotation, dir.join("rotation.txt"))
    }
}

/// Zipf-like counts, largest first.
fn zipf_counts(n: usize) -> Vec<u64> {
    (0..n).map(|r| (1_000_000.0 / (r as f64 + 1.0)).round().max(1.0) as u64).collect()
}

pub fn make_synthetic_benchmark(config: &BenchmarkConfig) -> Result<Benchmark> {
    let (n, d) = (config.vocab_size, config.dim);
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig("vocab_size and dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.holdout_fraction) {
        return Err(Error::InvalidConfig("holdout fraction must be in [0, 1]".into()));
    }
    if config.noise_sigma.is_nan() || config.noise_sigma < 0.0 {
        return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gamma = Gamma::new(2.0, 1.0).expect("valid gamma");
    let skewed = |rng: &mut ChaCha8Rng| (gamma.sample(rng) - 2.0) / std::f64::consts::SQRT_2;

    let family_size = config.family_size.max(1);
    let n_families = n.div_ceil(family_size);
    // Decaying per-axis scales make the covariance spectrum non-degenerate.
    let scale: Vec<f64> = (0..d).map(|j| (-1.5 * j as f64 / d as f64).exp()).collect();
    let centres = DMatrix::from_fn(n_families, d, |_, j| scale[j] * skewed(&mut rng));
    let families: Vec<usize> = (0..n).map(|i| i / family_size).collect();
    let source_m = DMatrix::from_fn(n, d, |i, j| 0.7 * centres[(families[i], j)] + 0.7 * scale[j] * skewed(&mut rng));

    let q = random_orthonormal(d, d, config.seed.wrapping_add(0x9e37_79b9));
    let mut target_m = &source_m * q.transpose();
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).expect("valid sigma");
        target_m.apply(|v| *v += normal.sample(&mut rng));
    }

    // Target row r holds the translation of source word perm[r].
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut target_of = vec![0usize; n];
    for (r, &i) in perm.iter().enumerate() {
        target_of[i] = r;
    }
    let target_rows = target_m.select_rows(&perm);

    let counts = zipf_counts(n);
    let source_vocab: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let target_vocab: Vec<String> = (0..n).map(|r| format!("t{r}")).collect();
    let source = EmbeddingSpace::new(source_vocab, source_m)?.with_frequencies(counts.clone())?;
    let target = EmbeddingSpace::new(target_vocab, target_rows)?
        .with_frequencies(perm.iter().map(|&i| counts[i]).collect())?;

    let mut words: Vec<usize> = (0..n).collect();
    words.shuffle(&mut rng);
    let n_test = (config.holdout_fraction * n as f64).round() as usize;
    let (test_words, train_words) = words.split_at(n_test);
    let to_dict = |ws: &[usize]| {
        let mut ws = ws.to_vec();
        ws.sort_unstable();
        BilingualDictionary::from_pairs(ws.iter().map(|&i| (source.token(i).to_string(), target.token(target_of[i]).to_string())))
    };
    let train = to_dict(train_words);
    let test = to_dict(test_words);

    Ok(Benchmark {
        rotation: LinearMap::new(q)?,
        train,
        test,
        families,
        undersized: n < 2 * d,
        source,
        target,
    })
}
