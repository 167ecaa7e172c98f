//! Skip-gram with negative sampling over tokenized sentences.
//!
//! For a center word `c`, a context word `o` within the window and negatives
//! `n_1..n_K` drawn from the unigram distribution raised to 0.75, the loss is
//!
//! ```text
//! -log sigmoid(u_o . v_c) - sum_k log sigmoid(-u_{n_k} . v_c)
//! ```
//!
//! where `v` are input (center) vectors and `u` output (context) vectors. The
//! returned space holds the input vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::adversarial::sigmoid;
use crate::error::{Error, Result};
use crate::store::EmbeddingSpace;

/// Learning rate decays linearly to this fraction of its initial value.
const MIN_LR_FRACTION: f64 = 1e-4;
const UNIGRAM_POWER: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub window_size: usize,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self { window_size: 3, dim: 50, negatives_per_positive: 5, epochs: 5, learning_rate: 0.025, min_count: 1, seed: 0 }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 1 {
            return Err(Error::InvalidConfig("window size must be at least 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dimension must be at least 2".into()));
        }
        if self.negatives_per_positive < 1 || self.epochs < 1 {
            return Err(Error::InvalidConfig("negatives and epochs must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgnsModel {
    pub space: EmbeddingSpace,
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Loss and gradients for one (center, context, negatives) tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sigmoid(z: f64) -> f64 {
    -((-z.abs()).exp().ln_1p() + (-z).max(0.0))
}

pub fn pair_loss_and_grads(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let z = dot(center, context);
    let mut loss = -log_sigmoid(z);
    // d/dz of -log sigmoid(z) is sigmoid(z) - 1.
    let g = sigmoid(z) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let g_context: Vec<f64> = center.iter().map(|v| g * v).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let zn = dot(center, neg);
        loss -= log_sigmoid(-zn);
        let gn = sigmoid(zn);
        for (gc, u) in g_center.iter_mut().zip(neg.iter()) {
            *gc += gn * u;
        }
        g_negs.push(center.iter().map(|v| gn * v).collect());
    }
    PairGradients { loss, center: g_center, context: g_context, negatives: g_negs }
}

/// One whitespace-tokenized sentence per line; blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}

struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

/// Most frequent first; ties keep first-occurrence order.
fn build_vocab(corpus: &[Vec<String>], min_count: u64) -> Vocab {
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    let mut next = 0;
    for tok in corpus.iter().flatten() {
        let e = counts.entry(tok.as_str()).or_insert_with(|| {
            next += 1;
            (0, next)
        });
        e.0 += 1;
    }
    let mut entries: Vec<(&str, u64, usize)> =
        counts.into_iter().filter(|(_, (c, _))| *c >= min_count).map(|(w, (c, o))| (w, c, o)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let words: Vec<String> = entries.iter().map(|e| e.0.to_string()).collect();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Vocab { counts: entries.iter().map(|e| e.1).collect(), words, index }
}

pub fn train_sgns(corpus: &[Vec<String>], config: &SgnsConfig) -> Result<SgnsModel> {
    config.validate()?;
    let vocab = build_vocab(corpus, config.min_count);
    if vocab.words.is_empty() {
        return Err(Error::Empty("vocabulary after min-count filtering".into()));
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.index.get(t).copied()).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();
    let k = config.window_size;
    let pairs_per_epoch: usize = sentences
        .iter()
        .map(|s| (0..s.len()).map(|i| i.min(k) + (s.len() - 1 - i).min(k)).sum::<usize>())
        .sum();
    if pairs_per_epoch == 0 {
        return Err(Error::Empty("corpus has no context pairs".into()));
    }

    let n = vocab.words.len();
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..n * d).map(|_| rng.random_range(-half..half)).collect();
    let mut output = vec![0.0; n * d];
    let noise = WeightedIndex::new(vocab.counts.iter().map(|&c| (c as f64).powf(UNIGRAM_POWER)))
        .map_err(|e| Error::InvalidConfig(format!("negative sampling table: {e}")))?;

    let total = (pairs_per_epoch * config.epochs) as f64;
    let lr0 = config.learning_rate;
    let mut done = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut negs = Vec::with_capacity(config.negatives_per_positive);
    let mut g_center = vec![0.0; d];

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        for sent in &sentences {
            for (i, &c) in sent.iter().enumerate() {
                let lo = i.saturating_sub(k);
                let hi = (i + k).min(sent.len() - 1);
                for (j, &o) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = lr0 * (1.0 - (1.0 - MIN_LR_FRACTION) * done as f64 / total);
                    done += 1;

                    negs.clear();
                    while negs.len() < config.negatives_per_positive {
                        let w = noise.sample(&mut rng);
                        // A vocabulary of one word can only draw the positive.
                        if w != o || n == 1 {
                            negs.push(w);
                        }
                    }

                    let v = &input[c * d..(c + 1) * d];
                    g_center.iter_mut().for_each(|x| *x = 0.0);
                    for (idx, label) in std::iter::once((o, 1.0)).chain(negs.iter().map(|&w| (w, 0.0))) {
                        let u = &mut output[idx * d..(idx + 1) * d];
                        let z = dot(v, u);
                        loss_sum -= if label == 1.0 { log_sigmoid(z) } else { log_sigmoid(-z) };
                        let g = sigmoid(z) - label;
                        for t in 0..d {
                            g_center[t] += g * u[t];
                            u[t] -= lr * g * v[t];
                        }
                    }
                    let v = &mut input[c * d..(c + 1) * d];
                    for t in 0..d {
                        v[t] -= lr * g_center[t];
                    }
                }
            }
        }
        epoch_losses.push(loss_sum / pairs_per_epoch as f64);
    }

    let vectors = DMatrix::from_row_slice(n, d, &input);
    let space = EmbeddingSpace::new(vocab.words, vectors)?.with_frequencies(vocab.counts)?;
    Ok(SgnsModel { space, epoch_losses })
}
