//! Domain-adversarial estimation of the initial map.
//!
//! A discriminator (one hidden ReLU layer, logistic output) learns to tell mapped
//! source vectors from target vectors; the map is trained to fool it. The
//! discriminator minimizes
//!
//! ```text
//! L_D = -mean_i log P(src | W s_i) - mean_j log P(tgt | t_j)
//! ```
//!
//! and the map minimizes the same expression with the origins swapped. Only the
//! source half of `L_W` depends on `W`; the target half is reported but carries
//! no gradient.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::LinearMap;
use crate::retrieval::{for_each_score_row, mean_neighbour_similarity};
use crate::store::{normalize_rows, EmbeddingSpace};

pub const DEFAULT_HIDDEN: usize = 512;

/// Discriminator weights: `p(src | v) = sigmoid(w2 . relu(W1 v + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

/// Gradients of `L_D` for the discriminator and of `L_W` for the map.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub discriminator: DiscriminatorGrads,
    pub mapping: DMatrix<f64>,
}

impl Discriminator {
    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |a: f64| rng.random_range(-a..a);
        let w1 = DMatrix::from_fn(hidden, input_dim, |_, _| u(a1));
        let b1 = DVector::from_fn(hidden, |_, _| u(a1));
        let w2 = DVector::from_fn(hidden, |_, _| u(a2));
        let b2 = u(a2);
        Self { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    /// Returns hidden pre-activations (`n x h`) and output logits.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut pre = x * self.w1.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.b1.transpose();
        }
        let hid = pre.map(|v| v.max(0.0));
        let mut logits = hid * &self.w2;
        logits.add_scalar_mut(self.b2);
        (pre, logits)
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.forward(x).1
    }

    /// Probability that each row originates from the source space.
    pub fn source_probability(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.logits(x).map(sigmoid)
    }

    /// Backpropagates `d loss / d logit` into parameter gradients and, when
    /// requested, the gradient with respect to the inputs.
    fn backward(
        &self,
        x: &DMatrix<f64>,
        pre: &DMatrix<f64>,
        dlogits: &DVector<f64>,
        input_grad: bool,
    ) -> (DiscriminatorGrads, Option<DMatrix<f64>>) {
        let hid = pre.map(|v| v.max(0.0));
        let w2 = hid.transpose() * dlogits;
        let b2 = dlogits.sum();
        let mut dpre = dlogits * self.w2.transpose();
        dpre.zip_apply(pre, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let w1 = dpre.transpose() * x;
        let b1 = DVector::from_iterator(dpre.ncols(), dpre.column_iter().map(|c| c.sum()));
        let dx = input_grad.then(|| &dpre * &self.w1);
        (DiscriminatorGrads { w1, b1, w2, b2 }, dx)
    }

    fn step(&mut self, g: &DiscriminatorGrads, lr: f64) {
        self.w1 -= &g.w1 * lr;
        self.b1.axpy(-lr, &g.b1, 1.0);
        self.w2.axpy(-lr, &g.w2, 1.0);
        self.b2 -= lr * g.b2;
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).all(|v| v.is_finite()) && self.b2.is_finite()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-(y log sigmoid(z) + (1 - y) log(1 - sigmoid(z)))`, stable for large `|z|`.
pub(crate) fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Soft labels for (mapped source rows, target rows).
#[derive(Debug, Clone, Copy)]
struct Labels {
    source: f64,
    target: f64,
}

impl Labels {
    fn discriminator(smoothing: f64) -> Self {
        Self { source: 1.0 - smoothing, target: smoothing }
    }

    fn mapping(smoothing: f64) -> Self {
        Self { source: smoothing, target: 1.0 - smoothing }
    }
}

fn check_batches(disc: &Discriminator, src: &DMatrix<f64>, tgt: &DMatrix<f64>) -> Result<()> {
    if src.nrows() == 0 || tgt.nrows() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    for m in [src, tgt] {
        if m.ncols() != disc.input_dim() {
            return Err(Error::DimensionMismatch { expected: disc.input_dim(), actual: m.ncols() });
        }
    }
    Ok(())
}

fn loss_with(disc: &Discriminator, src: &DMatrix<f64>, tgt: &DMatrix<f64>, labels: Labels) -> Result<f64> {
    check_batches(disc, src, tgt)?;
    let ls = disc.logits(src);
    let lt = disc.logits(tgt);
    let a = ls.iter().map(|&z| bce_with_logit(z, labels.source)).sum::<f64>() / ls.len() as f64;
    let b = lt.iter().map(|&z| bce_with_logit(z, labels.target)).sum::<f64>() / lt.len() as f64;
    Ok(a + b)
}

/// Discriminator objective on already-mapped source rows and target rows.
pub fn discriminator_loss(disc: &Discriminator, mapped_source: &DMatrix<f64>, target: &DMatrix<f64>, smoothing: f64) -> Result<f64> {
    loss_with(disc, mapped_source, target, Labels::discriminator(smoothing))
}

/// Mapping objective: the discriminator objective with origins swapped.
pub fn mapping_loss(disc: &Discriminator, mapped_source: &DMatrix<f64>, target: &DMatrix<f64>, smoothing: f64) -> Result<f64> {
    loss_with(disc, mapped_source, target, Labels::mapping(smoothing))
}

/// Exact gradients of both objectives on fixed, unmapped source and target batches.
pub fn gradients(
    disc: &Discriminator,
    map: &LinearMap,
    source_batch: &DMatrix<f64>,
    target_batch: &DMatrix<f64>,
    smoothing: f64,
) -> Result<Gradients> {
    let mapped = map.apply_rows(source_batch)?;
    check_batches(disc, &mapped, target_batch)?;
    Ok(Gradients {
        discriminator: discriminator_grads(disc, &mapped, target_batch, smoothing, None).1,
        mapping: mapping_grad(disc, source_batch, &mapped, smoothing, None).1,
    })
}

/// Mean BCE of a batch against one label, and its gradient w.r.t. each logit.
fn bce_and_grads(logits: &DVector<f64>, label: f64) -> (f64, DVector<f64>) {
    let n = logits.len() as f64;
    let loss = logits.iter().map(|&z| bce_with_logit(z, label)).sum::<f64>() / n;
    (loss, logits.map(|z| (sigmoid(z) - label) / n))
}

/// `L_D` and its parameter gradients. Masks, when given, are applied to the
/// discriminator inputs (inverted dropout).
fn discriminator_grads(
    disc: &Discriminator,
    mapped: &DMatrix<f64>,
    target: &DMatrix<f64>,
    smoothing: f64,
    dropout: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> (f64, DiscriminatorGrads) {
    let labels = Labels::discriminator(smoothing);
    let (xs, xt) = match dropout {
        Some((ms, mt)) => (mapped.component_mul(ms), target.component_mul(mt)),
        None => (mapped.clone(), target.clone()),
    };
    let (pre_s, z_s) = disc.forward(&xs);
    let (pre_t, z_t) = disc.forward(&xt);
    let (loss_s, dz_s) = bce_and_grads(&z_s, labels.source);
    let (loss_t, dz_t) = bce_and_grads(&z_t, labels.target);
    let (gs, _) = disc.backward(&xs, &pre_s, &dz_s, false);
    let (gt, _) = disc.backward(&xt, &pre_t, &dz_t, false);
    let grads = DiscriminatorGrads { w1: gs.w1 + gt.w1, b1: gs.b1 + gt.b1, w2: gs.w2 + gt.w2, b2: gs.b2 + gt.b2 };
    (loss_s + loss_t, grads)
}

/// Source half of `L_W` and its gradient w.r.t. the map. The target half has
/// no dependence on `W` and is left out.
fn mapping_grad(
    disc: &Discriminator,
    source: &DMatrix<f64>,
    mapped: &DMatrix<f64>,
    smoothing: f64,
    dropout: Option<&DMatrix<f64>>,
) -> (f64, DMatrix<f64>) {
    let labels = Labels::mapping(smoothing);
    let x = match dropout {
        Some(m) => mapped.component_mul(m),
        None => mapped.clone(),
    };
    let (pre, z) = disc.forward(&x);
    let (loss, dz) = bce_and_grads(&z, labels.source);
    let (_, dx) = disc.backward(&x, &pre, &dz, true);
    let mut dx = dx.expect("input gradient requested");
    if let Some(m) = dropout {
        dx.component_mul_assign(m);
    }
    (loss, dx.transpose() * source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Uniform,
    /// Proportional to word frequency; falls back to uniform without frequencies.
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Discriminator updates per map update.
    pub dis_steps: usize,
    pub lr_discriminator: f64,
    pub lr_mapping: f64,
    pub label_smoothing: f64,
    pub input_dropout: f64,
    pub ortho_beta: f64,
    pub hidden: usize,
    pub sampling: Sampling,
    /// Number of most frequent source words scored by the selection criterion.
    pub selection_top: usize,
    pub csls_k: usize,
    pub seed: u64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            steps_per_epoch: 1000,
            batch_size: 32,
            dis_steps: 1,
            lr_discriminator: 1e-3,
            lr_mapping: 1e-3,
            label_smoothing: 0.2,
            input_dropout: 0.1,
            ortho_beta: 0.001,
            hidden: DEFAULT_HIDDEN,
            sampling: Sampling::Uniform,
            selection_top: 10_000,
            csls_k: 10,
            seed: 0,
        }
    }
}

impl AdversarialConfig {
    /// Larger steps and a strong orthogonality pull, for vocabularies of a few
    /// thousand words where the default rates barely move the map.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 15,
            steps_per_epoch: 2000,
            lr_discriminator: 0.1,
            lr_mapping: 0.5,
            ortho_beta: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 || self.dis_steps == 0 || self.hidden == 0 {
            return bad("epochs, steps, batch size, discriminator steps and hidden size must be positive");
        }
        if !(self.lr_discriminator > 0.0 && self.lr_mapping > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label smoothing must be in [0, 0.5)");
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad("input dropout must be in [0, 1)");
        }
        if self.ortho_beta.is_nan() || self.ortho_beta < 0.0 {
            return bad("ortho_beta must be non-negative");
        }
        if self.selection_top == 0 || self.csls_k == 0 {
            return bad("selection_top and csls_k must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTrace {
    /// 0 is the initial map, before any update.
    pub epoch: usize,
    pub discriminator_loss: f64,
    pub mapping_loss: f64,
    pub criterion: f64,
    /// Largest `|sigma - 1|` over singular values of `W`.
    pub orthogonality_error: f64,
}

#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub map: LinearMap,
    pub best_epoch: usize,
    pub trace: Vec<EpochTrace>,
}

/// Unsupervised model-selection score: mean best CSLS similarity of the
/// `top` most frequent mapped source words against the target space.
pub fn selection_criterion(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &LinearMap,
    top: usize,
    csls_k: usize,
) -> Result<f64> {
    let k = csls_k.min(source.len()).min(target.len());
    let mut mapped = map.map_space(source)?;
    normalize_rows(&mut mapped);
    let mut tgt = target.vectors().clone();
    normalize_rows(&mut tgt);
    let tgt_pen = mean_neighbour_similarity(&tgt, &mapped, k);
    let mut rows = source.frequency_order();
    rows.truncate(top);
    let queries = mapped.select_rows(&rows);
    let best: Vec<f64> = for_each_score_row(&queries, &tgt, |_, row| {
        let mut tmp = row.to_vec();
        let kk = k.min(tmp.len());
        tmp.select_nth_unstable_by(kk - 1, |a, b| b.total_cmp(a));
        let r_t = tmp[..kk].iter().sum::<f64>() / kk as f64;
        row.iter()
            .zip(&tgt_pen)
            .map(|(c, p)| 2.0 * c - r_t - p)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(best.iter().sum::<f64>() / best.len().max(1) as f64)
}

fn orthogonality_error(map: &LinearMap) -> f64 {
    map.singular_values().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

struct Sampler {
    n: usize,
    weighted: Option<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(space: &EmbeddingSpace, mode: Sampling) -> Self {
        let weighted = match (mode, space.frequencies()) {
            (Sampling::Frequency, Some(f)) if f.iter().any(|&c| c > 0) => {
                WeightedIndex::new(f.iter().map(|&c| c as f64)).ok()
            }
            _ => None,
        };
        Self { n: space.len(), weighted }
    }

    fn batch<R: Rng>(&self, rng: &mut R, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| match &self.weighted {
                Some(w) => w.sample(rng),
                None => rng.random_range(0..self.n),
            })
            .collect()
    }
}

fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Option<DMatrix<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep }))
}

/// Trains the map adversarially and returns the map with the best selection
/// criterion seen at an epoch boundary (the initial map included).
pub fn train_adversarial(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    config: &AdversarialConfig,
) -> Result<AdversarialResult> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("source and target spaces must be non-empty".into()));
    }
    let (d1, d2) = (source.dim(), target.dim());
    let map = if d1 == d2 {
        LinearMap::identity(d1)
    } else {
        LinearMap::random_orthonormal(d2, d1, config.seed ^ 0x5eed_0001)
    };
    train_adversarial_from(source, target, map, config)
}

/// Same as [`train_adversarial`], starting from a given map.
pub fn train_adversarial_from(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: LinearMap,
    config: &AdversarialConfig,
) -> Result<AdversarialResult> {
    train_adversarial_observed(source, target, map, config, |_, _| {})
}

/// Training loop with a callback invoked after every epoch with its trace row and the current map.
pub fn train_adversarial_observed(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    mut map: LinearMap,
    config: &AdversarialConfig,
    mut on_epoch: impl FnMut(&EpochTrace, &LinearMap),
) -> Result<AdversarialResult> {
    config.validate()?;
    if map.source_dim() != source.dim() || map.target_dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: source.dim(), actual: map.source_dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut disc = Discriminator::new(target.dim(), config.hidden, config.seed.wrapping_add(1));
    let src_sampler = Sampler::new(source, config.sampling);
    let tgt_sampler = Sampler::new(target, config.sampling);
    let bs = config.batch_size;
    let s = config.label_smoothing;

    let criterion = |m: &LinearMap| selection_criterion(source, target, m, config.selection_top, config.csls_k);
    // Epoch 0 records the untrained state, with losses on a single batch.
    let trace0 = {
        let sb = source.vectors().select_rows(&src_sampler.batch(&mut rng, bs));
        let tb = target.vectors().select_rows(&tgt_sampler.batch(&mut rng, bs));
        let mapped = map.apply_rows(&sb)?;
        EpochTrace {
            epoch: 0,
            discriminator_loss: discriminator_loss(&disc, &mapped, &tb, s)?,
            mapping_loss: mapping_loss(&disc, &mapped, &tb, s)?,
            criterion: criterion(&map)?,
            orthogonality_error: orthogonality_error(&map),
        }
    };
    let mut trace = vec![trace0];
    let mut best = (trace[0].criterion, 0usize, map.clone());

    for epoch in 1..=config.epochs {
        let (mut sum_d, mut sum_w) = (0.0, 0.0);
        for _ in 0..config.steps_per_epoch {
            for _ in 0..config.dis_steps {
                let sb = source.vectors().select_rows(&src_sampler.batch(&mut rng, bs));
                let tb = target.vectors().select_rows(&tgt_sampler.batch(&mut rng, bs));
                let mapped = map.apply_rows(&sb)?;
                let ms = dropout_mask(&mut rng, bs, map.target_dim(), config.input_dropout);
                let mt = dropout_mask(&mut rng, bs, map.target_dim(), config.input_dropout);
                let (loss, g) = discriminator_grads(&disc, &mapped, &tb, s, ms.as_ref().zip(mt.as_ref()));
                sum_d += loss;
                disc.step(&g, config.lr_discriminator);
            }
            let sb = source.vectors().select_rows(&src_sampler.batch(&mut rng, bs));
            let tb = target.vectors().select_rows(&tgt_sampler.batch(&mut rng, bs));
            let mapped = map.apply_rows(&sb)?;
            let ms = dropout_mask(&mut rng, bs, map.target_dim(), config.input_dropout);
            let (loss_src, gw) = mapping_grad(&disc, &sb, &mapped, s, ms.as_ref());
            // Target half of L_W, for reporting only.
            let zt = disc.logits(&tb);
            let loss_tgt = zt.iter().map(|&z| bce_with_logit(z, 1.0 - s)).sum::<f64>() / zt.len() as f64;
            sum_w += loss_src + loss_tgt;
            map.update(|w| *w -= &gw * config.lr_mapping);
            map.orthogonalize_step(config.ortho_beta);
        }
        let steps = config.steps_per_epoch as f64;
        let d_loss = sum_d / (steps * config.dis_steps as f64);
        let w_loss = sum_w / steps;
        let finite = d_loss.is_finite() && w_loss.is_finite() && disc.is_finite() && map.matrix().iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged { epoch, checkpoint: Box::new(best.2) });
        }
        let c = criterion(&map)?;
        trace.push(EpochTrace {
            epoch,
            discriminator_loss: d_loss,
            mapping_loss: w_loss,
            criterion: c,
            orthogonality_error: orthogonality_error(&map),
        });
        on_epoch(trace.last().expect("trace is non-empty"), &map);
        if c > best.0 {
            best = (c, epoch, map.clone());
        }
    }
    Ok(AdversarialResult { map: best.2, best_epoch: best.1, trace })
}
