//! k-means over instance embeddings and the two ways of collapsing instances
//! into one vector per word: by cluster and by known label.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::InstanceSet;
use crate::retrieval::for_each_score_row;
use crate::store::EmbeddingSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self { k, max_iters: 100, restarts: 10, tol: 1e-8, seed: 0 }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k == 0 || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig("k, max_iters and restarts must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.k > n_points {
            return Err(Error::InvalidConfig(format!("k = {} exceeds the {n_points} instances", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    #[serde(skip)]
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// WCSS after every Lloyd iteration of the returned run.
    pub wcss_trace: Vec<f64>,
    /// Final WCSS of every restart, in restart order.
    pub restart_wcss: Vec<f64>,
    pub best_restart: usize,
}

fn sq_dist(m: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..m.ncols()).map(|t| (m[(i, t)] - c[(j, t)]).powi(2)).sum()
}

fn wcss(points: &DMatrix<f64>, centroids: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| sq_dist(points, i, centroids, c)).sum()
}

/// Nearest centroid of every point, ties toward the lowest id.
fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    let norms: Vec<f64> = centroids.row_iter().map(|r| r.norm_squared()).collect();
    for_each_score_row(points, centroids, |_, dots| {
        let mut best = (0, f64::INFINITY);
        for (j, dot) in dots.iter().enumerate() {
            let d = norms[j] - 2.0 * dot;
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    })
}

fn means(points: &DMatrix<f64>, assignment: &[usize], k: usize, fallback: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let mut sums = DMatrix::zeros(k, points.ncols());
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for t in 0..points.ncols() {
            sums[(c, t)] += points[(i, t)];
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            sums.set_row(c, &fallback.row(c));
        } else {
            let n = count as f64;
            sums.row_mut(c).apply(|v| *v /= n);
        }
    }
    (sums, counts)
}

fn kmeans_pp(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, points, chosen[0])).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a chosen centre.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, points, next));
        }
    }
    points.select_rows(&chosen)
}

/// Gives every empty cluster the point farthest from its current centroid.
fn reseed_empty(points: &DMatrix<f64>, centroids: &DMatrix<f64>, assignment: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    let mut moved = vec![false; points.nrows()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..points.nrows() {
            if moved[i] || counts[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(points, i, centroids, assignment[i]);
            if d > 0.0 && best.is_none_or(|b| d > b.1) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] = 1;
            moved[i] = true;
        }
    }
}

struct Run {
    assignment: Vec<usize>,
    centroids: DMatrix<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn lloyd(points: &DMatrix<f64>, config: &KMeansConfig, rng: &mut ChaCha8Rng) -> Run {
    let mut centroids = kmeans_pp(points, config.k, rng);
    let mut trace = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut converged = false;
    let mut assignment = Vec::new();
    for _ in 0..config.max_iters {
        assignment = assign(points, &centroids);
        reseed_empty(points, &centroids, &mut assignment, config.k);
        let (updated, _) = means(points, &assignment, config.k, &centroids);
        trace.push(wcss(points, &updated, &assignment));
        let movement = (0..config.k)
            .map(|c| (updated.row(c) - centroids.row(c)).norm())
            .fold(0.0, f64::max);
        centroids = updated;
        let unchanged = previous.as_ref() == Some(&assignment);
        if unchanged || movement < config.tol {
            converged = true;
            break;
        }
        previous = Some(assignment.clone());
    }
    Run { assignment, centroids, trace, converged }
}

pub fn kmeans_cluster(instances: &InstanceSet, config: &KMeansConfig) -> Result<KMeansResult> {
    config.validate(instances.len())?;
    let points = instances.vectors();
    let mut best: Option<(usize, Run)> = None;
    let mut restart_wcss = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        let run = lloyd(points, config, &mut rng);
        let w = *run.trace.last().expect("at least one iteration");
        restart_wcss.push(w);
        if best.as_ref().is_none_or(|(_, b)| w < *b.trace.last().unwrap()) {
            best = Some((r, run));
        }
    }
    let (best_restart, run) = best.expect("at least one restart");
    Ok(KMeansResult {
        wcss: *run.trace.last().unwrap(),
        iterations: run.trace.len(),
        converged: run.converged,
        assignment: run.assignment,
        centroids: run.centroids,
        wcss_trace: run.trace,
        restart_wcss,
        best_restart,
    })
}

/// One row per non-empty cluster, in increasing id order, named `cluster_<id>`.
pub fn average_clusters(instances: &InstanceSet, assignment: &[usize]) -> Result<EmbeddingSpace> {
    if assignment.len() != instances.len() {
        return Err(Error::DimensionMismatch { expected: instances.len(), actual: assignment.len() });
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let zero = DMatrix::zeros(k, instances.dim());
    let (centres, counts) = means(instances.vectors(), assignment, k, &zero);
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let space = EmbeddingSpace::new(
        present.iter().map(|c| format!("cluster_{c}")).collect(),
        centres.select_rows(&present),
    )?;
    space.with_frequencies(present.iter().map(|&c| counts[c] as u64).collect())
}

/// One row per label, in order of first appearance, holding the mean of its instances.
pub fn group_by_label(instances: &InstanceSet) -> Result<EmbeddingSpace> {
    let labels = instances.require_labels()?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let assignment: Vec<usize> = labels
        .iter()
        .map(|l| {
            *ids.entry(l.as_str()).or_insert_with(|| {
                order.push(l.clone());
                order.len() - 1
            })
        })
        .collect();
    let k = order.len();
    let zero = DMatrix::zeros(k, instances.dim());
    let (centres, counts) = means(instances.vectors(), &assignment, k, &zero);
    EmbeddingSpace::new(order, centres)?.with_frequencies(counts.into_iter().map(|c| c as u64).collect())
}

/// Fraction of instances carrying their cluster's majority label.
pub fn cluster_purity(assignment: &[usize], labels: &[String]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: assignment.len(), actual: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::Empty("no instances".into()));
    }
    let mut table: HashMap<usize, HashMap<&str, usize>> = HashMap::new();
    for (&c, l) in assignment.iter().zip(labels) {
        *table.entry(c).or_default().entry(l.as_str()).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / labels.len() as f64)
}
