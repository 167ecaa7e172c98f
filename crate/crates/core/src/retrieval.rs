//! Exact nearest-neighbour retrieval under cosine and CSLS similarity.
//!
//! CSLS between a mapped source vector `Ws` and a target row `t` is
//! `2 cos(Ws, t) - r_T(Ws) - r_S(t)`, where `r_T(Ws)` is the mean cosine of
//! `Ws` to its `k` nearest target rows and `r_S(t)` is the mean cosine of `t`
//! to its `k` nearest mapped source rows. Points sitting in dense regions of
//! the other space (hubs) are penalized.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::LinearMap;
use crate::store::{normalize_rows, EmbeddingSpace};

const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "metric")]
pub enum Metric {
    Cosine,
    Csls { k_neighbors: usize },
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Cosine => "cosine".into(),
            Metric::Csls { k_neighbors } => format!("csls_knn_{k_neighbors}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CslsConfig {
    pub k_neighbors: usize,
}

impl Default for CslsConfig {
    fn default() -> Self {
        Self { k_neighbors: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub token: String,
    pub score: f64,
}

/// Orders by score descending, then index ascending.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The best `k` entries of `scores`, strictly ordered by (score desc, index asc).
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_by(rank_order);
    all
}

/// Mean of the `k` largest entries of a score row.
fn mean_top_k(row: &mut [f64], k: usize) -> f64 {
    let k = k.min(row.len());
    if k == 0 {
        return 0.0;
    }
    if k < row.len() {
        row.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    row[..k].iter().sum::<f64>() / k as f64
}

/// Applies `f` to each row of `a * b^T`, in parallel over row chunks.
pub(crate) fn for_each_score_row<T, F>(a: &DMatrix<f64>, b: &DMatrix<f64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync,
{
    let bt = b.transpose();
    let n = a.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    let chunks: Vec<Vec<T>> = starts
        .par_iter()
        .map(|&start| {
            let len = CHUNK_ROWS.min(n - start);
            let block = a.rows(start, len) * &bt;
            // Row-major copy so each score row is contiguous.
            let block = block.transpose();
            let mut out = Vec::with_capacity(len);
            let mut buf = vec![0.0; block.nrows()];
            for r in 0..len {
                buf.copy_from_slice(block.column(r).as_slice());
                out.push(f(start + r, &mut buf));
            }
            out
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// For each row of `queries`, the mean of its `k` largest inner products with rows of `base`.
pub(crate) fn mean_neighbour_similarity(queries: &DMatrix<f64>, base: &DMatrix<f64>, k: usize) -> Vec<f64> {
    for_each_score_row(queries, base, |_, row| mean_top_k(row, k))
}

fn unit_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    normalize_rows(&mut out);
    out
}

fn unit_query(q: &[f64]) -> Result<Vec<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("query has non-finite entries".into()));
    }
    if n == 0.0 {
        return Err(Error::ZeroVector("<query>".into()));
    }
    Ok(q.iter().map(|v| v / n).collect())
}

fn hits(space: &EmbeddingSpace, ranked: Vec<(usize, f64)>) -> Vec<Hit> {
    ranked
        .into_iter()
        .map(|(index, score)| Hit { index, token: space.token(index).to_string(), score })
        .collect()
}

/// Exact cosine top-`k` of `query` against every row of `space`.
pub fn cosine_topk(query: &[f64], space: &EmbeddingSpace, k: usize) -> Result<Vec<Hit>> {
    if query.len() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), actual: query.len() });
    }
    let q = unit_query(query)?;
    let t = unit_rows(space.vectors());
    let scores: Vec<f64> = (0..t.nrows())
        .map(|i| t.row(i).iter().zip(&q).map(|(a, b)| a * b).sum())
        .collect();
    Ok(hits(space, top_k(&scores, k)))
}

/// Cached CSLS state for one (source, target, map) triple.
#[derive(Debug, Clone)]
pub struct CslsIndex {
    target_unit: DMatrix<f64>,
    /// `r_S(t)` for every target row.
    target_penalty: Vec<f64>,
    k_neighbors: usize,
    map_version: Option<u64>,
}

impl CslsIndex {
    pub fn build(
        source: &EmbeddingSpace,
        target: &EmbeddingSpace,
        map: &LinearMap,
        config: CslsConfig,
    ) -> Result<Self> {
        let mapped = map.map_space(source)?;
        if mapped.ncols() != target.dim() {
            return Err(Error::DimensionMismatch { expected: target.dim(), actual: mapped.ncols() });
        }
        let mut idx = Self::from_mapped(&mapped, target.vectors(), config.k_neighbors)?;
        idx.map_version = Some(map.version());
        Ok(idx)
    }

    /// Builds the index from source rows already carried into the target space.
    pub fn from_mapped(mapped_source: &DMatrix<f64>, target: &DMatrix<f64>, k_neighbors: usize) -> Result<Self> {
        if k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be at least 1".into()));
        }
        if k_neighbors > target.nrows() || k_neighbors > mapped_source.nrows() {
            return Err(Error::InvalidConfig(format!(
                "k_neighbors {k_neighbors} exceeds vocabulary size ({} source, {} target)",
                mapped_source.nrows(),
                target.nrows()
            )));
        }
        let target_unit = unit_rows(target);
        let source_unit = unit_rows(mapped_source);
        let target_penalty = mean_neighbour_similarity(&target_unit, &source_unit, k_neighbors);
        Ok(Self { target_unit, target_penalty, k_neighbors, map_version: None })
    }

    pub fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    pub fn target_penalty(&self) -> &[f64] {
        &self.target_penalty
    }

    /// Fails if `map` changed since this index was built.
    pub fn check_fresh(&self, map: &LinearMap) -> Result<()> {
        match self.map_version {
            Some(v) if v != map.version() => Err(Error::StaleCache { cached: v, current: map.version() }),
            _ => Ok(()),
        }
    }

    /// CSLS scores of one mapped query against every target row.
    pub fn scores_mapped(&self, mapped_query: &[f64]) -> Result<Vec<f64>> {
        let q = unit_query(mapped_query)?;
        let mut cos: Vec<f64> = (0..self.target_unit.nrows())
            .map(|i| self.target_unit.row(i).iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        let mut tmp = cos.clone();
        let r_t = mean_top_k(&mut tmp, self.k_neighbors);
        for (c, r_s) in cos.iter_mut().zip(&self.target_penalty) {
            *c = 2.0 * *c - r_t - r_s;
        }
        Ok(cos)
    }

    /// Top-`k` CSLS neighbours for many mapped queries at once.
    pub fn topk_mapped_batch(&self, mapped_queries: &DMatrix<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
        let q = unit_rows(mapped_queries);
        for_each_score_row(&q, &self.target_unit, |_, row| {
            let mut tmp = row.to_vec();
            let r_t = mean_top_k(&mut tmp, self.k_neighbors);
            for (c, r_s) in row.iter_mut().zip(&self.target_penalty) {
                *c = 2.0 * *c - r_t - r_s;
            }
            top_k(row, k)
        })
    }
}

/// CSLS top-`k` of one source-space `query`, mapped through `map`.
pub fn csls_topk(
    query: &[f64],
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &LinearMap,
    config: CslsConfig,
    k: usize,
) -> Result<Vec<Hit>> {
    let index = CslsIndex::build(source, target, map, config)?;
    let mapped = map.apply(query)?;
    let scores = index.scores_mapped(&mapped)?;
    Ok(hits(target, top_k(&scores, k)))
}

/// Maps source-space queries through `W` and retrieves target rows, under either metric.
#[derive(Debug, Clone)]
pub struct Retriever<'a> {
    target: &'a EmbeddingSpace,
    map: &'a LinearMap,
    metric: Metric,
    target_unit: DMatrix<f64>,
    csls: Option<CslsIndex>,
}

impl<'a> Retriever<'a> {
    /// `source` is the aligned source space used for the CSLS target penalty; it is
    /// ignored under cosine.
    pub fn new(
        source: &EmbeddingSpace,
        target: &'a EmbeddingSpace,
        map: &'a LinearMap,
        metric: Metric,
    ) -> Result<Self> {
        if map.target_dim() != target.dim() {
            return Err(Error::DimensionMismatch { expected: target.dim(), actual: map.target_dim() });
        }
        let csls = match metric {
            Metric::Cosine => None,
            Metric::Csls { k_neighbors } => Some(CslsIndex::build(source, target, map, CslsConfig { k_neighbors })?),
        };
        Ok(Self { target, map, metric, target_unit: unit_rows(target.vectors()), csls })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn target(&self) -> &EmbeddingSpace {
        self.target
    }

    /// Ranked target rows for each source-space query row.
    pub fn retrieve(&self, queries: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
        let mapped = self.map.apply_rows(queries)?;
        for i in 0..mapped.nrows() {
            if mapped.row(i).norm() == 0.0 {
                return Err(Error::ZeroVector(format!("<query {i}>")));
            }
        }
        match &self.csls {
            Some(idx) => {
                idx.check_fresh(self.map)?;
                Ok(idx.topk_mapped_batch(&mapped, k))
            }
            None => {
                let q = unit_rows(&mapped);
                Ok(for_each_score_row(&q, &self.target_unit, |_, row| top_k(row, k)))
            }
        }
    }

    pub fn retrieve_tokens(&self, queries: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<Hit>>> {
        Ok(self.retrieve(queries, k)?.into_iter().map(|r| hits(self.target, r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HubStats {
    /// How often each target row appears in some query's top-`k`.
    pub counts: Vec<usize>,
    /// Largest count divided by the number of queries.
    pub max_fraction: f64,
}

/// Hub occupancy of `space` for queries already expressed in the target space.
/// Under CSLS the queries themselves form the mapped source set.
pub fn hub_occupancy(queries: &DMatrix<f64>, space: &EmbeddingSpace, k: usize, metric: Metric) -> Result<HubStats> {
    if queries.nrows() == 0 {
        return Err(Error::Empty("no queries".into()));
    }
    if queries.ncols() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), actual: queries.ncols() });
    }
    let ranked = match metric {
        Metric::Cosine => {
            let q = unit_rows(queries);
            let t = unit_rows(space.vectors());
            for_each_score_row(&q, &t, |_, row| top_k(row, k))
        }
        Metric::Csls { k_neighbors } => {
            CslsIndex::from_mapped(queries, space.vectors(), k_neighbors)?.topk_mapped_batch(queries, k)
        }
    };
    let mut counts = vec![0usize; space.len()];
    for r in &ranked {
        for (i, _) in r {
            counts[*i] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    Ok(HubStats { max_fraction: max as f64 / queries.nrows() as f64, counts })
}
