//! Closed-form solves for `W` from paired rows, and the iterative refinement
//! that re-solves `W` on a dictionary of mutual CSLS nearest neighbours.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mapping::LinearMap;
use crate::retrieval::{for_each_score_row, mean_neighbour_similarity, top_k};
use crate::store::{normalize_rows, BilingualDictionary, EmbeddingSpace};

/// Ridge added to `X X^T` in the unconstrained solve.
pub const LSTSQ_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineConfig {
    /// Only the `dict_max_rank` most frequent words on each side are dictionary candidates.
    pub dict_max_rank: usize,
    pub csls_k: usize,
    pub iterations: usize,
    pub orthogonal: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { dict_max_rank: 10_000, csls_k: 10, iterations: 5, orthogonal: true }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub map: LinearMap,
    /// Fewer pairs than source dimensions: the unconstrained problem has many minimizers.
    pub underdetermined: bool,
}

/// Minimizes `||W X - Y||^2` for column-paired `X` (`d1 x k`) and `Y` (`d2 x k`).
///
/// With `orthogonal`, returns the Procrustes solution `U V^T` from the SVD of
/// `Y X^T`. Otherwise solves the ridge-regularized normal equations, which for
/// underdetermined inputs approaches the minimum-norm solution.
pub fn solve_mapping(x: &DMatrix<f64>, y: &DMatrix<f64>, orthogonal: bool) -> Result<Solution> {
    let (d1, k) = x.shape();
    let d2 = y.nrows();
    if k == 0 {
        return Err(Error::Empty("no paired columns".into()));
    }
    if y.ncols() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: y.ncols() });
    }
    let underdetermined = k < d1;
    if orthogonal {
        if d1 != d2 {
            return Err(Error::InvalidConfig(format!(
                "orthogonal solve needs equal dimensions, got d1={d1}, d2={d2}"
            )));
        }
        let m = y * x.transpose();
        let svd = m.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Err(Error::InvalidConfig("SVD did not converge".into()));
        };
        return Ok(Solution { map: LinearMap::new(u * v_t)?, underdetermined });
    }
    let mut gram = x * x.transpose();
    for i in 0..d1 {
        gram[(i, i)] += LSTSQ_RIDGE;
    }
    let rhs = x * y.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("normal equations are not positive definite".into()))?;
    let w_t = chol.solve(&rhs);
    Ok(Solution { map: LinearMap::new(w_t.transpose())?, underdetermined })
}

/// Stacks the listed rows of both spaces as paired columns.
pub(crate) fn paired_columns(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    pairs: &[(usize, usize)],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let s: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let t: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    (source.vectors().select_rows(&s).transpose(), target.vectors().select_rows(&t).transpose())
}

/// Row-index pairs `(s, t)` such that `t` is the CSLS-best target for `W s`
/// among the frequent targets and `s` is the CSLS-best source for `t` among the
/// frequent sources. Neighbourhood penalties are computed over the full spaces.
pub fn mutual_nn_pairs(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &LinearMap,
    config: &RefineConfig,
) -> Result<Vec<(usize, usize)>> {
    let k = config.csls_k;
    if k == 0 || k > source.len() || k > target.len() {
        return Err(Error::InvalidConfig(format!(
            "csls_k {k} must be in 1..={}",
            source.len().min(target.len())
        )));
    }
    let mut mapped = map.map_space(source)?;
    if mapped.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), actual: mapped.ncols() });
    }
    normalize_rows(&mut mapped);
    let mut tgt = target.vectors().clone();
    normalize_rows(&mut tgt);

    let src_penalty = mean_neighbour_similarity(&mapped, &tgt, k);
    let tgt_penalty = mean_neighbour_similarity(&tgt, &mapped, k);

    let mut src_cand = source.frequency_order();
    src_cand.truncate(config.dict_max_rank);
    src_cand.sort_unstable();
    let mut tgt_cand = target.frequency_order();
    tgt_cand.truncate(config.dict_max_rank);
    tgt_cand.sort_unstable();

    let s_rows = mapped.select_rows(&src_cand);
    let t_rows = tgt.select_rows(&tgt_cand);
    let t_pen: Vec<f64> = tgt_cand.iter().map(|&j| tgt_penalty[j]).collect();
    let s_pen: Vec<f64> = src_cand.iter().map(|&i| src_penalty[i]).collect();

    // Candidates are sorted by row index, so ties in top_k resolve to the lowest row.
    let forward: Vec<usize> = for_each_score_row(&s_rows, &t_rows, |_, row| {
        for (c, p) in row.iter_mut().zip(&t_pen) {
            *c = 2.0 * *c - p;
        }
        top_k(row, 1)[0].0
    });
    let backward: Vec<usize> = for_each_score_row(&t_rows, &s_rows, |_, row| {
        for (c, p) in row.iter_mut().zip(&s_pen) {
            *c = 2.0 * *c - p;
        }
        top_k(row, 1)[0].0
    });

    let mut pairs: Vec<(usize, usize)> = forward
        .iter()
        .enumerate()
        .filter(|&(si, &tj)| backward[tj] == si)
        .map(|(si, &tj)| (src_cand[si], tgt_cand[tj]))
        .collect();
    // Most frequent source words first.
    let rank: std::collections::HashMap<usize, usize> =
        source.frequency_order().into_iter().enumerate().map(|(r, i)| (i, r)).collect();
    pairs.sort_by_key(|p| rank[&p.0]);
    Ok(pairs)
}

pub fn build_synthetic_dictionary(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &LinearMap,
    config: &RefineConfig,
) -> Result<BilingualDictionary> {
    let pairs = mutual_nn_pairs(source, target, map, config)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDictionary { iteration: 0 });
    }
    Ok(BilingualDictionary::from_pairs(
        pairs.iter().map(|&(s, t)| (source.token(s), target.token(t))),
    ))
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub map: LinearMap,
    pub dictionary_sizes: Vec<usize>,
    pub dictionary: BilingualDictionary,
}

/// Alternates dictionary induction and closed-form solve `config.iterations` times.
pub fn refine(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    initial: &LinearMap,
    config: &RefineConfig,
) -> Result<RefineResult> {
    let mut map = initial.clone();
    let mut sizes = Vec::with_capacity(config.iterations);
    let mut dictionary = BilingualDictionary::default();
    for iteration in 0..config.iterations {
        let pairs = mutual_nn_pairs(source, target, &map, config)?;
        if pairs.is_empty() {
            return Err(Error::EmptyDictionary { iteration });
        }
        let (x, y) = paired_columns(source, target, &pairs);
        map = solve_mapping(&x, &y, config.orthogonal)?.map;
        sizes.push(pairs.len());
        dictionary = BilingualDictionary::from_pairs(
            pairs.iter().map(|&(s, t)| (source.token(s), target.token(t))),
        );
    }
    Ok(RefineResult { map, dictionary_sizes: sizes, dictionary })
}

/// Solves `W` from a known dictionary.
pub fn solve_supervised(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    dictionary: &BilingualDictionary,
    orthogonal: bool,
) -> Result<Solution> {
    if dictionary.is_empty() {
        return Err(Error::Empty("dictionary".into()));
    }
    let pairs = dictionary
        .pairs()
        .iter()
        .map(|(s, t)| {
            let si = source.index_of(s).ok_or_else(|| Error::UnknownToken(s.clone()))?;
            let ti = target.index_of(t).ok_or_else(|| Error::UnknownToken(t.clone()))?;
            Ok((si, ti))
        })
        .collect::<Result<Vec<_>>>()?;
    let (x, y) = paired_columns(source, target, &pairs);
    solve_mapping(&x, &y, orthogonal)
}
