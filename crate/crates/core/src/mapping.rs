//! The linear map `W` carrying source rows into the target space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::{fmt_value, EmbeddingSpace};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A `d2 x d1` matrix. Every construction or mutation takes a fresh version
/// stamp, so caches derived from a map can detect that they are stale.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    version: u64,
}

impl PartialEq for LinearMap {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("linear map has non-finite entries".into()));
        }
        Ok(Self { matrix, version: next_version() })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim), version: next_version() }
    }

    /// A seeded random matrix with orthonormal rows (or columns when `d2 > d1`).
    pub fn random_orthonormal(d2: usize, d1: usize, seed: u64) -> Self {
        Self { matrix: random_orthonormal(d2, d1, seed), version: next_version() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Applies `f` to the matrix and restamps the version.
    pub fn update(&mut self, f: impl FnOnce(&mut DMatrix<f64>)) {
        f(&mut self.matrix);
        self.version = next_version();
    }

    /// `W <- (1 + beta) W - beta (W W^T) W`, pulling `W` toward the orthogonal manifold.
    pub fn orthogonalize_step(&mut self, beta: f64) {
        if beta <= 0.0 {
            return;
        }
        self.update(|w| {
            let wwt_w = (&*w * w.transpose()) * &*w;
            *w *= 1.0 + beta;
            *w -= wwt_w * beta;
        });
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.matrix.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Maps a single source vector.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.source_dim() {
            return Err(Error::DimensionMismatch { expected: self.source_dim(), actual: v.len() });
        }
        let x = nalgebra::DVector::from_column_slice(v);
        Ok((&self.matrix * x).iter().copied().collect())
    }

    /// Maps every row of `rows` (shape `n x d1`), returning `n x d2`.
    pub fn apply_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.source_dim() {
            return Err(Error::DimensionMismatch { expected: self.source_dim(), actual: rows.ncols() });
        }
        Ok(rows * self.matrix.transpose())
    }

    pub fn map_space(&self, space: &EmbeddingSpace) -> Result<DMatrix<f64>> {
        self.apply_rows(space.vectors())
    }
}

pub(crate) fn random_orthonormal(d2: usize, d1: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tall, short) = (d2.max(d1), d2.min(d1));
    let g = DMatrix::from_fn(tall, short, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity of QR so the result is Haar-distributed.
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if d2 >= d1 {
        q
    } else {
        q.transpose()
    }
}

pub fn load_map(path: impl AsRef<Path>) -> Result<LinearMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 1, "header must be \"<d2> <d1>\""))?;
    let [d2, d1] = dims[..] else {
        return Err(Error::parse(path, 1, "header must be \"<d2> <d1>\""));
    };
    let mut data = Vec::with_capacity(d2 * d1);
    let mut rows = 0;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let start = data.len();
        for p in line.split_whitespace() {
            let v: f64 = p.parse().map_err(|_| Error::parse(path, n + 2, format!("bad value {p:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, n + 2, "non-finite value"));
            }
            data.push(v);
        }
        if data.len() - start != d1 {
            return Err(Error::parse(path, n + 2, format!("expected {d1} values, found {}", data.len() - start)));
        }
        rows += 1;
    }
    if rows != d2 {
        return Err(Error::parse(path, 1, format!("header declares {d2} rows, file has {rows}")));
    }
    LinearMap::new(DMatrix::from_row_slice(d2, d1, &data))
}

pub fn save_map(map: &LinearMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let m = &map.matrix;
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(io)?;
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| fmt_value(*v)).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}
