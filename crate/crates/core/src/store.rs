//! Embedding spaces, bilingual dictionaries and their text file formats.
//!
//! Embedding file: a `<rows> <dim>` header followed by one `<token> <v1> ... <vdim>`
//! line per row. Dictionary file: one `<source> <target>` pair per line.
//! Frequencies file: one `<token> <count>` pair per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on row norms for a space flagged as unit-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// An ordered vocabulary with one dense row vector per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DMatrix<f64>,
    frequencies: Option<Vec<u64>>,
    unit_normalized: bool,
}

impl EmbeddingSpace {
    pub fn new(vocab: Vec<String>, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != vocab.len() {
            return Err(Error::DimensionMismatch { expected: vocab.len(), actual: vectors.nrows() });
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::DuplicateToken(tok.clone()));
            }
        }
        for i in 0..vectors.nrows() {
            if vectors.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self { vocab, index, vectors, frequencies: None, unit_normalized: false })
    }

    /// Builds a space from row slices; every row must have length `dim`.
    pub fn from_rows(vocab: Vec<String>, rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
            }
        }
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(vocab, m)
    }

    pub fn with_frequencies(mut self, freqs: Vec<u64>) -> Result<Self> {
        if freqs.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: freqs.len() });
        }
        self.frequencies = Some(freqs);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token(&self, row: usize) -> &str {
        &self.vocab[row]
    }

    /// Rows are tokens, columns are coordinates.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.vectors.row(i).iter().copied().collect()
    }

    pub fn frequencies(&self) -> Option<&[u64]> {
        self.frequencies.as_deref()
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row indices from most to least frequent. Without frequencies the row
    /// order is taken as the frequency rank. Ties keep row order.
    pub fn frequency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(f) = &self.frequencies {
            order.sort_by(|&a, &b| f[b].cmp(&f[a]).then(a.cmp(&b)));
        }
        order
    }

    /// Keeps only the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let vocab = rows.iter().map(|&i| self.vocab[i].clone()).collect();
        let m = self.vectors.select_rows(rows);
        let mut out = Self::new(vocab, m)?;
        out.frequencies = self.frequencies.as_ref().map(|f| rows.iter().map(|&i| f[i]).collect());
        out.unit_normalized = self.unit_normalized;
        Ok(out)
    }

    /// Checks the unit-norm flag against the data.
    pub fn validate(&self) -> Result<()> {
        if self.unit_normalized {
            for i in 0..self.len() {
                let n = self.vectors.row(i).norm();
                if n != 0.0 && (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "row {:?} has norm {n} but space is flagged unit-normalized",
                        self.vocab[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Returns a copy with every row scaled to unit Euclidean norm.
pub fn unit_normalize(space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    let mut out = space.clone();
    for i in 0..out.len() {
        let n = out.vectors.row(i).norm();
        if n == 0.0 {
            return Err(Error::ZeroVector(out.vocab[i].clone()));
        }
        out.vectors.row_mut(i).unscale_mut(n);
    }
    out.unit_normalized = true;
    Ok(out)
}

/// Row-normalizes a matrix in place; zero rows stay zero.
pub(crate) fn normalize_rows(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        let n = m.row(i).norm();
        if n > 0.0 {
            m.row_mut(i).unscale_mut(n);
        }
    }
}

pub(crate) fn fmt_value(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v:?}")
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let mut fields = header.split_whitespace();
    let parse_count = |f: Option<&str>, what: &str| -> Result<usize> {
        f.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, format!("header must be \"<rows> <dim>\", bad {what}")))
    };
    let rows = parse_count(fields.next(), "row count")?;
    let dim = parse_count(fields.next(), "dimension")?;
    if fields.next().is_some() {
        return Err(Error::parse(path, 1, "header has more than two fields"));
    }
    if let Some(exp) = expected_dim {
        if exp != dim {
            return Err(Error::parse(path, 1, format!("expected dimension {exp}, header says {dim}")));
        }
    }

    let mut vocab = Vec::with_capacity(rows);
    let mut seen = HashSet::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts.next().unwrap_or_default().to_string();
        let start = data.len();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {p:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value {p:?}")));
            }
            data.push(v);
        }
        let got = data.len() - start;
        if got != dim {
            return Err(Error::parse(path, lineno, format!("expected {dim} values, found {got}")));
        }
        if !seen.insert(tok.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate token {tok:?}")));
        }
        vocab.push(tok);
    }
    if vocab.len() != rows {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {rows} rows, file has {}", vocab.len()),
        ));
    }
    let m = DMatrix::from_row_slice(rows, dim, &data);
    EmbeddingSpace::new(vocab, m)
}

pub fn save_embeddings(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(space, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_embeddings(space: &EmbeddingSpace, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{} {}", space.len(), space.dim())?;
    for (i, tok) in space.vocab.iter().enumerate() {
        w.write_all(tok.as_bytes())?;
        for v in space.vectors.row(i).iter() {
            write!(w, " {}", fmt_value(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_frequencies(path: impl AsRef<Path>) -> Result<BTreeMap<String, u64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [tok, count] => {
                let c = count
                    .parse()
                    .map_err(|_| Error::parse(path, n + 1, format!("bad count {count:?}")))?;
                out.insert(tok.to_string(), c);
            }
            _ => return Err(Error::parse(path, n + 1, "expected \"<token> <count>\"")),
        }
    }
    Ok(out)
}

/// Attaches frequencies from a token-count table; tokens missing from the table get 0.
pub fn attach_frequencies(space: EmbeddingSpace, table: &BTreeMap<String, u64>) -> Result<EmbeddingSpace> {
    let freqs = space.vocab.iter().map(|t| table.get(t).copied().unwrap_or(0)).collect();
    space.with_frequencies(freqs)
}

pub fn save_frequencies(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Some(freqs) = space.frequencies() else {
        return Err(Error::Empty("space has no frequencies".into()));
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (tok, c) in space.vocab.iter().zip(freqs) {
        writeln!(w, "{tok} {c}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ordered, duplicate-free (source, target) token pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BilingualDictionary {
    pairs: Vec<(String, String)>,
}

impl BilingualDictionary {
    /// Builds a dictionary, dropping repeated pairs but keeping first-seen order.
    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (s, t) in pairs {
            let p = (s.into(), t.into());
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        Self { pairs: out }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Source token to its set of acceptable targets.
    pub fn translations(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (s, t) in &self.pairs {
            out.entry(s.as_str()).or_default().push(t.as_str());
        }
        out
    }

    /// Swaps the direction of every pair.
    pub fn inverted(&self) -> Self {
        Self::from_pairs(self.pairs.iter().map(|(s, t)| (t.clone(), s.clone())))
    }
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [s, t] => pairs.push((s.to_string(), t.to_string())),
            _ => {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!("expected 2 fields, found {}", fields.len()),
                ))
            }
        }
    }
    Ok(BilingualDictionary::from_pairs(pairs))
}

pub fn save_dictionary(dict: &BilingualDictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (s, t) in &dict.pairs {
        writeln!(w, "{s} {t}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
