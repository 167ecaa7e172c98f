//! C interface to `crossalign`.
//!
//! Objects are opaque handles created by `*_load`/`*_new` style functions and
//! released with the matching `*_free`. Every fallible function returns a
//! `CaStatus`; on failure `ca_last_error_message` describes the error for the
//! calling thread. Matrices cross the boundary row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use crossalign::adversarial::{train_adversarial, AdversarialConfig, Sampling};
use crossalign::mapping::{load_map, save_map, LinearMap};
use crossalign::nalgebra::DMatrix;
use crossalign::refine::{refine, solve_supervised, RefineConfig};
use crossalign::retrieval::{Metric, Retriever};
use crossalign::store::{
    attach_frequencies, load_dictionary, load_embeddings, load_frequencies, save_embeddings, unit_normalize,
    BilingualDictionary, EmbeddingSpace,
};
use crossalign::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    UnknownToken = 6,
    Empty = 7,
    Diverged = 8,
    Internal = 9,
}

pub struct CaSpace {
    space: EmbeddingSpace,
    tokens: Vec<CString>,
}

pub struct CaMap {
    map: LinearMap,
}

pub struct CaDictionary {
    dict: BilingualDictionary,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CaAdversarialConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub dis_steps: usize,
    pub lr_discriminator: f64,
    pub lr_mapping: f64,
    pub label_smoothing: f64,
    pub input_dropout: f64,
    pub ortho_beta: f64,
    pub hidden: usize,
    /// Non-zero samples batches by word frequency.
    pub frequency_sampling: u8,
    pub selection_top: usize,
    pub csls_k: usize,
    pub seed: u64,
}

impl From<&AdversarialConfig> for CaAdversarialConfig {
    fn from(c: &AdversarialConfig) -> Self {
        Self {
            epochs: c.epochs,
            steps_per_epoch: c.steps_per_epoch,
            batch_size: c.batch_size,
            dis_steps: c.dis_steps,
            lr_discriminator: c.lr_discriminator,
            lr_mapping: c.lr_mapping,
            label_smoothing: c.label_smoothing,
            input_dropout: c.input_dropout,
            ortho_beta: c.ortho_beta,
            hidden: c.hidden,
            frequency_sampling: u8::from(c.sampling == Sampling::Frequency),
            selection_top: c.selection_top,
            csls_k: c.csls_k,
            seed: c.seed,
        }
    }
}

impl From<&CaAdversarialConfig> for AdversarialConfig {
    fn from(c: &CaAdversarialConfig) -> Self {
        Self {
            epochs: c.epochs,
            steps_per_epoch: c.steps_per_epoch,
            batch_size: c.batch_size,
            dis_steps: c.dis_steps,
            lr_discriminator: c.lr_discriminator,
            lr_mapping: c.lr_mapping,
            label_smoothing: c.label_smoothing,
            input_dropout: c.input_dropout,
            ortho_beta: c.ortho_beta,
            hidden: c.hidden,
            sampling: if c.frequency_sampling != 0 { Sampling::Frequency } else { Sampling::Uniform },
            selection_top: c.selection_top,
            csls_k: c.csls_k,
            seed: c.seed,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CaRefineConfig {
    pub dict_max_rank: usize,
    pub csls_k: usize,
    pub iterations: usize,
    /// Non-zero for the orthogonal solve.
    pub orthogonal: u8,
}

impl From<&CaRefineConfig> for RefineConfig {
    fn from(c: &CaRefineConfig) -> Self {
        Self { dict_max_rank: c.dict_max_rank, csls_k: c.csls_k, iterations: c.iterations, orthogonal: c.orthogonal != 0 }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CaStatus {
    match e {
        Error::Io { .. } => CaStatus::Io,
        Error::Parse { .. } | Error::Json(_) => CaStatus::Parse,
        Error::DimensionMismatch { .. } => CaStatus::DimensionMismatch,
        Error::UnknownToken(_) => CaStatus::UnknownToken,
        Error::Empty(_) | Error::EmptyDictionary { .. } => CaStatus::Empty,
        Error::Diverged { .. } => CaStatus::Diverged,
        Error::Stage { source, .. } => status_of(source),
        _ => CaStatus::InvalidArgument,
    }
}

struct Fail(CaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CaStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(CaStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn wrap_space(space: EmbeddingSpace) -> CaSpace {
    let tokens = space.vocab().iter().map(|t| CString::new(t.as_str()).unwrap_or_default()).collect();
    CaSpace { space, tokens }
}

/// Message describing the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a space in text embedding format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_space_load(path: *const c_char, out: *mut *mut CaSpace) -> CaStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let space = load_embeddings(path, None)?;
        unsafe { put(out, wrap_space(space)) }
    })
}

/// Builds a space from `n` NUL-terminated tokens and an `n x dim` row-major array.
///
/// # Safety
/// `tokens` must hold `n` valid strings and `data` `n * dim` values.
#[no_mangle]
pub unsafe extern "C" fn ca_space_from_rows(
    tokens: *const *const c_char,
    data: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut CaSpace,
) -> CaStatus {
    guard(|| {
        if n > 0 && (tokens.is_null() || data.is_null()) {
            return Err(null("tokens or data"));
        }
        let mut vocab = Vec::with_capacity(n);
        for i in 0..n {
            let t = unsafe { *tokens.add(i) };
            if t.is_null() {
                return Err(null("token"));
            }
            let s = unsafe { CStr::from_ptr(t) }
                .to_str()
                .map_err(|_| Fail(CaStatus::InvalidArgument, "token is not UTF-8".into()))?;
            vocab.push(s.to_string());
        }
        let values = if n == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(data, n * dim) } };
        let space = EmbeddingSpace::new(vocab, DMatrix::from_row_slice(n, dim, values))?;
        unsafe { put(out, wrap_space(space)) }
    })
}

/// Attaches word counts from a `token count` file.
///
/// # Safety
/// `space` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ca_space_attach_frequencies(space: *mut CaSpace, path: *const c_char) -> CaStatus {
    guard(|| {
        let s = unsafe { space.as_mut() }.ok_or_else(|| null("space"))?;
        let table = load_frequencies(unsafe { path_arg(path) }?)?;
        s.space = attach_frequencies(s.space.clone(), &table)?;
        Ok(())
    })
}

/// # Safety
/// `space` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ca_space_save(space: *const CaSpace, path: *const c_char) -> CaStatus {
    guard(|| {
        let s = unsafe { deref(space, "space") }?;
        save_embeddings(&s.space, unsafe { path_arg(path) }?)?;
        Ok(())
    })
}

/// Writes a new, unit-normalized copy of `space` to `out`.
///
/// # Safety
/// `space` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_space_normalize(space: *const CaSpace, out: *mut *mut CaSpace) -> CaStatus {
    guard(|| {
        let s = unsafe { deref(space, "space") }?;
        let normalized = unit_normalize(&s.space)?;
        unsafe { put(out, wrap_space(normalized)) }
    })
}

/// Number of words, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ca_space_len(space: *const CaSpace) -> usize {
    unsafe { space.as_ref() }.map_or(0, |s| s.space.len())
}

/// Vector dimension, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ca_space_dim(space: *const CaSpace) -> usize {
    unsafe { space.as_ref() }.map_or(0, |s| s.space.dim())
}

/// Token of `row`, owned by the space; null when out of range.
///
/// # Safety
/// `space` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ca_space_token(space: *const CaSpace, row: usize) -> *const c_char {
    unsafe { space.as_ref() }.and_then(|s| s.tokens.get(row)).map_or(ptr::null(), |t| t.as_ptr())
}

/// Row of `token`, written to `out_row`.
///
/// # Safety
/// `space` must come from this library, `token` be NUL-terminated and `out_row` valid.
#[no_mangle]
pub unsafe extern "C" fn ca_space_index_of(space: *const CaSpace, token: *const c_char, out_row: *mut usize) -> CaStatus {
    guard(|| {
        let s = unsafe { deref(space, "space") }?;
        if token.is_null() || out_row.is_null() {
            return Err(null("token or output"));
        }
        let t = unsafe { CStr::from_ptr(token) }.to_string_lossy();
        let row = s.space.index_of(&t).ok_or_else(|| Error::UnknownToken(t.to_string()))?;
        unsafe { *out_row = row };
        Ok(())
    })
}

/// # Safety
/// `space` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_space_free(space: *mut CaSpace) {
    if !space.is_null() {
        drop(unsafe { Box::from_raw(space) });
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_map_load(path: *const c_char, out: *mut *mut CaMap) -> CaStatus {
    guard(|| {
        let map = load_map(unsafe { path_arg(path) }?)?;
        unsafe { put(out, CaMap { map }) }
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_map_identity(dim: usize, out: *mut *mut CaMap) -> CaStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(CaStatus::InvalidArgument, "dimension must be positive".into()));
        }
        unsafe { put(out, CaMap { map: LinearMap::identity(dim) }) }
    })
}

/// # Safety
/// `map` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ca_map_save(map: *const CaMap, path: *const c_char) -> CaStatus {
    guard(|| {
        let m = unsafe { deref(map, "map") }?;
        save_map(&m.map, unsafe { path_arg(path) }?)?;
        Ok(())
    })
}

/// Output (`rows`) and input (`cols`) dimensions of the map.
///
/// # Safety
/// `map` must come from this library; `rows` and `cols` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ca_map_dims(map: *const CaMap, rows: *mut usize, cols: *mut usize) -> CaStatus {
    guard(|| {
        let m = unsafe { deref(map, "map") }?;
        if rows.is_null() || cols.is_null() {
            return Err(null("output pointer"));
        }
        unsafe {
            *rows = m.map.target_dim();
            *cols = m.map.source_dim();
        }
        Ok(())
    })
}

/// Copies the matrix row-major into `buf`, which must hold `rows * cols` values.
///
/// # Safety
/// `map` must come from this library; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ca_map_copy_matrix(map: *const CaMap, buf: *mut f64, len: usize) -> CaStatus {
    guard(|| {
        let m = unsafe { deref(map, "map") }?.map.matrix();
        let need = m.nrows() * m.ncols();
        if len < need {
            return Err(Error::DimensionMismatch { expected: need, actual: len }.into());
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let out = unsafe { std::slice::from_raw_parts_mut(buf, need) };
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `map` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_map_free(map: *mut CaMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Loads a `source target` pair-per-line dictionary.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_dictionary_load(path: *const c_char, out: *mut *mut CaDictionary) -> CaStatus {
    guard(|| {
        let dict = load_dictionary(unsafe { path_arg(path) }?)?;
        unsafe { put(out, CaDictionary { dict }) }
    })
}

/// Number of pairs, or 0 for a null handle.
///
/// # Safety
/// `dict` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ca_dictionary_len(dict: *const CaDictionary) -> usize {
    unsafe { dict.as_ref() }.map_or(0, |d| d.dict.len())
}

/// # Safety
/// `dict` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_dictionary_free(dict: *mut CaDictionary) {
    if !dict.is_null() {
        drop(unsafe { Box::from_raw(dict) });
    }
}

/// Library defaults: learning rates 1e-3 and orthogonality beta 1e-3.
#[no_mangle]
pub extern "C" fn ca_adversarial_config_default() -> CaAdversarialConfig {
    (&AdversarialConfig::default()).into()
}

/// Settings that converge on vocabularies of a few thousand words.
#[no_mangle]
pub extern "C" fn ca_adversarial_config_desk_scale() -> CaAdversarialConfig {
    (&AdversarialConfig::desk_scale()).into()
}

#[no_mangle]
pub extern "C" fn ca_refine_config_default() -> CaRefineConfig {
    let d = RefineConfig::default();
    CaRefineConfig { dict_max_rank: d.dict_max_rank, csls_k: d.csls_k, iterations: d.iterations, orthogonal: u8::from(d.orthogonal) }
}

/// Adversarial training; writes the selected map to `out`. On divergence the
/// last finite checkpoint is still written and `CA_STATUS_DIVERGED` returned.
///
/// # Safety
/// Handles must come from this library; `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ca_align_adversarial(
    source: *const CaSpace,
    target: *const CaSpace,
    config: *const CaAdversarialConfig,
    out: *mut *mut CaMap,
) -> CaStatus {
    guard(|| {
        let (s, t) = (unsafe { deref(source, "source") }?, unsafe { deref(target, "target") }?);
        let cfg: AdversarialConfig = unsafe { deref(config, "config") }?.into();
        if out.is_null() {
            return Err(null("output pointer"));
        }
        match train_adversarial(&s.space, &t.space, &cfg) {
            Ok(r) => unsafe { put(out, CaMap { map: r.map }) },
            Err(Error::Diverged { epoch, checkpoint }) => {
                unsafe { put(out, CaMap { map: (*checkpoint).clone() }) }?;
                Err(Error::Diverged { epoch, checkpoint }.into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// # Safety
/// Handles must come from this library; `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ca_refine(
    source: *const CaSpace,
    target: *const CaSpace,
    initial: *const CaMap,
    config: *const CaRefineConfig,
    out: *mut *mut CaMap,
) -> CaStatus {
    guard(|| {
        let (s, t) = (unsafe { deref(source, "source") }?, unsafe { deref(target, "target") }?);
        let w0 = unsafe { deref(initial, "initial map") }?;
        let cfg: RefineConfig = unsafe { deref(config, "config") }?.into();
        let r = refine(&s.space, &t.space, &w0.map, &cfg)?;
        unsafe { put(out, CaMap { map: r.map }) }
    })
}

/// Solves the map from a known dictionary; `orthogonal` non-zero for Procrustes.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ca_solve_supervised(
    source: *const CaSpace,
    target: *const CaSpace,
    dict: *const CaDictionary,
    orthogonal: u8,
    out: *mut *mut CaMap,
) -> CaStatus {
    guard(|| {
        let (s, t) = (unsafe { deref(source, "source") }?, unsafe { deref(target, "target") }?);
        let d = unsafe { deref(dict, "dictionary") }?;
        let sol = solve_supervised(&s.space, &t.space, &d.dict, orthogonal != 0)?;
        unsafe { put(out, CaMap { map: sol.map }) }
    })
}

/// CSLS top-`k` target rows for source row `query_row`. Writes up to `k`
/// indices and scores and the number written to `out_count`. With
/// `k_neighbors` 0 plain cosine is used.
///
/// # Safety
/// Handles must come from this library; the output arrays must hold `k` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ca_csls_topk(
    source: *const CaSpace,
    target: *const CaSpace,
    map: *const CaMap,
    query_row: usize,
    k_neighbors: usize,
    k: usize,
    out_indices: *mut usize,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> CaStatus {
    guard(|| {
        let (s, t) = (unsafe { deref(source, "source") }?, unsafe { deref(target, "target") }?);
        let m = unsafe { deref(map, "map") }?;
        if out_indices.is_null() || out_scores.is_null() || out_count.is_null() {
            return Err(null("output pointer"));
        }
        if query_row >= s.space.len() {
            return Err(Fail(CaStatus::InvalidArgument, format!("query row {query_row} out of range")));
        }
        let metric = if k_neighbors == 0 { Metric::Cosine } else { Metric::Csls { k_neighbors } };
        let retriever = Retriever::new(&s.space, &t.space, &m.map, metric)?;
        let query = s.space.vectors().rows(query_row, 1).into_owned();
        let hits = retriever.retrieve(&query, k)?.pop().unwrap_or_default();
        for (i, (idx, score)) in hits.iter().enumerate() {
            unsafe {
                *out_indices.add(i) = *idx;
                *out_scores.add(i) = *score;
            }
        }
        unsafe { *out_count = hits.len() };
        Ok(())
    })
}
