//! C ABI over the qsynth analysis, metric, dedup and retrieval functions.
//!
//! Every fallible function returns a [`QsStatus`]; on failure the message is
//! available from [`qs_last_error`] on the same thread. Strings returned
//! through `char**` out-parameters are owned by the caller and must be
//! released with [`qs_string_free`]. Handles are released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qsynth::analyzer::{self, Whitelist};
use qsynth::dedup::{self, DedupConfig};
use qsynth::metrics;
use qsynth::retrieval::{EmbeddingProvider, EmbeddingVector, HashedBagProvider, VectorIndex};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    ParseError = 4,
    IoError = 5,
    Unsupported = 6,
    Panic = 7,
}

/// Whitelist of known framework names.
pub struct QsWhitelist(Whitelist);

/// Loaded retrieval index.
pub struct QsIndex {
    index: VectorIndex,
    hashed: Option<HashedBagProvider>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QsStatus, String);

impl Failure {
    fn new(status: QsStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(QsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(QsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(QsStatus::NullArgument, "output pointer is null"));
    }
    out.write(v);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::new(QsStatus::InvalidInput, "result contains NUL"))?;
    put(out, c.into_raw())
}

unsafe fn put_json<T: serde::Serialize>(out: *mut *mut c_char, v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string(v).map_err(|e| Failure::new(QsStatus::InvalidInput, e.to_string()))?;
    put_string(out, s)
}

fn metric<T>(r: Result<T, metrics::MetricError>) -> Result<T, Failure> {
    r.map_err(|e| Failure::new(QsStatus::InvalidInput, e.to_string()))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next qsynth call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn qs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static library version string; do not free.
#[no_mangle]
pub extern "C" fn qs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn qs_whitelist_bundled() -> *mut QsWhitelist {
    Box::into_raw(Box::new(QsWhitelist(Whitelist::bundled())))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_whitelist_load(path: *const c_char, out: *mut *mut QsWhitelist) -> QsStatus {
    guard(|| {
        let path = text(path, "path")?;
        let wl = Whitelist::load(Path::new(path)).map_err(|e| Failure::new(QsStatus::IoError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(QsWhitelist(wl))))
    })
}

/// # Safety
/// `wl` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qs_whitelist_free(wl: *mut QsWhitelist) {
    if !wl.is_null() {
        drop(Box::from_raw(wl));
    }
}

/// Quantum feature set of `code` as JSON.
///
/// # Safety
/// `code` must be a NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_extract_features(code: *const c_char, out_json: *mut *mut c_char) -> QsStatus {
    guard(|| {
        let f = analyzer::extract_features(text(code, "code")?)
            .map_err(|e| Failure::new(QsStatus::ParseError, e.to_string()))?;
        put_json(out_json, &f)
    })
}

/// Framework names used by `code` that the whitelist does not know, as a
/// JSON array.
///
/// # Safety
/// `code` must be a NUL-terminated string, `wl` a live handle and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_violations(
    code: *const c_char,
    wl: *const QsWhitelist,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let code = text(code, "code")?;
        let wl = wl
            .as_ref()
            .ok_or_else(|| Failure::new(QsStatus::NullArgument, "whitelist is null"))?;
        put_json(out_json, &analyzer::code_violations(code, &wl.0))
    })
}

/// # Safety
/// `hyp` and `reference` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_dataflow_match(hyp: *const c_char, reference: *const c_char, out: *mut f64) -> QsStatus {
    guard(|| {
        let (h, r) = (text(hyp, "hypothesis")?, text(reference, "reference")?);
        put(out, metrics::dataflow_match(h, r))
    })
}

/// All CodeBLEU components and their mean as JSON.
///
/// # Safety
/// `hyp` and `reference` must be NUL-terminated strings; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_codebleu(
    hyp: *const c_char,
    reference: *const c_char,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let (h, r) = (text(hyp, "hypothesis")?, text(reference, "reference")?);
        put_json(out_json, &metric(metrics::codebleu(h, r))?)
    })
}

/// # Safety
/// `hyp` and `reference` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_rouge_l(hyp: *const c_char, reference: *const c_char, out: *mut f64) -> QsStatus {
    guard(|| {
        let (h, r) = (text(hyp, "hypothesis")?, text(reference, "reference")?);
        put(out, metric(metrics::rouge_l(h, r))?)
    })
}

/// Exact Jaccard similarity of the two sources' token shingle sets.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_shingle_jaccard(a: *const c_char, b: *const c_char, out: *mut f64) -> QsStatus {
    guard(|| {
        let (a, b) = (text(a, "a")?, text(b, "b")?);
        put(
            out,
            dedup::jaccard(&dedup::shingle(a).shingles, &dedup::shingle(b).shingles),
        )
    })
}

#[derive(serde::Deserialize)]
struct DedupItem {
    id: String,
    code: String,
}

/// Near-duplicate removal over `[{"id": .., "code": ..}, ..]`. Writes the
/// outcome (`retained` indices, `duplicates`, `candidate_pairs`) as JSON.
///
/// # Safety
/// `items_json` must be a NUL-terminated string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_dedup(
    items_json: *const c_char,
    threshold: f64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let items: Vec<DedupItem> = serde_json::from_str(text(items_json, "items")?)
            .map_err(|e| Failure::new(QsStatus::InvalidInput, format!("items: {e}")))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Failure::new(
                QsStatus::InvalidInput,
                format!("threshold {threshold} outside [0, 1]"),
            ));
        }
        let cfg = DedupConfig { threshold, seed };
        let outcome = dedup::dedup(items.iter().map(|i| (i.id.as_str(), i.code.as_str())), &cfg);
        put_json(out_json, &outcome)
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_index_load(dir: *const c_char, out: *mut *mut QsIndex) -> QsStatus {
    guard(|| {
        let index = VectorIndex::load(Path::new(text(dir, "dir")?))
            .map_err(|e| Failure::new(QsStatus::IoError, e.to_string()))?;
        let m = index.manifest();
        let hashed = Some(HashedBagProvider {
            dim: m.dim,
            seed: m.seed,
        })
        .filter(|p| p.id() == m.provider_id);
        put(out, Box::into_raw(Box::new(QsIndex { index, hashed })))
    })
}

/// # Safety
/// `idx` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qs_index_free(idx: *mut QsIndex) {
    if !idx.is_null() {
        drop(Box::from_raw(idx));
    }
}

/// # Safety
/// `idx` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qs_index_len(idx: *const QsIndex) -> usize {
    idx.as_ref().map_or(0, |i| i.index.len())
}

/// Top-`k` hits for a text query as JSON. Only indexes built with the
/// hashed embedding provider can embed text here; others report
/// `Unsupported` and must be queried with [`qs_index_query_vector`].
///
/// # Safety
/// `idx` must be a live handle, `query` a NUL-terminated string and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_index_query(
    idx: *const QsIndex,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let idx = idx
            .as_ref()
            .ok_or_else(|| Failure::new(QsStatus::NullArgument, "index is null"))?;
        let q = text(query, "query")?;
        let provider = idx.hashed.as_ref().ok_or_else(|| {
            Failure::new(
                QsStatus::Unsupported,
                format!(
                    "index embeddings come from {}; query with a vector",
                    idx.index.manifest().provider_id
                ),
            )
        })?;
        let r = idx
            .index
            .query(q, provider, k)
            .map_err(|e| Failure::new(QsStatus::InvalidInput, e.to_string()))?;
        put_json(out_json, &r)
    })
}

/// Top-`k` hits for a precomputed embedding of length `dim`, as JSON.
///
/// # Safety
/// `idx` must be a live handle, `values` must point to `dim` doubles and
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_index_query_vector(
    idx: *const QsIndex,
    values: *const f64,
    dim: usize,
    k: usize,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let idx = idx
            .as_ref()
            .ok_or_else(|| Failure::new(QsStatus::NullArgument, "index is null"))?;
        if values.is_null() {
            return Err(Failure::new(QsStatus::NullArgument, "values is null"));
        }
        let v = EmbeddingVector {
            values: std::slice::from_raw_parts(values, dim).to_vec(),
            provider_id: idx.index.manifest().provider_id.clone(),
        };
        let r = idx
            .index
            .query_vector(&v, k)
            .map_err(|e| Failure::new(QsStatus::InvalidInput, e.to_string()))?;
        put_json(out_json, &r)
    })
}
