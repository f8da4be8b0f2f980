//! C ABI over the spikescore library.
//!
//! Every function returns an [`SsStatus`]; results go through out-pointers.
//! On failure, [`ss_last_error_message`] describes the most recent error on
//! the calling thread. Handles are opaque and must be released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spikescore::detector::{self, Threshold};
use spikescore::evaluation::{auroc_of, cantelli_bound};
use spikescore::pipeline::read_json;
use spikescore::rag::RetrievalIndex;
use spikescore::scoring::ProbeModel;
use spikescore::trajectory::{coefficient_of_variation, spike_with_turn};
use spikescore::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    SequenceTooShort = 4,
    VarianceUndefined = 5,
    NonPositiveMean = 6,
    NonFinite = 7,
    DimensionMismatch = 8,
    AurocUndefined = 9,
    OutOfRange = 10,
    DuplicateId = 11,
    Io = 12,
    Parse = 13,
    BufferTooSmall = 14,
    Panic = 15,
    Other = 16,
}

impl From<&Error> for SsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::SequenceTooShort(_) => SsStatus::SequenceTooShort,
            Error::VarianceUndefined(_) => SsStatus::VarianceUndefined,
            Error::NonPositiveMean(_) => SsStatus::NonPositiveMean,
            Error::OutOfRange { .. } => SsStatus::OutOfRange,
            Error::InvalidArgument(_) | Error::Degenerate(_) | Error::DegenerateLabels(_) => {
                SsStatus::InvalidArgument
            }
            Error::NonFinite(_) => SsStatus::NonFinite,
            Error::DimensionMismatch { .. } => SsStatus::DimensionMismatch,
            Error::AurocUndefined => SsStatus::AurocUndefined,
            Error::DuplicateId(_) => SsStatus::DuplicateId,
            Error::Io { .. } => SsStatus::Io,
            Error::Json(_) | Error::MalformedLine { .. } => SsStatus::Parse,
            _ => SsStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SsStatus, msg: impl Into<String>) -> SsStatus {
    set_error(msg.into());
    status
}

fn from_err(e: Error) -> SsStatus {
    let status = SsStatus::from(&e);
    fail(status, format!("{}: {e}", e.class()))
}

fn guard(f: impl FnOnce() -> SsStatus) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SsStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], SsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(SsStatus::NullPointer, "null array pointer"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string<'a>(ptr: *const c_char) -> Result<&'a str, SsStatus> {
    if ptr.is_null() {
        return Err(fail(SsStatus::NullPointer, "null string pointer"));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| fail(SsStatus::InvalidUtf8, "string is not valid UTF-8"))
}

macro_rules! out {
    ($p:expr) => {
        if $p.is_null() {
            return fail(SsStatus::NullPointer, concat!("null output pointer `", stringify!($p), "`"));
        }
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failing call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// SpikeScore of a per-turn score sequence and the 1-indexed turn attaining it.
/// `out_peak_turn` may be NULL.
///
/// # Safety
/// `scores` must point to `len` doubles; `out_spike` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_spike_score(
    scores: *const f64,
    len: usize,
    out_spike: *mut f64,
    out_peak_turn: *mut usize,
) -> SsStatus {
    guard(|| {
        out!(out_spike);
        let s = tri!(slice(scores, len));
        if s.iter().any(|v| !v.is_finite()) {
            return fail(SsStatus::NonFinite, "score sequence contains a non-finite value");
        }
        match spike_with_turn(s) {
            Ok((spike, turn)) => {
                *out_spike = spike;
                if !out_peak_turn.is_null() {
                    *out_peak_turn = turn;
                }
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Sample coefficient of variation of a score sequence.
///
/// # Safety
/// `scores` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_coefficient_of_variation(scores: *const f64, len: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        out!(out);
        let s = tri!(slice(scores, len));
        match coefficient_of_variation(s) {
            Ok(v) => {
                *out = v;
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// AUROC of `values` against 0/1 `labels`, ties counted as one half.
///
/// # Safety
/// `values` and `labels` must each point to `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_auroc(values: *const f64, labels: *const u8, len: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        out!(out);
        let v = tri!(slice(values, len));
        let l = tri!(slice(labels, len));
        match auroc_of(v, l) {
            Ok(a) => {
                *out = a;
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Lower bound on P(S_h > S_t) from the mean ratio, std ratio and factual CV.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_cantelli_bound(delta: f64, r: f64, c: f64, out: *mut f64) -> SsStatus {
    guard(|| {
        out!(out);
        match cantelli_bound(delta, r, c) {
            Ok(b) => {
                *out = b;
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Writes 1 when `spike >= lambda`, else 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_decide(spike: f64, lambda: f64, out: *mut u8) -> SsStatus {
    guard(|| {
        out!(out);
        let th = match Threshold::new(lambda) {
            Ok(t) => t,
            Err(e) => return from_err(e),
        };
        if !spike.is_finite() {
            return fail(SsStatus::NonFinite, format!("spike {spike} is not finite"));
        }
        *out = detector::decide(spike, &th);
        SsStatus::Ok
    })
}

/// Threshold from factual-only spikes at the requested false-positive rate.
///
/// # Safety
/// `spikes` must point to `len` doubles; `out_lambda` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_calibrate_threshold(
    spikes: *const f64,
    len: usize,
    target_fpr: f64,
    out_lambda: *mut f64,
) -> SsStatus {
    guard(|| {
        out!(out_lambda);
        let s = tri!(slice(spikes, len));
        match detector::calibrate_threshold(s, target_fpr, "ffi") {
            Ok(t) => {
                *out_lambda = t.lambda;
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Trained probe loaded from JSON.
pub struct SsProbe {
    model: ProbeModel,
}

fn parse_probe(text: &str) -> Result<ProbeModel, Error> {
    let m: ProbeModel = serde_json::from_str(text)?;
    m.validate()?;
    Ok(m)
}

/// Parses a probe from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_probe_from_json(json: *const c_char, out: *mut *mut SsProbe) -> SsStatus {
    guard(|| {
        out!(out);
        let text = tri!(string(json));
        match parse_probe(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SsProbe { model }));
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Loads a probe file written by `train-probe`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_probe_load(path: *const c_char, out: *mut *mut SsProbe) -> SsStatus {
    guard(|| {
        out!(out);
        let p = tri!(string(path));
        let model = match read_json::<ProbeModel>(Path::new(p)).and_then(|m| m.validate().map(|_| m)) {
            Ok(m) => m,
            Err(e) => return from_err(e),
        };
        *out = Box::into_raw(Box::new(SsProbe { model }));
        SsStatus::Ok
    })
}

/// Input dimension expected by the probe, or 0 for NULL.
///
/// # Safety
/// `probe` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_probe_input_dim(probe: *const SsProbe) -> usize {
    probe.as_ref().map_or(0, |p| p.model.input_dim)
}

/// Scores one feature vector.
///
/// # Safety
/// `probe` must be a live handle, `x` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_probe_score(probe: *const SsProbe, x: *const f64, len: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        out!(out);
        let Some(p) = probe.as_ref() else {
            return fail(SsStatus::NullPointer, "null probe handle");
        };
        let x = tri!(slice(x, len));
        if x.iter().any(|v| !v.is_finite()) {
            return fail(SsStatus::NonFinite, "feature vector contains a non-finite value");
        }
        match p.model.score(x) {
            Ok(s) => {
                *out = s;
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `probe` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_probe_free(probe: *mut SsProbe) {
    if !probe.is_null() {
        drop(Box::from_raw(probe));
    }
}

/// Exact cosine retrieval index loaded from JSON.
pub struct SsIndex {
    index: RetrievalIndex,
    ids: Vec<CString>,
}

fn wrap_index(index: RetrievalIndex) -> Result<SsIndex, Error> {
    index.validate()?;
    let ids = index
        .documents
        .iter()
        .map(|d| CString::new(d.doc_id.clone()).map_err(|_| Error::InvalidArgument(format!("doc id {:?} contains NUL", d.doc_id))))
        .collect::<Result<_, _>>()?;
    Ok(SsIndex { index, ids })
}

/// Parses an index from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_index_from_json(json: *const c_char, out: *mut *mut SsIndex) -> SsStatus {
    guard(|| {
        out!(out);
        let text = tri!(string(json));
        let parsed = serde_json::from_str::<RetrievalIndex>(text).map_err(Error::from).and_then(wrap_index);
        match parsed {
            Ok(h) => {
                *out = Box::into_raw(Box::new(h));
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Loads an index file written by `rag-build`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_index_load(path: *const c_char, out: *mut *mut SsIndex) -> SsStatus {
    guard(|| {
        out!(out);
        let p = tri!(string(path));
        match read_json::<RetrievalIndex>(Path::new(p)).and_then(wrap_index) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(h));
                SsStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Number of documents, or 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_index_len(index: *const SsIndex) -> usize {
    index.as_ref().map_or(0, |h| h.index.len())
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_index_dimension(index: *const SsIndex) -> usize {
    index.as_ref().map_or(0, |h| h.index.dimension)
}

/// Document id at position `i` (id order), or NULL when out of range.
/// Owned by the handle.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_index_doc_id(index: *const SsIndex, i: usize) -> *const c_char {
    index.as_ref().and_then(|h| h.ids.get(i)).map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Exact top-`k` documents for a raw query vector. Writes document
/// positions (usable with [`ss_index_doc_id`]) and cosine scores, best first.
///
/// # Safety
/// `query` must point to `dim` doubles; `out_positions` and `out_scores`
/// must each have room for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn ss_index_query(
    index: *const SsIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    out_positions: *mut usize,
    out_scores: *mut f64,
    capacity: usize,
) -> SsStatus {
    guard(|| {
        out!(out_positions);
        out!(out_scores);
        let Some(h) = index.as_ref() else {
            return fail(SsStatus::NullPointer, "null index handle");
        };
        if capacity < k {
            return fail(SsStatus::BufferTooSmall, format!("capacity {capacity} < k {k}"));
        }
        let q = tri!(slice(query, dim));
        let hits = match h.index.query_vector(q, k) {
            Ok(hits) => hits,
            Err(e) => return from_err(e),
        };
        for (j, (id, score)) in hits.iter().enumerate() {
            let pos = h.index.documents.binary_search_by(|d| d.doc_id.as_str().cmp(id)).expect("id from index");
            *out_positions.add(j) = pos;
            *out_scores.add(j) = *score;
        }
        SsStatus::Ok
    })
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_index_free(index: *mut SsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}
