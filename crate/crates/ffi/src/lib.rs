//! C ABI for embedding splitrank components in non-Rust services.
//!
//! Every fallible function returns an [`SrStatus`]. On failure the message of
//! the most recent error on the calling thread is available through
//! [`sr_last_error_message`]. Handles are opaque and must be released with
//! their matching `*_free` function; passing NULL to a free function is a
//! no-op.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;

use splitrank::frontend::{parse_query, FieldLayout, QueryEncoder};
use splitrank::indexer::{dequantize, quantize, QuantizedVector};
use splitrank::searcher::{load_shard, Searcher};
use splitrank::splitter::{load_bundle, CrossBundle};
use splitrank::wire::{RetrieveMode, SearchRequest};
use splitrank::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Input = 3,
    Format = 4,
    Version = 5,
    Config = 6,
    Io = 7,
    Backend = 8,
    Build = 9,
    Json = 10,
    Training = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// One scored member.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SrHit {
    pub uid: u64,
    pub score: f32,
    pub semantic: f32,
    pub term_match: f32,
}

/// Query-side encoder: embedding dictionary plus query-arm bundle.
pub struct SrEncoder {
    layout: FieldLayout,
    encoder: QueryEncoder,
}

/// One loaded searcher shard with its cross bundle.
pub struct SrShard {
    searcher: Searcher,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Input(_) => SrStatus::Input,
            Error::Format { .. } => SrStatus::Format,
            Error::Version { .. } => SrStatus::Version,
            Error::Training { .. } => SrStatus::Training,
            Error::Build(_) => SrStatus::Build,
            Error::Config(_) => SrStatus::Config,
            Error::Backend(_) => SrStatus::Backend,
            Error::Io(_) => SrStatus::Io,
            Error::Json(_) => SrStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure> + UnwindSafe) -> SrStatus {
    match catch_unwind(f) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(SrStatus::NullPointer, format!("{name} is NULL")))
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn sr_status_name(status: SrStatus) -> *const c_char {
    let name: &'static CStr = match status {
        SrStatus::Ok => c"ok",
        SrStatus::NullPointer => c"null_pointer",
        SrStatus::InvalidUtf8 => c"invalid_utf8",
        SrStatus::Input => c"input",
        SrStatus::Format => c"format",
        SrStatus::Version => c"version",
        SrStatus::Config => c"config",
        SrStatus::Io => c"io",
        SrStatus::Backend => c"backend",
        SrStatus::Build => c"build",
        SrStatus::Json => c"json",
        SrStatus::Training => c"training",
        SrStatus::BufferTooSmall => c"buffer_too_small",
        SrStatus::Panic => c"panic",
    };
    name.as_ptr()
}

/// Load an encoder from an embedding dictionary file and a query-arm bundle
/// directory. On success `*out` owns a handle for [`sr_encoder_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_encoder_open(
    dict_path: *const c_char,
    query_arm_dir: *const c_char,
    out: *mut *mut SrEncoder,
) -> SrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dict = str_arg(dict_path, "dict_path")?;
        let arm = str_arg(query_arm_dir, "query_arm_dir")?;
        let encoder = QueryEncoder::load(Path::new(dict), Path::new(arm))?;
        *out = Box::into_raw(Box::new(SrEncoder { layout: FieldLayout::default(), encoder }));
        Ok(())
    })
}

/// # Safety
/// `encoder` must be NULL or a handle from [`sr_encoder_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_encoder_free(encoder: *mut SrEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Length of the query representation; 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_encoder_dim(encoder: *const SrEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.encoder.dim())
}

/// Model version id the encoder was built for; 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_encoder_version(encoder: *const SrEncoder) -> u16 {
    encoder.as_ref().map_or(0, |e| e.encoder.version())
}

/// Encode a query. `facets_json` is NULL or a JSON object mapping facet
/// names to string arrays, e.g. `{"skill":["java"]}`. Writes `dim` floats to
/// `out` (capacity `out_cap`) and, when `out_misses` is not NULL, the number
/// of query tokens the dictionary could not resolve.
///
/// # Safety
/// `encoder` must be a live handle; `out` must hold `out_cap` floats.
#[no_mangle]
pub unsafe extern "C" fn sr_encoder_encode(
    encoder: *const SrEncoder,
    text: *const c_char,
    facets_json: *const c_char,
    out: *mut f32,
    out_cap: usize,
    out_misses: *mut usize,
) -> SrStatus {
    guard(|| {
        let enc = encoder
            .as_ref()
            .ok_or_else(|| fail(SrStatus::NullPointer, "encoder is NULL"))?;
        let text = str_arg(text, "text")?;
        let facets: BTreeMap<String, Vec<String>> = if facets_json.is_null() {
            BTreeMap::new()
        } else {
            serde_json::from_str(str_arg(facets_json, "facets_json")?)
                .map_err(|e| fail(SrStatus::Json, format!("facets_json: {e}")))?
        };
        let dim = enc.encoder.dim();
        if out_cap < dim {
            return Err(fail(SrStatus::BufferTooSmall, format!("out holds {out_cap} floats, need {dim}")));
        }
        if out.is_null() {
            return Err(fail(SrStatus::NullPointer, "out is NULL"));
        }
        let (rep, misses) = enc.encoder.encode(&parse_query(&enc.layout, text, &facets))?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&rep);
        if let Some(m) = out_misses.as_mut() {
            *m = misses;
        }
        Ok(())
    })
}

/// Load one shard directory together with its cross bundle directory.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_shard_open(
    shard_dir: *const c_char,
    cross_dir: *const c_char,
    out: *mut *mut SrShard,
) -> SrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let snapshot = load_shard(Path::new(str_arg(shard_dir, "shard_dir")?))?;
        let cross: CrossBundle = load_bundle(Path::new(str_arg(cross_dir, "cross_dir")?))?;
        let searcher = Searcher::new(snapshot, cross)?;
        *out = Box::into_raw(Box::new(SrShard { searcher }));
        Ok(())
    })
}

/// # Safety
/// `shard` must be NULL or a handle from [`sr_shard_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_shard_free(shard: *mut SrShard) {
    if !shard.is_null() {
        drop(Box::from_raw(shard));
    }
}

/// Number of members in the shard; 0 for NULL.
///
/// # Safety
/// `shard` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_shard_len(shard: *const SrShard) -> usize {
    shard.as_ref().map_or(0, |s| s.searcher.snapshot().len())
}

/// Retrieve members holding any of `terms_json` (a JSON array of
/// `[field_id, token]` pairs), score them against `qrep` and write the top
/// `k` hits, best first. `hits_cap` must be at least `k`; `*out_count`
/// receives the number of hits written.
///
/// # Safety
/// `shard` must be a live handle, `qrep` must hold `qrep_len` floats and
/// `hits` must hold `hits_cap` entries.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sr_shard_search(
    shard: *const SrShard,
    version: u16,
    qrep: *const f32,
    qrep_len: usize,
    terms_json: *const c_char,
    max_candidates: usize,
    k: usize,
    w_sem: f32,
    w_term: f32,
    hits: *mut SrHit,
    hits_cap: usize,
    out_count: *mut usize,
) -> SrStatus {
    guard(|| {
        let s = shard.as_ref().ok_or_else(|| fail(SrStatus::NullPointer, "shard is NULL"))?;
        let count = out_arg(out_count, "out_count")?;
        *count = 0;
        if hits_cap < k {
            return Err(fail(SrStatus::BufferTooSmall, format!("hits holds {hits_cap} entries, k is {k}")));
        }
        let terms: Vec<(u16, String)> = serde_json::from_str(str_arg(terms_json, "terms_json")?)
            .map_err(|e| fail(SrStatus::Json, format!("terms_json: {e}")))?;
        let req = SearchRequest {
            version,
            qrep: slice_arg(qrep, qrep_len, "qrep")?.to_vec(),
            terms,
            mode: RetrieveMode::Any,
            max_candidates,
            k,
            w_sem,
            w_term,
            shards: None,
        };
        let resp = s.searcher.search(&req)?;
        if !resp.hits.is_empty() && hits.is_null() {
            return Err(fail(SrStatus::NullPointer, "hits is NULL"));
        }
        for (i, h) in resp.hits.iter().enumerate() {
            *hits.add(i) = SrHit { uid: h.uid, score: h.score, semantic: h.semantic, term_match: h.term_match };
        }
        *count = resp.hits.len();
        Ok(())
    })
}

/// Symmetric int8 quantization of `n` floats: writes `n` values and the
/// scale. Non-finite input is an `Input` error.
///
/// # Safety
/// `v` must hold `n` floats and `out_values` `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn sr_quantize(v: *const f32, n: usize, out_values: *mut i8, out_scale: *mut f32) -> SrStatus {
    guard(|| {
        let input = slice_arg(v, n, "v")?;
        let scale = out_arg(out_scale, "out_scale")?;
        if n > 0 && out_values.is_null() {
            return Err(fail(SrStatus::NullPointer, "out_values is NULL"));
        }
        let q = quantize(input)?;
        if n > 0 {
            std::slice::from_raw_parts_mut(out_values, n).copy_from_slice(&q.values);
        }
        *scale = q.scale;
        Ok(())
    })
}

/// Inverse of [`sr_quantize`]: `out[i] = values[i] * scale`.
///
/// # Safety
/// `values` must hold `n` bytes and `out` `n` floats.
#[no_mangle]
pub unsafe extern "C" fn sr_dequantize(values: *const i8, n: usize, scale: f32, out: *mut f32) -> SrStatus {
    guard(|| {
        let q = QuantizedVector { scale, values: slice_arg(values, n, "values")?.to_vec() };
        if n > 0 && out.is_null() {
            return Err(fail(SrStatus::NullPointer, "out is NULL"));
        }
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&dequantize(&q));
        }
        Ok(())
    })
}
