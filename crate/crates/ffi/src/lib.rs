//! C ABI over the ipqgr codebook and experiment driver.
//!
//! Every fallible call returns an [`IpqgrStatus`]; on failure the message is
//! available from [`ipqgr_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Panics are
//! caught at the boundary and reported as [`IpqgrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ipqgr::harness::{run_experiment, Dataset, ExperimentConfig};
use ipqgr::ipq::{ingest_session, ThresholdMode};
use ipqgr::pq::{build_base_codebook, quantize, reconstruct};
use ipqgr::vector::DEFAULT_KMEANS_ITERS;
use ipqgr::{Codebook, DocId, Error, PqCode, RandomSource};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpqgrStatus {
    Ok = 0,
    InvalidArgument = 2,
    InvalidState = 3,
    Format = 4,
    Corruption = 5,
    UnsupportedVersion = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpqgrThresholdMode {
    None = 0,
    AdOnly = 1,
    MdOnly = 2,
    Both = 3,
}

impl From<IpqgrThresholdMode> for ThresholdMode {
    fn from(m: IpqgrThresholdMode) -> Self {
        match m {
            IpqgrThresholdMode::None => ThresholdMode::None,
            IpqgrThresholdMode::AdOnly => ThresholdMode::AdOnly,
            IpqgrThresholdMode::MdOnly => ThresholdMode::MdOnly,
            IpqgrThresholdMode::Both => ThresholdMode::Both,
        }
    }
}

/// Opaque codebook handle. Documents get ids `0, 1, 2, ...` in the order
/// they are passed to build and ingest calls.
pub struct IpqgrCodebook {
    codebook: Codebook,
    next_id: DocId,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn status_of(e: &Error) -> IpqgrStatus {
    match e.category().1 {
        2 => IpqgrStatus::InvalidArgument,
        3 => IpqgrStatus::InvalidState,
        4 => IpqgrStatus::Format,
        5 => IpqgrStatus::Corruption,
        6 => IpqgrStatus::UnsupportedVersion,
        _ => IpqgrStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> IpqgrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IpqgrStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            IpqgrStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            IpqgrStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidArgument(msg.into()))
}

unsafe fn matrix<'a>(data: *const f64, count: usize, dim: usize) -> FfiResult<Vec<&'a [f64]>> {
    if data.is_null() {
        return Err(Failure::Null("embeddings"));
    }
    if dim == 0 {
        return Err(invalid("dim must be positive"));
    }
    let len = count.checked_mul(dim).ok_or_else(|| invalid("count * dim overflows"))?;
    Ok(slice::from_raw_parts(data, len).chunks_exact(dim).collect())
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn write_codes(codes: &[PqCode], out: *mut u32, groups: usize) {
    let dst = unsafe { slice::from_raw_parts_mut(out, codes.len() * groups) };
    for (chunk, code) in dst.chunks_exact_mut(groups).zip(codes) {
        chunk.copy_from_slice(&code.0);
    }
}

/// Cluster `count` row-major vectors of length `dim` into `groups` groups of
/// `centroids` centroids. When `codes_out` is non-null it receives
/// `count * groups` code entries.
///
/// # Safety
/// `embeddings` must point to `count * dim` doubles; `codes_out`, when
/// non-null, to `count * groups` writable integers; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_build(
    embeddings: *const f64,
    count: usize,
    dim: usize,
    groups: usize,
    centroids: usize,
    seed: u64,
    codes_out: *mut u32,
    out: *mut *mut IpqgrCodebook,
) -> IpqgrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let rows = matrix(embeddings, count, dim)?;
        let n = DocId::try_from(count).map_err(|_| invalid("too many documents"))?;
        let ids: Vec<DocId> = (0..n).collect();
        let mut rng = RandomSource::new(seed);
        let (codebook, codes) = build_base_codebook(&ids, &rows, groups, centroids, &mut rng, DEFAULT_KMEANS_ITERS)?;
        if !codes_out.is_null() {
            write_codes(&codes, codes_out, groups);
        }
        *out = Box::into_raw(Box::new(IpqgrCodebook { codebook, next_id: n }));
        Ok(())
    })
}

/// # Safety
/// `cb` must be null or a handle from [`ipqgr_codebook_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_free(cb: *mut IpqgrCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// # Safety
/// `cb` must be a live handle, `x` must point to `dim` doubles and
/// `code_out` to `code_len` writable integers.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_quantize(
    cb: *const IpqgrCodebook,
    x: *const f64,
    dim: usize,
    code_out: *mut u32,
    code_len: usize,
) -> IpqgrStatus {
    guard(|| {
        let h = cb.as_ref().ok_or(Failure::Null("codebook"))?;
        if x.is_null() || code_out.is_null() {
            return Err(Failure::Null("x or code_out"));
        }
        if code_len != h.codebook.num_groups() {
            return Err(invalid(format!(
                "code buffer holds {code_len} entries, codebook has {} groups",
                h.codebook.num_groups()
            )));
        }
        let code = quantize(slice::from_raw_parts(x, dim), &h.codebook)?;
        slice::from_raw_parts_mut(code_out, code_len).copy_from_slice(&code.0);
        Ok(())
    })
}

/// # Safety
/// `cb` must be a live handle, `code` must point to `code_len` integers and
/// `out` to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_reconstruct(
    cb: *const IpqgrCodebook,
    code: *const u32,
    code_len: usize,
    out: *mut f64,
    dim: usize,
) -> IpqgrStatus {
    guard(|| {
        let h = cb.as_ref().ok_or(Failure::Null("codebook"))?;
        if code.is_null() || out.is_null() {
            return Err(Failure::Null("code or out"));
        }
        if dim != h.codebook.dim {
            return Err(invalid(format!(
                "output holds {dim} values, codebook dim is {}",
                h.codebook.dim
            )));
        }
        let v = reconstruct(&PqCode(slice::from_raw_parts(code, code_len).to_vec()), &h.codebook)?;
        slice::from_raw_parts_mut(out, dim).copy_from_slice(&v);
        Ok(())
    })
}

/// Index `count` new vectors as the next session. Existing codes are never
/// changed. `codes_out`, when non-null, receives `count * groups` entries.
///
/// # Safety
/// `cb` must be a live handle, `embeddings` must point to `count * dim`
/// doubles and `codes_out`, when non-null, to `count * groups` integers.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_ingest(
    cb: *mut IpqgrCodebook,
    embeddings: *const f64,
    count: usize,
    dim: usize,
    mode: IpqgrThresholdMode,
    seed: u64,
    codes_out: *mut u32,
) -> IpqgrStatus {
    guard(|| {
        let h = cb.as_mut().ok_or(Failure::Null("codebook"))?;
        let rows = matrix(embeddings, count, dim)?;
        let n = DocId::try_from(count).map_err(|_| invalid("too many documents"))?;
        let first = h.next_id;
        let end = first.checked_add(n).ok_or_else(|| invalid("document ids exhausted"))?;
        let docs: Vec<(DocId, &[f64])> = (first..end).zip(rows).collect();
        let session = h.codebook.session + 1;
        let mut rng = RandomSource::new(seed);
        let update = ingest_session(&mut h.codebook, session, &docs, mode.into(), &mut rng)?;
        h.next_id = end;
        if !codes_out.is_null() {
            let codes: Vec<PqCode> = update.codes.into_iter().map(|(_, c)| c).collect();
            write_codes(&codes, codes_out, h.codebook.num_groups());
        }
        Ok(())
    })
}

/// # Safety
/// `cb` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_num_centroids(
    cb: *const IpqgrCodebook,
    group: usize,
    out: *mut usize,
) -> IpqgrStatus {
    guard(|| {
        let h = cb.as_ref().ok_or(Failure::Null("codebook"))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let sizes = h.codebook.sizes();
        *out = *sizes
            .get(group)
            .ok_or_else(|| invalid(format!("group {group} out of range ({} groups)", sizes.len())))?;
        Ok(())
    })
}

/// Number of groups, or 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_num_groups(cb: *const IpqgrCodebook) -> usize {
    cb.as_ref().map_or(0, |h| h.codebook.num_groups())
}

/// Sessions ingested so far (0 right after build).
///
/// # Safety
/// `cb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_codebook_session(cb: *const IpqgrCodebook) -> u32 {
    cb.as_ref().map_or(0, |h| h.codebook.session)
}

/// Run the full protocol on a dataset directory. `config_json` may be
/// empty for defaults. The JSON report is returned in `report_out` and
/// must be released with [`ipqgr_string_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `report_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_run_experiment(
    config_json: *const c_char,
    data_dir: *const c_char,
    report_out: *mut *mut c_char,
) -> IpqgrStatus {
    guard(|| {
        if report_out.is_null() {
            return Err(Failure::Null("report_out"));
        }
        *report_out = ptr::null_mut();
        let text = c_str(config_json, "config_json")?;
        let cfg = if text.trim().is_empty() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_json(text)?
        };
        let data = Dataset::load(Path::new(c_str(data_dir, "data_dir")?))?;
        let report = run_experiment(&cfg, &data)?;
        *report_out = CString::new(report.to_json())
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ipqgr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ipqgr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ipqgr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
