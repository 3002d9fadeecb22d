//! C ABI over shiftlab.
//!
//! Every fallible call returns a [`ShiftlabStatus`]; on failure the message
//! is kept per thread and read with [`shiftlab_last_error`]. Models are
//! opaque handles released with [`shiftlab_model_free`]. No function
//! unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shiftlab::adaptation::TargetModel;
use shiftlab::causal::{cdnod_lite, orient_with_root, pc_skeleton, DOMAIN_NODE};
use shiftlab::checkpoint::Checkpoint;
use shiftlab::cli;
use shiftlab::data::DomainDataset;
use shiftlab::kernels::{median_heuristic, mmd2_marginal, MEDIAN_MULTIPLIERS};
use shiftlab::numerics::{Rng, Tensor2};
use shiftlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Checkpoint = 5,
    Data = 6,
    Computation = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftlabModelKind {
    Gdan = 0,
    Cgdan = 1,
}

/// Opaque fitted model.
pub struct ShiftlabModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> ShiftlabStatus {
    match e {
        Error::Io { .. } => ShiftlabStatus::Io,
        Error::Checkpoint(_) => ShiftlabStatus::Checkpoint,
        Error::Schema(_) | Error::Data(_) | Error::Json(_) => ShiftlabStatus::Data,
        Error::Config(_) | Error::Spec { .. } | Error::Contract(_) | Error::Shape { .. } => {
            ShiftlabStatus::InvalidArgument
        }
        _ => ShiftlabStatus::Computation,
    }
}

fn fail(e: Error) -> ShiftlabStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

/// Runs `f`, converting panics into [`ShiftlabStatus::Panic`].
fn guard(f: impl FnOnce() -> ShiftlabStatus) -> ShiftlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ShiftlabStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            ShiftlabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, ShiftlabStatus> {
    if p.is_null() {
        set_error(format!("`{name}` is null"));
        return Err(ShiftlabStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("`{name}` is not valid UTF-8"));
        ShiftlabStatus::InvalidUtf8
    })
}

unsafe fn model_arg<'a>(p: *const ShiftlabModel) -> Result<&'a ShiftlabModel, ShiftlabStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("model handle is null");
        ShiftlabStatus::NullPointer
    })
}

/// Row-major `rows x cols` view of caller memory as a tensor.
unsafe fn matrix_arg(
    p: *const f64,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Tensor2, ShiftlabStatus> {
    if p.is_null() {
        set_error(format!("`{name}` is null"));
        return Err(ShiftlabStatus::NullPointer);
    }
    let n = rows.checked_mul(cols).ok_or_else(|| {
        set_error(format!("`{name}` size overflows"));
        ShiftlabStatus::InvalidArgument
    })?;
    Tensor2::from_vec(rows, cols, std::slice::from_raw_parts(p, n).to_vec()).map_err(fail)
}

/// Copies `s` with a trailing NUL into `buf`. `needed` receives the full
/// size, NUL included, so callers can retry with a larger buffer.
unsafe fn write_string(
    s: &str,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> ShiftlabStatus {
    let bytes = s.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || len < bytes.len() + 1 {
        set_error(format!(
            "buffer holds {len} bytes, {} needed",
            bytes.len() + 1
        ));
        return ShiftlabStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    ShiftlabStatus::Ok
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn shiftlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shiftlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads and verifies a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_load(
    path: *const c_char,
    out: *mut *mut ShiftlabModel,
) -> ShiftlabStatus {
    guard(|| {
        if out.is_null() {
            set_error("`out` is null");
            return ShiftlabStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(ShiftlabModel { inner: c }));
                ShiftlabStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs a full training pipeline from a run config file. The fitted
/// model is returned as well as written to the config's output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_train(
    config_path: *const c_char,
    out: *mut *mut ShiftlabModel,
) -> ShiftlabStatus {
    guard(|| {
        if out.is_null() {
            set_error("`out` is null");
            return ShiftlabStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let path = match str_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match cli::cmd_train(path) {
            Ok(o) => {
                *out = Box::into_raw(Box::new(ShiftlabModel {
                    inner: o.checkpoint,
                }));
                ShiftlabStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_save(
    model: *const ShiftlabModel,
    path: *const c_char,
) -> ShiftlabStatus {
    guard(|| {
        let (m, path) = match (model_arg(model), str_arg(path, "path")) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match m.inner.save(path) {
            Ok(_) => ShiftlabStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_free(model: *mut ShiftlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_kind(
    model: *const ShiftlabModel,
    out: *mut ShiftlabModelKind,
) -> ShiftlabStatus {
    guard(|| {
        let m = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            set_error("`out` is null");
            return ShiftlabStatus::NullPointer;
        }
        *out = match m.inner {
            Checkpoint::Gdan(_) => ShiftlabModelKind::Gdan,
            Checkpoint::Cgdan(_) => ShiftlabModelKind::Cgdan,
        };
        ShiftlabStatus::Ok
    })
}

fn target_model(c: &Checkpoint) -> &dyn TargetModel {
    match c {
        Checkpoint::Gdan(m) => m,
        Checkpoint::Cgdan(m) => m,
    }
}

/// Number of feature columns generated rows carry.
///
/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_feature_count(
    model: *const ShiftlabModel,
    out: *mut usize,
) -> ShiftlabStatus {
    guard(|| {
        let m = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            set_error("`out` is null");
            return ShiftlabStatus::NullPointer;
        }
        *out = target_model(&m.inner).features().len();
        ShiftlabStatus::Ok
    })
}

/// Hex SHA-256 of the model body, as recorded in metric reports.
///
/// # Safety
/// `buf` must hold `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_hash(
    model: *const ShiftlabModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> ShiftlabStatus {
    guard(|| {
        let m = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match m.inner.hash() {
            Ok(h) => write_string(&h, buf, len, needed),
            Err(e) => fail(e),
        }
    })
}

/// Samples `n` labeled rows for a fitted domain. `x_out` receives
/// `n * feature_count` values row-major, `y_out` the `n` labels.
///
/// # Safety
/// `domain` must be NUL-terminated; output buffers must have the sizes
/// above.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_model_generate(
    model: *const ShiftlabModel,
    domain: *const c_char,
    n: usize,
    seed: u64,
    x_out: *mut f64,
    y_out: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        let (m, domain) = match (model_arg(model), str_arg(domain, "domain")) {
            (Ok(m), Ok(d)) => (m, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if x_out.is_null() || y_out.is_null() {
            set_error("output buffer is null");
            return ShiftlabStatus::NullPointer;
        }
        let mut rng = Rng::new(seed);
        let ds: Result<DomainDataset, Error> = match &m.inner {
            Checkpoint::Gdan(g) => g.sample_domain(domain, n, &mut rng),
            Checkpoint::Cgdan(c) => c.ancestral_generate(domain, None, n, &mut rng),
        };
        let ds = match ds {
            Ok(d) => d,
            Err(e) => return fail(e),
        };
        ptr::copy_nonoverlapping(ds.x.data().as_ptr(), x_out, ds.x.data().len());
        if let Some(y) = &ds.y {
            ptr::copy_nonoverlapping(y.as_ptr(), y_out, y.len());
        }
        ShiftlabStatus::Ok
    })
}

/// Squared MMD (V-statistic) between two row-major samples with the
/// default median-heuristic RBF mixture fitted on `p`.
///
/// # Safety
/// `p` holds `np * dim` values and `q` holds `nq * dim` values.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_mmd2(
    p: *const f64,
    np: usize,
    q: *const f64,
    nq: usize,
    dim: usize,
    out: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        if out.is_null() {
            set_error("`out` is null");
            return ShiftlabStatus::NullPointer;
        }
        let (a, b) = match (matrix_arg(p, np, dim, "p"), matrix_arg(q, nq, dim, "q")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let r = median_heuristic(&a, &MEDIAN_MULTIPLIERS).and_then(|k| mmd2_marginal(&a, &b, &k));
        match r {
            Ok(v) => {
                *out = v;
                ShiftlabStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Structure discovery on labeled rows. `x` is `n * dim` row-major, `y`
/// holds labels and `domains` optional integer domain codes (null for a
/// single domain). The graph is written as JSON into `buf`.
///
/// # Safety
/// Buffers must have the sizes above; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_discover_json(
    x: *const f64,
    y: *const f64,
    domains: *const u32,
    n: usize,
    dim: usize,
    alpha: f64,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> ShiftlabStatus {
    guard(|| {
        let xs = match matrix_arg(x, n, dim, "x") {
            Ok(t) => t,
            Err(s) => return s,
        };
        if y.is_null() {
            set_error("`y` is null");
            return ShiftlabStatus::NullPointer;
        }
        let labels = std::slice::from_raw_parts(y, n);
        let names: Vec<String> = (1..=dim).map(|i| format!("X{i}")).collect();
        let result = if domains.is_null() {
            let mut all = vec!["Y".to_string()];
            all.extend(names.iter().cloned());
            Tensor2::concat_cols(&[&Tensor2::column(labels), &xs])
                .and_then(|data| pc_skeleton(&data, &all, alpha))
                .and_then(|skel| orient_with_root(&skel, &["Y"]))
                .map(|g| g.export(&[]))
        } else {
            let codes = std::slice::from_raw_parts(domains, n);
            let mut ids: Vec<u32> = codes.to_vec();
            ids.sort_unstable();
            ids.dedup();
            let sets: Result<Vec<DomainDataset>, Error> = ids
                .iter()
                .map(|&d| {
                    let rows: Vec<usize> = (0..n).filter(|&r| codes[r] == d).collect();
                    DomainDataset::new(
                        format!("{DOMAIN_NODE}{d}"),
                        xs.select_rows(&rows),
                        Some(rows.iter().map(|&r| labels[r]).collect()),
                        names.clone(),
                    )
                })
                .collect();
            sets.and_then(|s| cdnod_lite(&s, alpha)).map(|r| r.graph)
        };
        match result.and_then(|g| serde_json::to_string(&g).map_err(Error::from)) {
            Ok(json) => write_string(&json, buf, len, needed),
            Err(e) => fail(e),
        }
    })
}
