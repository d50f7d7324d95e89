//! C ABI over the mrtensor library.
//!
//! Handles are opaque pointers created and freed here; every fallible
//! call returns an `MrtStatus` code, with a thread-local detail string
//! available through [`mrt_last_error_message`]. The matching header
//! lives at `include/mrtensor.h`.
//!
//! Out-pointers are written only on `MRT_OK`. Passing a null handle or
//! buffer yields `MRT_ERR_NULL_ARGUMENT`, never a crash.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use mrtensor::decompose::{
    alternating_decompose, restructured_decompose, DecomposeConfig, TensorInput,
};
use mrtensor::dense::DenseTensor;
use mrtensor::error::Error;
use mrtensor::io;
use mrtensor::ms::{BaseFormat, MsTensor, RankVector};

/// Status codes shared with the C header.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrtStatus {
    Ok = 0,
    NullArgument = 1,
    Utf8 = 2,
    InvalidArgument = 3,
    Shape = 4,
    Divisibility = 5,
    ElementLimit = 6,
    Ranks = 7,
    Format = 8,
    Io = 9,
    Container = 10,
    Unsupported = 11,
    Internal = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MrtStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => MrtStatus::Shape,
        Error::NonDivisible { .. } => MrtStatus::Divisibility,
        Error::ElementLimit { .. } => MrtStatus::ElementLimit,
        Error::BadModeIndex { .. }
        | Error::LengthMismatch { .. }
        | Error::BadBatchSize(_)
        | Error::BadLevel { .. }
        | Error::InvalidConfig(_)
        | Error::NonIncreasingScales => MrtStatus::InvalidArgument,
        Error::RankVectorLength { .. } | Error::InvalidRanks(_) => MrtStatus::Ranks,
        Error::GridMismatch(_) | Error::FormatMismatch(_) => MrtStatus::Format,
        Error::UnsupportedBase { .. } => MrtStatus::Unsupported,
        Error::Io(_) => MrtStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::Truncated(_)
        | Error::RankExtentMismatch(_)
        | Error::MalformedHeader(_)
        | Error::UnsupportedMaxval(_) => MrtStatus::Container,
    }
}

fn fail(err: Error) -> i32 {
    set_error(&err.to_string());
    status_of(&err) as i32
}

fn fail_null(what: &str) -> i32 {
    set_error(&format!("null argument: {what}"));
    MrtStatus::NullArgument as i32
}

/// Opaque dense tensor handle.
pub struct MrtTensor(DenseTensor);

/// Opaque multiresolution tensor handle.
pub struct MrtMs(MsTensor);

/// Compression parameters for [`mrt_ms_compress`].
#[repr(C)]
pub struct MrtCompressOptions {
    /// 0 = tensor train, 1 = canonical.
    pub base_format: i32,
    pub batch_size: u64,
    /// Negative: use the largest level count the shape divides.
    pub levels: i64,
    /// Per-level ranks (coarsest first), or null to use `uniform_rank`.
    pub ranks: *const u64,
    pub ranks_len: u64,
    pub uniform_rank: u64,
    pub max_iter: u64,
    pub seed: u64,
    /// Nonzero selects the scale-by-scale restructured sweeps.
    pub restructured: u8,
}

/// Message describing the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mrt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn path_from(ptr: *const c_char) -> Result<std::path::PathBuf, i32> {
    if ptr.is_null() {
        return Err(fail_null("path"));
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(MrtStatus::Utf8 as i32)
        }
    }
}

/// Create a tensor from a row-major buffer (copied).
///
/// # Safety
/// `shape` must point to `order` u64 values and `data` to their product
/// in f64 values.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_create(
    order: u64,
    shape: *const u64,
    data: *const f64,
    out: *mut *mut MrtTensor,
) -> i32 {
    if shape.is_null() || data.is_null() || out.is_null() {
        return fail_null("shape/data/out");
    }
    let shape: Vec<usize> =
        unsafe { std::slice::from_raw_parts(shape, order as usize) }
            .iter()
            .map(|&n| n as usize)
            .collect();
    let len: usize = shape.iter().product();
    let data = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
    match DenseTensor::new(shape, data) {
        Ok(t) => {
            unsafe { *out = Box::into_raw(Box::new(MrtTensor(t))) };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `t` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_free(t: *mut MrtTensor) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_order(t: *const MrtTensor, out: *mut u64) -> i32 {
    let (Some(t), false) = (unsafe { t.as_ref() }, out.is_null()) else {
        return fail_null("tensor/out");
    };
    unsafe { *out = t.0.order() as u64 };
    MrtStatus::Ok as i32
}

/// # Safety
/// `out` must hold at least `order` entries.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_shape(t: *const MrtTensor, out: *mut u64) -> i32 {
    let (Some(t), false) = (unsafe { t.as_ref() }, out.is_null()) else {
        return fail_null("tensor/out");
    };
    let shape = t.0.shape();
    let dst = unsafe { std::slice::from_raw_parts_mut(out, shape.len()) };
    for (d, &n) in dst.iter_mut().zip(shape) {
        *d = n as u64;
    }
    MrtStatus::Ok as i32
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_len(t: *const MrtTensor, out: *mut u64) -> i32 {
    let (Some(t), false) = (unsafe { t.as_ref() }, out.is_null()) else {
        return fail_null("tensor/out");
    };
    unsafe { *out = t.0.len() as u64 };
    MrtStatus::Ok as i32
}

/// Copy the row-major payload into a caller buffer of exactly `len`
/// entries (`len` must equal the tensor length).
///
/// # Safety
/// `out` must hold `len` f64 values.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_copy_data(
    t: *const MrtTensor,
    out: *mut f64,
    len: u64,
) -> i32 {
    let (Some(t), false) = (unsafe { t.as_ref() }, out.is_null()) else {
        return fail_null("tensor/out");
    };
    if len as usize != t.0.len() {
        set_error(&format!(
            "buffer holds {len} values, tensor has {}",
            t.0.len()
        ));
        return MrtStatus::InvalidArgument as i32;
    }
    unsafe { std::slice::from_raw_parts_mut(out, len as usize) }.copy_from_slice(t.0.data());
    MrtStatus::Ok as i32
}

/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_read(path: *const c_char, out: *mut *mut MrtTensor) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    match io::read_tensor(&path) {
        Ok(t) => {
            unsafe { *out = Box::into_raw(Box::new(MrtTensor(t))) };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `t` must be live, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mrt_tensor_write(t: *const MrtTensor, path: *const c_char) -> i32 {
    let Some(t) = (unsafe { t.as_ref() }) else {
        return fail_null("tensor");
    };
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    match io::write_tensor(&path, &t.0) {
        Ok(()) => MrtStatus::Ok as i32,
        Err(e) => fail(e),
    }
}

/// Compress a dense tensor into the multiresolution format.
///
/// # Safety
/// `t` and `opts` must be live; `opts.ranks`, when non-null, must hold
/// `opts.ranks_len` entries.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_compress(
    t: *const MrtTensor,
    opts: *const MrtCompressOptions,
    out: *mut *mut MrtMs,
) -> i32 {
    let (Some(t), Some(opts), false) =
        (unsafe { t.as_ref() }, unsafe { opts.as_ref() }, out.is_null())
    else {
        return fail_null("tensor/options/out");
    };
    let format = match opts.base_format {
        0 => BaseFormat::Tt,
        1 => BaseFormat::Cp,
        other => {
            set_error(&format!("unknown base format code {other}"));
            return MrtStatus::InvalidArgument as i32;
        }
    };
    let levels = if opts.levels < 0 {
        mrtensor::dense::GridSpec::max_levels(t.0.shape(), opts.batch_size as usize)
    } else {
        opts.levels as usize
    };
    let rank_vector = if opts.ranks.is_null() {
        RankVector::uniform(levels, opts.uniform_rank as usize)
    } else {
        let rs: Vec<usize> =
            unsafe { std::slice::from_raw_parts(opts.ranks, opts.ranks_len as usize) }
                .iter()
                .map(|&r| r as usize)
                .collect();
        RankVector::from_scalars(&rs)
    };
    let mut cfg = DecomposeConfig::new(
        opts.batch_size as usize,
        format,
        rank_vector,
        opts.max_iter as usize,
    );
    cfg.levels = Some(levels);
    cfg.seed = opts.seed;
    let run = if opts.restructured != 0 {
        restructured_decompose(TensorInput::Dense(&t.0), &cfg)
    } else {
        alternating_decompose(TensorInput::Dense(&t.0), &cfg)
    };
    match run {
        Ok((ms, _)) => {
            unsafe { *out = Box::into_raw(Box::new(MrtMs(ms))) };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `ms` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_free(ms: *mut MrtMs) {
    if !ms.is_null() {
        drop(unsafe { Box::from_raw(ms) });
    }
}

/// # Safety
/// `ms` must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_reconstruct(ms: *const MrtMs, out: *mut *mut MrtTensor) -> i32 {
    let (Some(ms), false) = (unsafe { ms.as_ref() }, out.is_null()) else {
        return fail_null("ms/out");
    };
    match ms.0.reconstruct() {
        Ok(t) => {
            unsafe { *out = Box::into_raw(Box::new(MrtTensor(t))) };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_read(path: *const c_char, out: *mut *mut MrtMs) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    match io::read_archive(&path) {
        Ok(ms) => {
            unsafe { *out = Box::into_raw(Box::new(MrtMs(ms))) };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `ms` must be live, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_write(ms: *const MrtMs, path: *const c_char) -> i32 {
    let Some(ms) = (unsafe { ms.as_ref() }) else {
        return fail_null("ms");
    };
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    match io::write_archive(&path, &ms.0) {
        Ok(()) => MrtStatus::Ok as i32,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `ms` must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_levels(ms: *const MrtMs, out: *mut u64) -> i32 {
    let (Some(ms), false) = (unsafe { ms.as_ref() }, out.is_null()) else {
        return fail_null("ms/out");
    };
    unsafe { *out = ms.0.grid().levels() as u64 };
    MrtStatus::Ok as i32
}

/// # Safety
/// `ms` must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_parameter_count(ms: *const MrtMs, out: *mut u64) -> i32 {
    let (Some(ms), false) = (unsafe { ms.as_ref() }, out.is_null()) else {
        return fail_null("ms/out");
    };
    unsafe { *out = ms.0.storage().total_parameters as u64 };
    MrtStatus::Ok as i32
}

/// # Safety
/// `ms` must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_compression_ratio(ms: *const MrtMs, out: *mut f64) -> i32 {
    let (Some(ms), false) = (unsafe { ms.as_ref() }, out.is_null()) else {
        return fail_null("ms/out");
    };
    unsafe { *out = ms.0.storage().compression_ratio };
    MrtStatus::Ok as i32
}

/// # Safety
/// `ms` must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_stability_margin(ms: *const MrtMs, out: *mut f64) -> i32 {
    let (Some(ms), false) = (unsafe { ms.as_ref() }, out.is_null()) else {
        return fail_null("ms/out");
    };
    match ms.0.stability_margin() {
        Ok(m) => {
            unsafe { *out = m };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}

/// Relative Frobenius error of the archive against an original tensor.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn mrt_ms_relative_error(
    ms: *const MrtMs,
    original: *const MrtTensor,
    out: *mut f64,
) -> i32 {
    let (Some(ms), Some(orig), false) =
        (unsafe { ms.as_ref() }, unsafe { original.as_ref() }, out.is_null())
    else {
        return fail_null("ms/original/out");
    };
    let recon = match ms.0.reconstruct() {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    match recon.sub(&orig.0) {
        Ok(diff) => {
            let denom = orig.0.frobenius_norm().max(f64::MIN_POSITIVE);
            unsafe { *out = diff.frobenius_norm() / denom };
            MrtStatus::Ok as i32
        }
        Err(e) => fail(e),
    }
}
