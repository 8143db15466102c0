//! C ABI over `pgas-stream`.
//!
//! Every fallible call returns a [`PsStatus`] and writes results through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`ps_last_error_message`]. Handles are opaque and owned by the caller, who
//! releases them with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pgas_stream::bench::{self, BenchError};
use pgas_stream::config::{ConfigError, RunConfig};
use pgas_stream::darray::{DArray, DArrayError};
use pgas_stream::dmap::{DistKind, DistSpec, Index, Map, MapError};
use pgas_stream::runtime::{RuntimeError, Triples, ENV_PREFIX};
use pgas_stream::stream::{self, Kernel, StreamError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    GridPidMismatch = 3,
    DuplicatePid = 4,
    OverlapOnNonBlock = 5,
    RankMismatch = 6,
    EmptyGrid = 7,
    ZeroBlockSize = 8,
    UnknownPid = 9,
    DimensionTooSmall = 10,
    IndexOutOfBounds = 11,
    NotLocal = 12,
    LocalIndexOutOfBounds = 13,
    AllocationFailure = 14,
    PidMismatch = 15,
    MalformedHalo = 16,
    ZeroTrials = 17,
    ZeroElements = 18,
    BadQ = 19,
    ZeroTimeout = 20,
    Overflow = 21,
    RankOutOfRange = 22,
    LengthMismatch = 23,
    ZeroTime = 24,
    Runtime = 25,
    Panic = 26,
}

const STATUS_NAMES: [&str; 27] = [
    "Ok",
    "NullPointer",
    "InvalidArgument",
    "GridPidMismatch",
    "DuplicatePid",
    "OverlapOnNonBlock",
    "RankMismatch",
    "EmptyGrid",
    "ZeroBlockSize",
    "UnknownPid",
    "DimensionTooSmall",
    "IndexOutOfBounds",
    "NotLocal",
    "LocalIndexOutOfBounds",
    "AllocationFailure",
    "PidMismatch",
    "MalformedHalo",
    "ZeroTrials",
    "ZeroElements",
    "BadQ",
    "ZeroTimeout",
    "Overflow",
    "RankOutOfRange",
    "LengthMismatch",
    "ZeroTime",
    "Runtime",
    "Panic",
];

pub const PS_DIST_BLOCK: u32 = 0;
pub const PS_DIST_CYCLIC: u32 = 1;
pub const PS_DIST_BLOCK_CYCLIC: u32 = 2;

/// Distribution of one dimension. `block_size` is read for block-cyclic only.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsDist {
    pub kind: u32,
    pub block_size: usize,
}

/// Opaque map handle.
pub struct PsMap(Map);

/// Opaque distributed array handle, one pid's piece.
pub struct PsDArray(DArray);

/// Inputs of one STREAM run over a `[1, np]` row map.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsStreamParams {
    pub np: usize,
    pub threads: usize,
    pub n_per_proc: usize,
    pub n_trials: usize,
    pub q: f64,
    pub dist: PsDist,
    pub overlap: usize,
}

/// One pid's measurements. Kernel arrays are ordered copy, scale, add, triad.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsRankResult {
    pub pid: usize,
    pub local_elements: usize,
    pub threads: usize,
    pub n_trials: usize,
    pub times: [f64; 4],
    pub bandwidths: [f64; 4],
    pub validated: bool,
    pub max_rel_err: [f64; 3],
    pub tolerance: f64,
    pub checksum: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PsStatus, String);

impl Failure {
    fn new(status: PsStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<MapError> for Failure {
    fn from(e: MapError) -> Self {
        let status = match e {
            MapError::GridPidMismatch { .. } => PsStatus::GridPidMismatch,
            MapError::DuplicatePid(_) => PsStatus::DuplicatePid,
            MapError::OverlapOnNonBlock { .. } => PsStatus::OverlapOnNonBlock,
            MapError::RankMismatch { .. } => PsStatus::RankMismatch,
            MapError::EmptyGrid { .. } => PsStatus::EmptyGrid,
            MapError::ZeroBlockSize { .. } => PsStatus::ZeroBlockSize,
            MapError::UnknownPid(_) => PsStatus::UnknownPid,
            MapError::DimensionTooSmall { .. } => PsStatus::DimensionTooSmall,
            MapError::IndexOutOfBounds { .. } => PsStatus::IndexOutOfBounds,
            MapError::NotLocal { .. } => PsStatus::NotLocal,
            MapError::LocalIndexOutOfBounds { .. } => PsStatus::LocalIndexOutOfBounds,
        };
        Failure(status, e.to_string())
    }
}

impl From<DArrayError> for Failure {
    fn from(e: DArrayError) -> Self {
        let msg = e.to_string();
        let status = match e {
            DArrayError::Map(m) => return m.into(),
            DArrayError::AllocationFailure { .. } => PsStatus::AllocationFailure,
            DArrayError::PidMismatch { .. } => PsStatus::PidMismatch,
            DArrayError::MalformedHalo { .. } => PsStatus::MalformedHalo,
            _ => PsStatus::Runtime,
        };
        Failure(status, msg)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let msg = e.to_string();
        let status = match e {
            ConfigError::Map(m) => return m.into(),
            ConfigError::ZeroTrials => PsStatus::ZeroTrials,
            ConfigError::ZeroElements => PsStatus::ZeroElements,
            ConfigError::BadQ(_) => PsStatus::BadQ,
            ConfigError::ZeroTimeout => PsStatus::ZeroTimeout,
            ConfigError::Overflow { .. } => PsStatus::Overflow,
        };
        Failure(status, msg)
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let msg = e.to_string();
        let status = match e {
            BenchError::Config(c) => return c.into(),
            BenchError::Array(a) => return a.into(),
            BenchError::Runtime(RuntimeError::RankOutOfRange { .. }) => PsStatus::RankOutOfRange,
            BenchError::Stream(StreamError::LengthMismatch { .. }) => PsStatus::LengthMismatch,
            BenchError::Stream(StreamError::ZeroTime { .. }) => PsStatus::ZeroTime,
            _ => PsStatus::Runtime,
        };
        Failure(status, msg)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside pgas-stream");
            PsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(PsStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_index(p: *const usize, what: &str) -> Result<Index, Failure> {
    non_null(p, what)?;
    Ok([*p, *p.add(1)])
}

unsafe fn write_index(p: *mut usize, v: Index) -> Result<(), Failure> {
    non_null(p, "output index")?;
    *p = v[0];
    *p.add(1) = v[1];
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn map_ref<'a>(map: *const PsMap) -> Result<&'a Map, Failure> {
    non_null(map, "map")?;
    Ok(&(*map).0)
}

unsafe fn array_ref<'a>(arr: *const PsDArray) -> Result<&'a DArray, Failure> {
    non_null(arr, "array")?;
    Ok(&(*arr).0)
}

unsafe fn array_mut<'a>(arr: *mut PsDArray) -> Result<&'a mut DArray, Failure> {
    non_null(arr, "array")?;
    Ok(&mut (*arr).0)
}

fn dist_spec(d: PsDist) -> Result<DistSpec, Failure> {
    let kind = match d.kind {
        PS_DIST_BLOCK => DistKind::Block,
        PS_DIST_CYCLIC => DistKind::Cyclic,
        PS_DIST_BLOCK_CYCLIC => DistKind::BlockCyclic,
        k => return Err(Failure::new(PsStatus::InvalidArgument, format!("unknown distribution kind {k}"))),
    };
    let block_size = if kind == DistKind::BlockCyclic { d.block_size } else { 1 };
    Ok(DistSpec::new(kind, block_size))
}

/// Name of a status code, or "Unknown". The string is static.
#[no_mangle]
pub extern "C" fn ps_status_name(status: c_int) -> *const c_char {
    static NAMES: std::sync::OnceLock<Vec<CString>> = std::sync::OnceLock::new();
    static UNKNOWN: &std::ffi::CStr = c"Unknown";
    let names = NAMES.get_or_init(|| STATUS_NAMES.iter().map(|n| CString::new(*n).unwrap()).collect());
    usize::try_from(status).ok().and_then(|i| names.get(i)).map_or(UNKNOWN.as_ptr(), |n| n.as_ptr())
}

/// Message of the last failure on this thread. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Prefix of the environment variables the library reads.
#[no_mangle]
pub extern "C" fn ps_env_prefix() -> *const c_char {
    static PREFIX: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    PREFIX.get_or_init(|| CString::new(ENV_PREFIX).unwrap()).as_ptr()
}

/// True: [`ps_darray_local`] hands out the array's own storage, not a copy.
#[no_mangle]
pub extern "C" fn ps_local_is_zero_copy() -> bool {
    true
}

/// Builds a map from a grid, one distribution per dimension, the pid list in
/// row-major slot order and per-dimension overlap.
///
/// # Safety
/// Each pointer must reference the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_map_new(
    grid: *const usize,
    grid_len: usize,
    dists: *const PsDist,
    dists_len: usize,
    pids: *const usize,
    pids_len: usize,
    overlap: *const usize,
    overlap_len: usize,
    out: *mut *mut PsMap,
) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = slice(grid, grid_len, "grid")?;
        let dists = slice(dists, dists_len, "dists")?.iter().map(|&d| dist_spec(d)).collect::<Result<Vec<_>, _>>()?;
        let pids = slice(pids, pids_len, "pids")?;
        let overlap = slice(overlap, overlap_len, "overlap")?;
        let map = Map::new(grid, &dists, pids, overlap)?;
        *out = Box::into_raw(Box::new(PsMap(map)));
        Ok(())
    })
}

/// `[1, np]` grid with pids `0..np` and `dist` along the second dimension.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_map_row(np: usize, dist: PsDist, overlap: usize, out: *mut *mut PsMap) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        let map = Map::row(np, dist_spec(dist)?, overlap)?;
        *out = Box::into_raw(Box::new(PsMap(map)));
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_map_free(map: *mut PsMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_map_np(map: *const PsMap, out: *mut usize) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = map_ref(map)?.np();
        Ok(())
    })
}

/// Pid owning global `index` of an array with global `dims`.
///
/// # Safety
/// `dims` and `index` point to two elements each; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ps_map_owner(map: *const PsMap, dims: *const usize, index: *const usize, out: *mut usize) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = map_ref(map)?.owner(read_index(dims, "dims")?, read_index(index, "index")?)?;
        Ok(())
    })
}

/// Local position of global `index` on `pid`, owned or halo.
///
/// # Safety
/// `dims`, `index` and `out` point to two elements each.
#[no_mangle]
pub unsafe extern "C" fn ps_map_global_to_local(map: *const PsMap, dims: *const usize, pid: usize, index: *const usize, out: *mut usize) -> PsStatus {
    guard(|| {
        let l = map_ref(map)?.global_to_local(read_index(dims, "dims")?, pid, read_index(index, "index")?)?;
        write_index(out, l)
    })
}

/// Global index of local position `local` on `pid`.
///
/// # Safety
/// `dims`, `local` and `out` point to two elements each.
#[no_mangle]
pub unsafe extern "C" fn ps_map_local_to_global(map: *const PsMap, dims: *const usize, pid: usize, local: *const usize, out: *mut usize) -> PsStatus {
    guard(|| {
        let g = map_ref(map)?.local_to_global(read_index(dims, "dims")?, pid, read_index(local, "local")?)?;
        write_index(out, g)
    })
}

/// Grid coordinates of `pid`.
///
/// # Safety
/// `out` points to two writable elements.
#[no_mangle]
pub unsafe extern "C" fn ps_map_grid_coords(map: *const PsMap, pid: usize, out: *mut usize) -> PsStatus {
    guard(|| {
        let c = map_ref(map)?.grid_coords(pid)?;
        write_index(out, c)
    })
}

/// Shape of the block `pid` owns, halo excluded.
///
/// # Safety
/// `dims` and `out` point to two elements each.
#[no_mangle]
pub unsafe extern "C" fn ps_map_local_shape(map: *const PsMap, dims: *const usize, pid: usize, out: *mut usize) -> PsStatus {
    guard(|| {
        let ext = map_ref(map)?.local_extent(read_index(dims, "dims")?, pid)?;
        write_index(out, ext.owned_shape())
    })
}

/// Zero-filled `rows x cols` array as seen by `pid`. The map is copied.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_zeros(rows: usize, cols: usize, map: *const PsMap, pid: usize, out: *mut *mut PsDArray) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        let arr = DArray::zeros([rows, cols], map_ref(map)?, pid)?;
        *out = Box::into_raw(Box::new(PsDArray(arr)));
        Ok(())
    })
}

/// # Safety
/// `arr` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_free(arr: *mut PsDArray) {
    if !arr.is_null() {
        drop(Box::from_raw(arr));
    }
}

/// Owned elements of the local piece, row-major, without copying. The pointer
/// stays valid until the array is freed.
///
/// # Safety
/// `arr` must be a live handle; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_local(arr: *mut PsDArray, data: *mut *mut f64, len: *mut usize) -> PsStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(len, "len")?;
        let view = array_mut(arr)?.local_view_mut();
        *len = view.len();
        *data = if view.is_empty() { ptr::null_mut() } else { view.as_mut_ptr() };
        Ok(())
    })
}

/// Local shape of the owned block.
///
/// # Safety
/// `arr` must be a live handle; `out` points to two writable elements.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_local_shape(arr: *const PsDArray, out: *mut usize) -> PsStatus {
    guard(|| write_index(out, array_ref(arr)?.extent().owned_shape()))
}

/// Sets every local element, halo included.
///
/// # Safety
/// `arr` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_fill(arr: *mut PsDArray, value: f64) -> PsStatus {
    guard(|| {
        array_mut(arr)?.fill(value);
        Ok(())
    })
}

/// Reads global `index` from the local piece.
///
/// # Safety
/// `index` points to two elements; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_get(arr: *const PsDArray, index: *const usize, out: *mut f64) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = array_ref(arr)?.get(read_index(index, "index")?)?;
        Ok(())
    })
}

/// Writes global `index` in the local piece.
///
/// # Safety
/// `index` points to two elements.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_set(arr: *mut PsDArray, index: *const usize, value: f64) -> PsStatus {
    guard(|| {
        let index = read_index(index, "index")?;
        array_mut(arr)?.set(index, value)?;
        Ok(())
    })
}

/// Correctly rounded sum of the owned elements.
///
/// # Safety
/// `arr` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_darray_checksum(arr: *const PsDArray, out: *mut f64) -> PsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = array_ref(arr)?.checksum();
        Ok(())
    })
}

/// Single process, one thread, 2^24 elements, Nt = 10, block, no overlap.
#[no_mangle]
pub extern "C" fn ps_stream_params_default() -> PsStreamParams {
    let cfg = RunConfig::default();
    PsStreamParams {
        np: cfg.triples.np(),
        threads: cfg.triples.n_tpn,
        n_per_proc: cfg.n_per_proc,
        n_trials: cfg.n_trials,
        q: cfg.q,
        dist: PsDist { kind: PS_DIST_BLOCK, block_size: cfg.block_size },
        overlap: cfg.overlap,
    }
}

/// Runs the four kernels on `pid`'s piece, validates and computes bandwidths,
/// exactly as a benchmark worker does but without communication or pinning.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_run_stream(params: *const PsStreamParams, pid: usize, out: *mut PsRankResult) -> PsStatus {
    guard(|| {
        non_null(params, "params")?;
        non_null(out, "out")?;
        let p = *params;
        let dist = dist_spec(p.dist)?;
        let triples = Triples::new(1, p.np, p.threads).map_err(|e| Failure::new(PsStatus::InvalidArgument, e))?;
        let cfg = RunConfig {
            triples,
            n_per_proc: p.n_per_proc,
            n_trials: p.n_trials,
            q: p.q,
            dist: dist.kind,
            block_size: dist.block_size,
            overlap: p.overlap,
            pin: false,
            ..RunConfig::default()
        };
        let r = bench::measure_local(&cfg, pid, "ffi")?;
        let v = r.validation;
        *out = PsRankResult {
            pid: r.pid,
            local_elements: r.local_elements,
            threads: r.threads,
            n_trials: r.n_trials,
            times: Kernel::ALL.map(|k| r.times.get(k)),
            bandwidths: Kernel::ALL.map(|k| r.bandwidths.get(k)),
            validated: v.pass,
            max_rel_err: [v.max_rel_err_a, v.max_rel_err_b, v.max_rel_err_c],
            tolerance: v.tolerance,
            checksum: r.checksum,
        };
        Ok(())
    })
}

/// Bytes one trial of kernel `k` (0 copy .. 3 triad) moves per element, or 0.
#[no_mangle]
pub extern "C" fn ps_kernel_bytes_per_element(k: c_int) -> u64 {
    usize::try_from(k).ok().and_then(|i| Kernel::ALL.get(i)).map_or(0, |k| k.bytes_per_element())
}

/// max(1e-10, 20 Nt eps), the relative tolerance validation uses.
#[no_mangle]
pub extern "C" fn ps_tolerance(n_trials: usize) -> f64 {
    stream::tolerance(n_trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_names_line_up() {
        for (i, name) in STATUS_NAMES.iter().enumerate() {
            let got = unsafe { std::ffi::CStr::from_ptr(ps_status_name(i as c_int)) };
            assert_eq!(got.to_str().unwrap(), *name);
        }
        assert_eq!(STATUS_NAMES[PsStatus::Panic as usize], "Panic");
        assert_eq!(STATUS_NAMES[PsStatus::NotLocal as usize], "NotLocal");
        let unknown = unsafe { std::ffi::CStr::from_ptr(ps_status_name(-1)) };
        assert_eq!(unknown.to_str().unwrap(), "Unknown");
    }

    #[test]
    fn map_errors_keep_their_names() {
        let e = Failure::from(MapError::GridPidMismatch { grid_slots: 2, pids: 3 });
        assert_eq!(STATUS_NAMES[e.0 as usize], "GridPidMismatch");
        let e = Failure::from(BenchError::Config(ConfigError::ZeroTrials));
        assert_eq!(e.0, PsStatus::ZeroTrials);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), PsStatus::Panic);
    }
}
