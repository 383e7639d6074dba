//! C ABI over the fieldmap library.
//!
//! Every function returns an [`FmStatus`]. On failure a message is kept per
//! thread and can be read with [`fm_last_error`]. Handles are opaque; each
//! constructor has a matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fieldmap::gp::ExactPosterior;
use fieldmap::output::write_outputs;
use fieldmap::protocol::{decode_packet, encode_packet, Packet};
use fieldmap::sim::RunArtifacts;
use fieldmap::{run_scenario, AugmentedDataset, Error, Kernel, Measurement, ScenarioConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    Numerical = 5,
    MalformedPacket = 6,
    Io = 7,
    BufferTooSmall = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Scenario configuration handle.
pub struct FmConfig(ScenarioConfig);

/// Finished run handle.
pub struct FmRun(RunArtifacts);

/// Fitted exact GP posterior handle.
pub struct FmGp {
    post: ExactPosterior,
    dim: usize,
}

/// Network metrics of one step. Absent values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FmNetworkMetrics {
    pub step: u32,
    pub local_rmse: f64,
    pub local_nlpd: f64,
    pub overlap_rmse: f64,
    pub overlap_nlpd: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FmStatus, msg: impl Into<String>) -> FmStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> FmStatus {
    let status = match &e {
        Error::ConfigInvalid(_) => FmStatus::InvalidConfig,
        Error::InvalidArgument(_) | Error::EmptyEvaluationSet | Error::EmptyLibrary => FmStatus::InvalidArgument,
        Error::SingularSystem(_) | Error::DegenerateOverlap | Error::NotBoxRegion => FmStatus::Numerical,
        Error::MalformedPacket(_) => FmStatus::MalformedPacket,
        Error::Io { .. } => FmStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> FmStatus) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == FmStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FmStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FmStatus> {
    if p.is_null() {
        return Err(fail(FmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], FmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(FmStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a TOML scenario.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_config_from_toml(toml: *const c_char, out: *mut *mut FmConfig) -> FmStatus {
    guard(|| {
        non_null!(out);
        let text = try_status!(str_arg(toml, "toml"));
        let cfg = try_status!(ScenarioConfig::from_toml_str(text).map_err(from_error));
        try_status!(cfg.validate().map_err(from_error));
        *out = Box::into_raw(Box::new(FmConfig(cfg)));
        FmStatus::Ok
    })
}

/// Loads a bundled preset by name.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_config_preset(name: *const c_char, out: *mut *mut FmConfig) -> FmStatus {
    guard(|| {
        non_null!(out);
        let name = try_status!(str_arg(name, "name"));
        match ScenarioConfig::preset(name) {
            Some(cfg) => {
                *out = Box::into_raw(Box::new(FmConfig(cfg)));
                FmStatus::Ok
            }
            None => fail(FmStatus::InvalidArgument, format!("unknown preset {name:?}")),
        }
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fm_config_set_seed(cfg: *mut FmConfig, seed: u64) -> FmStatus {
    guard(|| {
        non_null!(cfg);
        (*cfg).0.run.seed = seed;
        FmStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fm_config_set_steps(cfg: *mut FmConfig, steps: u32) -> FmStatus {
    guard(|| {
        non_null!(cfg);
        if steps == 0 {
            return fail(FmStatus::InvalidArgument, "steps must be positive");
        }
        (*cfg).0.run.steps = steps;
        FmStatus::Ok
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_config_free(cfg: *mut FmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the scenario, plus the self-only baseline when the config asks for it.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_run_scenario(cfg: *const FmConfig, out: *mut *mut FmRun) -> FmStatus {
    guard(|| {
        non_null!(cfg, out);
        let cfg = &(*cfg).0;
        try_status!(cfg.validate().map_err(from_error));
        let run = try_status!(run_scenario(cfg).map_err(from_error));
        *out = Box::into_raw(Box::new(FmRun(run)));
        FmStatus::Ok
    })
}

/// Number of recorded steps.
///
/// # Safety
/// `run` must be a live run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_run_step_count(run: *const FmRun, out: *mut usize) -> FmStatus {
    guard(|| {
        non_null!(run, out);
        *out = (*run).0.shared.history.len();
        FmStatus::Ok
    })
}

/// Network metrics at history index `index`, from the shared run or, when
/// `baseline` is nonzero, from the self-only run.
///
/// # Safety
/// `run` must be a live run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_run_metrics(
    run: *const FmRun,
    index: usize,
    baseline: i32,
    out: *mut FmNetworkMetrics,
) -> FmStatus {
    guard(|| {
        non_null!(run, out);
        let a = &(*run).0;
        let world = if baseline != 0 {
            match &a.baseline {
                Some(b) => b,
                None => return fail(FmStatus::InvalidArgument, "run has no baseline"),
            }
        } else {
            &a.shared
        };
        let Some(rec) = world.history.get(index) else {
            return fail(
                FmStatus::OutOfRange,
                format!("step index {index} out of range 0..{}", world.history.len()),
            );
        };
        let m = &rec.metrics;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = FmNetworkMetrics {
            step: rec.step,
            local_rmse: nan(m.network_local_rmse),
            local_nlpd: nan(m.network_local_nlpd),
            overlap_rmse: nan(m.network_overlap_rmse),
            overlap_nlpd: nan(m.network_overlap_nlpd),
        };
        FmStatus::Ok
    })
}

/// Writes CSV outputs, the packet log and the manifest into `dir`.
///
/// # Safety
/// `run` must be a live run handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_run_write_outputs(run: *const FmRun, dir: *const c_char) -> FmStatus {
    guard(|| {
        non_null!(run);
        let dir = try_status!(str_arg(dir, "dir"));
        try_status!(write_outputs(&(*run).0, dir).map_err(from_error));
        FmStatus::Ok
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_run_free(run: *mut FmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Fits an exact GP to `n` points. `locations` holds `n * dim` coordinates,
/// one point per row.
///
/// # Safety
/// `locations`, `values` and `noise_variances` must point to arrays of the
/// stated lengths and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_gp_fit(
    signal_scale: f64,
    length_scale: f64,
    dim: usize,
    locations: *const f64,
    values: *const f64,
    noise_variances: *const f64,
    n: usize,
    out: *mut *mut FmGp,
) -> FmStatus {
    guard(|| {
        non_null!(out);
        if dim == 0 {
            return fail(FmStatus::InvalidArgument, "dim must be positive");
        }
        let Some(total) = n.checked_mul(dim) else {
            return fail(FmStatus::InvalidArgument, "n * dim overflows");
        };
        let locs = try_status!(slice_arg(locations, total, "locations"));
        let ys = try_status!(slice_arg(values, n, "values"));
        let noise = try_status!(slice_arg(noise_variances, n, "noise_variances"));
        let kernel = try_status!(Kernel::new(signal_scale, length_scale).map_err(from_error));
        let mut data = AugmentedDataset::new();
        for i in 0..n {
            let m = try_status!(
                Measurement::new(locs[i * dim..(i + 1) * dim].to_vec(), ys[i], noise[i]).map_err(from_error)
            );
            data.push_raw(m);
        }
        let post = try_status!(ExactPosterior::fit(kernel, &data).map_err(from_error));
        *out = Box::into_raw(Box::new(FmGp { post, dim }));
        FmStatus::Ok
    })
}

/// Posterior mean and variance at one point of dimension `dim`.
///
/// # Safety
/// `gp` must be a live GP handle, `x` must hold `dim` values, and `mean`
/// and `variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_gp_predict(
    gp: *const FmGp,
    x: *const f64,
    dim: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> FmStatus {
    guard(|| {
        non_null!(gp, mean, variance);
        let x = try_status!(slice_arg(x, dim, "x"));
        let gp = &*gp;
        if gp.dim != dim {
            return fail(FmStatus::InvalidArgument, format!("expected dimension {}, got {dim}", gp.dim));
        }
        let p = gp.post.predict(x);
        *mean = p.mean;
        *variance = p.variance;
        FmStatus::Ok
    })
}

/// # Safety
/// `gp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_gp_free(gp: *mut FmGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Encoded size in bytes of a packet with a `dim`-dimensional location.
#[no_mangle]
pub extern "C" fn fm_packet_encoded_len(dim: usize) -> usize {
    12 + 8 * (dim + 2)
}

/// Encodes one packet into `buf`. `written` receives the encoded length,
/// also when the buffer is too small.
///
/// # Safety
/// `location` must hold `dim` values, `buf` must hold `cap` bytes and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_packet_encode(
    sender_id: u32,
    step: u32,
    location: *const f64,
    dim: usize,
    mean: f64,
    variance: f64,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FmStatus {
    guard(|| {
        non_null!(written);
        let loc = try_status!(slice_arg(location, dim, "location"));
        let bytes = encode_packet(&Packet {
            location: loc.to_vec(),
            mean,
            variance,
            sender_id,
            step,
        });
        *written = bytes.len();
        if cap < bytes.len() {
            return fail(
                FmStatus::BufferTooSmall,
                format!("need {} bytes, buffer holds {cap}", bytes.len()),
            );
        }
        non_null!(buf);
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        FmStatus::Ok
    })
}

/// Decodes one packet record. `dim` receives the location dimension, also
/// when `location_cap` is too small.
///
/// # Safety
/// `buf` must hold `len` bytes, `location` must hold `location_cap` values,
/// and the remaining output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_packet_decode(
    buf: *const u8,
    len: usize,
    sender_id: *mut u32,
    step: *mut u32,
    location: *mut f64,
    location_cap: usize,
    dim: *mut usize,
    mean: *mut f64,
    variance: *mut f64,
) -> FmStatus {
    guard(|| {
        non_null!(sender_id, step, dim, mean, variance);
        let bytes = try_status!(slice_arg(buf, len, "buf"));
        let p = try_status!(decode_packet(bytes).map_err(from_error));
        *dim = p.location.len();
        if location_cap < p.location.len() {
            return fail(
                FmStatus::BufferTooSmall,
                format!("need {} location slots, buffer holds {location_cap}", p.location.len()),
            );
        }
        if !p.location.is_empty() {
            non_null!(location);
            ptr::copy_nonoverlapping(p.location.as_ptr(), location, p.location.len());
        }
        *sender_id = p.sender_id;
        *step = p.step;
        *mean = p.mean;
        *variance = p.variance;
        FmStatus::Ok
    })
}
