//! C interface to the `strf` library.
//!
//! Objects are handed out as opaque pointers and released with the matching
//! `*_free`. Every fallible call returns a status code (`STRF_OK` on
//! success) and leaves a message for `strf_last_error` on failure. Panics
//! are caught at the boundary and reported as `STRF_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use strf::engine::FrameTensor;
use strf::events::{read_events, EventStream};
use strf::net::{forward, init_parameters, read_checkpoint, NetworkConfig, Parameters};
use strf::spatial::{build_bank, BankParams, KernelBank};
use strf::stats::{cohens_d, pooled_sd, random_baseline, GroupSummary};
use strf::temporal::{li_step, lif_step, LiChannel, LifChannel, LifParams};
use strf::StrfError;

pub const STRF_OK: i32 = 0;
pub const STRF_ERR_NULL: i32 = 1;
pub const STRF_ERR_DOMAIN: i32 = 2;
pub const STRF_ERR_CONFIG: i32 = 3;
pub const STRF_ERR_IO: i32 = 4;
pub const STRF_ERR_FORMAT: i32 = 5;
pub const STRF_ERR_NON_FINITE: i32 = 6;
pub const STRF_ERR_BUFFER: i32 = 7;
pub const STRF_ERR_PANIC: i32 = 8;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &StrfError) -> i32 {
    match e {
        StrfError::Domain(_) => STRF_ERR_DOMAIN,
        StrfError::Config(_) => STRF_ERR_CONFIG,
        StrfError::NonFinite { .. } => STRF_ERR_NON_FINITE,
        StrfError::Format { .. } | StrfError::Json(_) => STRF_ERR_FORMAT,
        StrfError::Io { .. } => STRF_ERR_IO,
    }
}

/// Internal failure carried to the boundary.
enum Fail {
    Lib(StrfError),
    Null(&'static str),
    Buffer(String),
}

impl From<StrfError> for Fail {
    fn from(e: StrfError) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => STRF_OK,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            STRF_ERR_NULL
        }
        Ok(Err(Fail::Buffer(msg))) => {
            set_error(msg);
            STRF_ERR_BUFFER
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            STRF_ERR_PANIC
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Lib(StrfError::Config("path is not UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    // SAFETY: checked non-null above; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version and file format identifiers, as a static string.
#[no_mangle]
pub extern "C" fn strf_version() -> *const c_char {
    static VERSION: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(strf::cli::version_string()).unwrap_or_default())
        .as_ptr()
}

/// Copy the last error message of this thread into `buf` (NUL terminated,
/// truncated to fit). Returns the full message length without the NUL, or 0
/// when there is none.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn strf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

// ---- kernel banks ----

pub struct StrfKernelBank {
    bank: KernelBank,
}

/// Build a bank of `n_orientations x n_scales x n_skews x 3` kernels sampled
/// on a `grid x grid` lattice.
///
/// # Safety
/// `scales` and `skews` must point to `n_scales` and `n_skews` doubles.
#[no_mangle]
pub unsafe extern "C" fn strf_bank_new(
    n_orientations: usize,
    scales: *const f64,
    n_scales: usize,
    skews: *const f64,
    n_skews: usize,
    grid: usize,
    supersample: usize,
    out: *mut *mut StrfKernelBank,
) -> i32 {
    guard(|| {
        let params = BankParams {
            n_orientations,
            scales: slice(scales, n_scales, "scales")?.to_vec(),
            skews: slice(skews, n_skews, "skews")?.to_vec(),
            grid,
            supersample,
            ..BankParams::default()
        };
        let bank = build_bank(&params)?;
        boxed(out, StrfKernelBank { bank })
    })
}

/// Number of kernels, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn strf_bank_len(bank: *const StrfKernelBank) -> usize {
    bank.as_ref().map_or(0, |b| b.bank.len())
}

/// Copy kernel `index` (row-major, `grid * grid` values) into `out`.
///
/// # Safety
/// `bank` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn strf_bank_kernel(bank: *const StrfKernelBank, index: usize, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let b = non_null(bank, "bank")?;
        let k = b.bank.kernels.get(index).ok_or_else(|| Fail::Buffer(format!("kernel {index} out of range")))?;
        if len < k.weights.len() {
            return Err(Fail::Buffer(format!("kernel needs {} values, buffer holds {len}", k.weights.len())));
        }
        slice_mut(out, len, "out")?[..k.weights.len()].copy_from_slice(&k.weights);
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn strf_bank_free(bank: *mut StrfKernelBank) {
    free(bank)
}

// ---- temporal units ----

pub struct StrfLi {
    ch: LiChannel,
}

/// Leaky integrator with time constant `mu`, starting at rest.
///
/// # Safety
/// `out` must be a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn strf_li_new(mu: f64, out: *mut *mut StrfLi) -> i32 {
    guard(|| boxed(out, StrfLi { ch: LiChannel::new(mu)? }))
}

/// Advance by one step of length `dt`; the new state goes to `state`.
///
/// # Safety
/// `li` must be a live handle and `state` writable.
#[no_mangle]
pub unsafe extern "C" fn strf_li_step(li: *mut StrfLi, input: f64, dt: f64, state: *mut f64) -> i32 {
    guard(|| {
        let li = non_null_mut(li, "li")?;
        if !(dt > 0.0) {
            return Err(StrfError::Domain(format!("dt must be positive, got {dt}")).into());
        }
        let v = li_step(&mut li.ch, input, dt);
        *non_null_mut(state, "state")? = v;
        Ok(())
    })
}

/// # Safety
/// `li` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn strf_li_free(li: *mut StrfLi) {
    free(li)
}

pub struct StrfLif {
    ch: LifChannel,
    t: usize,
}

/// Leaky integrate-and-fire unit with threshold `theta` and soft reset.
///
/// # Safety
/// `out` must be a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn strf_lif_new(mu: f64, theta: f64, out: *mut *mut StrfLif) -> i32 {
    guard(|| {
        let params = LifParams { theta, ..LifParams::default() };
        boxed(out, StrfLif { ch: LifChannel::new(mu, params)?, t: 0 })
    })
}

/// Advance one step; writes the membrane after any reset and whether it spiked.
///
/// # Safety
/// `lif` must be a live handle; `membrane` and `spiked` writable.
#[no_mangle]
pub unsafe extern "C" fn strf_lif_step(lif: *mut StrfLif, input: f64, dt: f64, membrane: *mut f64, spiked: *mut bool) -> i32 {
    guard(|| {
        let lif = non_null_mut(lif, "lif")?;
        if !(dt > 0.0) {
            return Err(StrfError::Domain(format!("dt must be positive, got {dt}")).into());
        }
        let (m, s) = lif_step(&mut lif.ch, input, lif.t, dt);
        lif.t += 1;
        *non_null_mut(membrane, "membrane")? = m;
        *non_null_mut(spiked, "spiked")? = s;
        Ok(())
    })
}

/// # Safety
/// `lif` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn strf_lif_free(lif: *mut StrfLif) {
    free(lif)
}

// ---- event streams ----

pub struct StrfEvents {
    stream: EventStream,
}

/// Read an EVS1 event file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn strf_events_read(path: *const c_char, out: *mut *mut StrfEvents) -> i32 {
    guard(|| {
        let stream = read_events(&path_arg(path)?)?;
        boxed(out, StrfEvents { stream })
    })
}

/// Sensor height, width and frame count.
///
/// # Safety
/// `events` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn strf_events_dims(events: *const StrfEvents, height: *mut usize, width: *mut usize, n_frames: *mut usize) -> i32 {
    guard(|| {
        let e = &non_null(events, "events")?.stream;
        *non_null_mut(height, "height")? = e.height;
        *non_null_mut(width, "width")? = e.width;
        *non_null_mut(n_frames, "n_frames")? = e.n_frames;
        Ok(())
    })
}

/// Number of events, or 0 for a null handle.
///
/// # Safety
/// `events` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn strf_events_len(events: *const StrfEvents) -> usize {
    events.as_ref().map_or(0, |e| e.stream.len())
}

/// Event `index` as (frame, x, y, polarity).
///
/// # Safety
/// `events` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn strf_events_get(
    events: *const StrfEvents,
    index: usize,
    t: *mut u32,
    x: *mut u16,
    y: *mut u16,
    p: *mut i8,
) -> i32 {
    guard(|| {
        let e = &non_null(events, "events")?.stream;
        let ev = e.events.get(index).ok_or_else(|| Fail::Buffer(format!("event {index} out of range")))?;
        *non_null_mut(t, "t")? = ev.t;
        *non_null_mut(x, "x")? = ev.x;
        *non_null_mut(y, "y")? = ev.y;
        *non_null_mut(p, "p")? = ev.p;
        Ok(())
    })
}

/// # Safety
/// `events` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn strf_events_free(events: *mut StrfEvents) {
    free(events)
}

// ---- networks ----

pub struct StrfNetwork {
    config: NetworkConfig,
    params: Parameters,
}

/// Load a parameter checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn strf_network_load(path: *const c_char, out: *mut *mut StrfNetwork) -> i32 {
    guard(|| {
        let (config, params) = read_checkpoint(&path_arg(path)?)?;
        boxed(out, StrfNetwork { config, params })
    })
}

/// Fresh network from a JSON configuration (null means all defaults).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn strf_network_init(config_json: *const c_char, out: *mut *mut StrfNetwork) -> i32 {
    guard(|| {
        let config: NetworkConfig = if config_json.is_null() {
            NetworkConfig::default()
        } else {
            let s = CStr::from_ptr(config_json).to_str().map_err(|_| StrfError::Config("config is not UTF-8".into()))?;
            serde_json::from_str(s).map_err(|e| StrfError::Config(e.to_string()))?
        };
        let params = init_parameters(&config)?;
        boxed(out, StrfNetwork { config, params })
    })
}

/// Input height and width, and the number of parameters.
///
/// # Safety
/// `net` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn strf_network_dims(net: *const StrfNetwork, height: *mut usize, width: *mut usize, n_params: *mut usize) -> i32 {
    guard(|| {
        let n = non_null(net, "net")?;
        *non_null_mut(height, "height")? = n.config.height;
        *non_null_mut(width, "width")? = n.config.width;
        *non_null_mut(n_params, "n_params")? = n.params.len();
        Ok(())
    })
}

/// Run on `n_steps` frames laid out `[n_steps, 2, height, width]` (ON then
/// OFF polarity). Writes `n_steps * 6` doubles to `coords`: per step the
/// (x, y) of the three classes in input pixels.
///
/// # Safety
/// `frames` must hold `n_steps * 2 * height * width` doubles and `coords`
/// `coords_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn strf_network_forward(
    net: *const StrfNetwork,
    frames: *const f64,
    n_steps: usize,
    coords: *mut f64,
    coords_len: usize,
) -> i32 {
    guard(|| {
        let n = non_null(net, "net")?;
        let (h, w) = (n.config.height, n.config.width);
        let data = slice(frames, n_steps * 2 * h * w, "frames")?.to_vec();
        if coords_len < n_steps * 6 {
            return Err(Fail::Buffer(format!("need {} coordinate slots, got {coords_len}", n_steps * 6)));
        }
        let tensor = FrameTensor::from_vec(data, (n_steps, 2, h, w), 1.0)?;
        let pred = forward(&n.params, &n.config, &tensor)?;
        let out = slice_mut(coords, coords_len, "coords")?;
        for (t, c) in pred.iter().enumerate() {
            for k in 0..3 {
                out[t * 6 + 2 * k] = c[k][0];
                out[t * 6 + 2 * k + 1] = c[k][1];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn strf_network_free(net: *mut StrfNetwork) {
    free(net)
}

// ---- statistics ----

/// Pooled standard deviation of two groups given as (n, mean, sd).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strf_pooled_sd(n1: usize, mean1: f64, sd1: f64, n2: usize, mean2: f64, sd2: f64, out: *mut f64) -> i32 {
    guard(|| {
        let (a, b) = (GroupSummary::new(n1, mean1, sd1)?, GroupSummary::new(n2, mean2, sd2)?);
        *non_null_mut(out, "out")? = pooled_sd(&a, &b);
        Ok(())
    })
}

/// Effect size of the RF group (first) against the uniform group (second);
/// positive when the RF mean is lower.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strf_cohens_d(n_rf: usize, mean_rf: f64, sd_rf: f64, n_uniform: usize, mean_uniform: f64, sd_uniform: f64, out: *mut f64) -> i32 {
    guard(|| {
        let a = GroupSummary::new(n_rf, mean_rf, sd_rf)?;
        let b = GroupSummary::new(n_uniform, mean_uniform, sd_uniform)?;
        *non_null_mut(out, "out")? = cohens_d(&a, &b)?;
        Ok(())
    })
}

/// Monte-Carlo mean distance of random guesses on a `side` square.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strf_random_baseline(side: f64, fixed_center: bool, n: usize, seed: u64, out: *mut f64) -> i32 {
    guard(|| {
        *non_null_mut(out, "out")? = random_baseline(side, fixed_center, n, seed)?;
        Ok(())
    })
}
