//! C ABI over the `pufm` library.
//!
//! Objects are opaque handles created and destroyed by this library. Every
//! fallible call returns a [`PufmStatus`]; on failure the message is available
//! from [`pufm_last_error_message`] on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pufm::config::RunConfig;
use pufm::io::{read_cloud, write_cloud, Checkpoint};
use pufm::model::AnyModel;
use pufm::pipeline::{inference_schedule, upsample_cloud};
use pufm::scheduler::{schedule_from_profile, LossProfile, SchedulerConfig};
use pufm::transport::auction_match;
use pufm::{metrics, Error, PointCloud};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PufmStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numeric = 2,
    Io = 3,
    Parse = 4,
    Unsupported = 5,
    NullPointer = 6,
    Panic = 7,
}

/// A point cloud.
pub struct PufmCloud(PointCloud);

/// A trained velocity model with its optional loss profile.
pub struct PufmModel {
    model: AnyModel,
    profile: Option<LossProfile>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PufmStatus {
    match e {
        Error::InvalidArgument(_) => PufmStatus::InvalidArgument,
        Error::Numeric(_) => PufmStatus::Numeric,
        Error::Io { .. } => PufmStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => PufmStatus::Parse,
        Error::UnsupportedFormat(_) => PufmStatus::Unsupported,
    }
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

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PufmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PufmStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as {what}"));
            PufmStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PufmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn capacity_check(needed: usize, capacity: usize, what: &str) -> FfiResult<()> {
    if capacity < needed {
        return Err(Error::InvalidArgument(format!("{what} holds {capacity} values, {needed} needed")).into());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The string stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn pufm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pufm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a cloud from `n` interleaved `x y z` triples.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_new(xyz: *const f64, n: usize, out_cloud: *mut *mut PufmCloud) -> PufmStatus {
    guard(|| {
        let dst = out(out_cloud, "out_cloud")?;
        let len = n.checked_mul(3).ok_or_else(|| Error::InvalidArgument(format!("{n} points overflow")))?;
        let cloud = PointCloud::from_flat(slice(xyz, len, "xyz")?)?;
        *dst = Box::into_raw(Box::new(PufmCloud(cloud)));
        Ok(())
    })
}

/// Destroys a cloud; NULL is ignored.
///
/// # Safety
/// `cloud` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_free(cloud: *mut PufmCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// # Safety
/// `cloud` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_len(cloud: *const PufmCloud, out_len: *mut usize) -> PufmStatus {
    guard(|| {
        *out(out_len, "out_len")? = deref(cloud, "cloud")?.0.len();
        Ok(())
    })
}

/// Copies the `3 * len` coordinates into `xyz_out`, which holds `capacity` doubles.
///
/// # Safety
/// `cloud` must be a live handle; `xyz_out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_copy_points(cloud: *const PufmCloud, xyz_out: *mut f64, capacity: usize) -> PufmStatus {
    guard(|| {
        let flat = deref(cloud, "cloud")?.0.to_flat();
        capacity_check(flat.len(), capacity, "xyz_out")?;
        slice_mut(xyz_out, flat.len(), "xyz_out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Reads `.ply` (ASCII) or XYZ text.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_cloud` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_read(path_in: *const c_char, out_cloud: *mut *mut PufmCloud) -> PufmStatus {
    guard(|| {
        let dst = out(out_cloud, "out_cloud")?;
        let cloud = read_cloud(&path(path_in, "path")?)?;
        *dst = Box::into_raw(Box::new(PufmCloud(cloud)));
        Ok(())
    })
}

/// Writes `.ply` for that extension and XYZ text otherwise.
///
/// # Safety
/// `cloud` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pufm_cloud_write(cloud: *const PufmCloud, path_out: *const c_char) -> PufmStatus {
    guard(|| {
        write_cloud(&path(path_out, "path")?, &deref(cloud, "cloud")?.0)?;
        Ok(())
    })
}

/// Symmetric mean squared nearest-neighbour distance.
///
/// # Safety
/// `a` and `b` must be live handles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_chamfer(a: *const PufmCloud, b: *const PufmCloud, out_value: *mut f64) -> PufmStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::chamfer(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        Ok(())
    })
}

/// Symmetric worst-case nearest-neighbour distance.
///
/// # Safety
/// `a` and `b` must be live handles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_hausdorff(a: *const PufmCloud, b: *const PufmCloud, out_value: *mut f64) -> PufmStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::hausdorff(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        Ok(())
    })
}

/// Jensen-Shannon divergence of voxel histograms at `resolution` cells per axis.
///
/// # Safety
/// `a` and `b` must be live handles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_jsd(
    a: *const PufmCloud,
    b: *const PufmCloud,
    resolution: usize,
    out_value: *mut f64,
) -> PufmStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::jsd(&deref(a, "a")?.0, &deref(b, "b")?.0, resolution)?;
        Ok(())
    })
}

/// Approximate minimum-cost assignment of `source` onto `target` under squared
/// distance. `phi_out[i]` receives the target index of source point `i`;
/// `capacity` is the length of `phi_out`. `out_cost` may be NULL.
///
/// # Safety
/// Handles must be live; `phi_out` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn pufm_auction_match(
    source: *const PufmCloud,
    target: *const PufmCloud,
    epsilon_final: f64,
    phi_out: *mut usize,
    capacity: usize,
    out_cost: *mut f64,
) -> PufmStatus {
    guard(|| {
        let m = auction_match(&deref(source, "source")?.0, &deref(target, "target")?.0, epsilon_final)?;
        capacity_check(m.phi.len(), capacity, "phi_out")?;
        slice_mut(phi_out, m.phi.len(), "phi_out")?.copy_from_slice(&m.phi);
        if let Some(c) = out_cost.as_mut() {
            *c = m.total_cost;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by the `pufm` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_model_load(path_in: *const c_char, out_model: *mut *mut PufmModel) -> PufmStatus {
    guard(|| {
        let dst = out(out_model, "out_model")?;
        let ckpt = Checkpoint::load(&path(path_in, "path")?)?;
        let model = PufmModel {
            model: ckpt.to_model()?,
            profile: ckpt.loss_profile()?,
        };
        *dst = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Destroys a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pufm_model_free(model: *mut PufmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Nonzero when the model carries a loss profile, so `use_ats` is available.
///
/// # Safety
/// `model` must be a live handle; `out_flag` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_model_has_profile(model: *const PufmModel, out_flag: *mut c_int) -> PufmStatus {
    guard(|| {
        *out(out_flag, "out_flag")? = c_int::from(deref(model, "model")?.profile.is_some());
        Ok(())
    })
}

/// Upsamples `sparse` by `rate` with `steps` Euler steps, using the default
/// configuration otherwise. `use_ats` and `postprocess` are booleans.
///
/// # Safety
/// Handles must be live; `out_cloud` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pufm_upsample(
    model: *const PufmModel,
    sparse: *const PufmCloud,
    rate: usize,
    steps: usize,
    use_ats: c_int,
    postprocess: c_int,
    out_cloud: *mut *mut PufmCloud,
) -> PufmStatus {
    guard(|| {
        let dst = out(out_cloud, "out_cloud")?;
        let m = deref(model, "model")?;
        let sparse = &deref(sparse, "sparse")?.0;
        let mut cfg = RunConfig::default();
        let sparse_patch = cfg.sparse_patch_size();
        cfg.rate = rate;
        cfg.patch_size = sparse_patch * rate;
        cfg.sampler.steps = steps;
        cfg.sampler.use_ats = use_ats != 0;
        cfg.sampler.postprocess = postprocess != 0;
        cfg.validate()?;
        let schedule = inference_schedule(&cfg, m.profile.as_ref())?;
        let dense = upsample_cloud(&m.model, sparse, &cfg, &schedule)?;
        *dst = Box::into_raw(Box::new(PufmCloud(dense)));
        Ok(())
    })
}

/// Adaptive time schedule from `count` losses on a uniform grid over [0, 1].
/// Writes `steps + 1` times into `times_out`, which holds `capacity` doubles.
///
/// # Safety
/// `losses` must hold `count` doubles and `times_out` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pufm_schedule_from_losses(
    losses: *const f64,
    count: usize,
    steps: usize,
    beta: f64,
    psi: f64,
    times_out: *mut f64,
    capacity: usize,
) -> PufmStatus {
    guard(|| {
        let profile = LossProfile::uniform(slice(losses, count, "losses")?.to_vec())?;
        let cfg = SchedulerConfig { beta, psi };
        let s = schedule_from_profile(&profile, &cfg, steps)?;
        capacity_check(s.times().len(), capacity, "times_out")?;
        slice_mut(times_out, s.times().len(), "times_out")?.copy_from_slice(s.times());
        Ok(())
    })
}
