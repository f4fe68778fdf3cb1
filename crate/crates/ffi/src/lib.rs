//! C ABI for the embcomm cost models, cache planner and Monte Carlo
//! estimator.
//!
//! Conventions:
//! * Every fallible function returns an [`EcStatus`]; results go through out
//!   pointers, which are written only on success.
//! * On failure, [`ec_last_error_message`] describes the error. The message
//!   is per thread and stays valid until the next failing call on that
//!   thread.
//! * Handles (`EcDistribution`, `EcCachePlan`) are opaque. Free them with
//!   their `_free` function; passing NULL to a `_free` function is a no-op.
//! * Panics never cross the boundary; they surface as `EC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use embcomm::cache_planner::{self, CachePlan, DatasetShape, DeviceModel, SearchMethod};
use embcomm::cost_model::{self, EmbeddingDistribution, WorkloadSpec};
use embcomm::distributions::{DistributionKind, DistributionSpec};
use embcomm::simulator;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Infeasible = 3,
    Internal = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcKind {
    Zipf = 0,
    Exponential = 1,
    HalfNormal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcSearchMethod {
    Scan = 0,
    BinarySearch = 1,
    ScanFallback = 2,
    Fixed = 3,
}

/// Expected communication, in embedding-vector and sample-index units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcCost {
    pub index_cost: f64,
    pub embedding_cost: f64,
    pub total: f64,
}

/// Device memory model; `efficiency` is the usable fraction of `memory`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcDevice {
    pub memory: u64,
    pub activation_params: u64,
    pub embedding_params: u64,
    pub efficiency: f64,
}

/// Effect of caching the next most probable embedding.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcMarginal {
    pub candidate_id: u32,
    pub batch_size: u64,
    pub next_batch_size: u64,
    pub presence_gain: f64,
    pub threshold: f64,
    pub delta_comm: f64,
    pub recommend: bool,
}

/// Monte Carlo estimate of distinct embeddings per batch.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcUniqueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub max: u64,
}

pub struct EcDistribution {
    inner: EmbeddingDistribution,
}

pub struct EcCachePlan {
    inner: CachePlan,
}

struct Failure {
    status: EcStatus,
    message: String,
}

impl From<embcomm::Error> for Failure {
    fn from(e: embcomm::Error) -> Self {
        let status = match e {
            embcomm::Error::Infeasible(_) => EcStatus::Infeasible,
            ref e if e.is_internal() => EcStatus::Internal,
            _ => EcStatus::InvalidArgument,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> EcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {msg}"));
            EcStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure {
        status: EcStatus::NullPointer,
        message: format!("{name} is NULL"),
    }
}

unsafe fn deref<'a, T>(ptr: *const T, name: &str) -> FfiResult<&'a T> {
    unsafe { ptr.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn write<T>(ptr: *mut T, name: &str, value: T) -> FfiResult<()> {
    let slot = unsafe { ptr.as_mut() }.ok_or_else(|| null(name))?;
    *slot = value;
    Ok(())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn device_model(d: &EcDevice) -> FfiResult<DeviceModel> {
    Ok(DeviceModel::with_efficiency(
        d.memory,
        d.activation_params,
        d.embedding_params,
        d.efficiency,
    )?)
}

fn cost(c: cost_model::CostBreakdown) -> EcCost {
    EcCost {
        index_cost: c.index_cost,
        embedding_cost: c.embedding_cost,
        total: c.total,
    }
}

fn kind(k: EcKind) -> DistributionKind {
    match k {
        EcKind::Zipf => DistributionKind::Zipf,
        EcKind::Exponential => DistributionKind::Exponential,
        EcKind::HalfNormal => DistributionKind::HalfNormal,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL.
#[no_mangle]
pub extern "C" fn ec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Default shape parameter for a parametric family.
#[no_mangle]
pub extern "C" fn ec_default_shape(k: EcKind) -> f64 {
    kind(k).default_shape().unwrap_or(f64::NAN)
}

/// Builds a distribution from per-id probabilities summing to 1.
///
/// # Safety
/// `probs` must point to `len` readable doubles and `out` to a writable
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn ec_distribution_new(
    probs: *const f64,
    len: usize,
    out: *mut *mut EcDistribution,
) -> EcStatus {
    guard(|| {
        let probs = unsafe { slice(probs, len, "probs") }?;
        let inner = EmbeddingDistribution::new(probs.to_vec())?;
        unsafe {
            write(
                out,
                "out",
                Box::into_raw(Box::new(EcDistribution { inner })),
            )
        }
    })
}

/// Builds a parametric distribution over `size` embeddings.
///
/// # Safety
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ec_distribution_parametric(
    k: EcKind,
    size: usize,
    shape: f64,
    out: *mut *mut EcDistribution,
) -> EcStatus {
    guard(|| {
        let inner = DistributionSpec::parametric(kind(k), size, shape)?.materialize()?;
        unsafe {
            write(
                out,
                "out",
                Box::into_raw(Box::new(EcDistribution { inner })),
            )
        }
    })
}

/// Builds a distribution from a JSON spec such as
/// `{"kind":"zipf","size":1000,"shape":1.0}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ec_distribution_from_json(
    json: *const c_char,
    out: *mut *mut EcDistribution,
) -> EcStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| Failure {
                status: EcStatus::InvalidArgument,
                message: format!("json is not UTF-8: {e}"),
            })?;
        let inner = DistributionSpec::from_json(text)?.materialize()?;
        unsafe {
            write(
                out,
                "out",
                Box::into_raw(Box::new(EcDistribution { inner })),
            )
        }
    })
}

/// # Safety
/// `dist` must be NULL or a handle from an `ec_distribution_*` constructor
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ec_distribution_free(dist: *mut EcDistribution) {
    if !dist.is_null() {
        drop(unsafe { Box::from_raw(dist) });
    }
}

/// Number of embeddings, or 0 for NULL.
///
/// # Safety
/// `dist` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_distribution_len(dist: *const EcDistribution) -> usize {
    unsafe { dist.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Probability that an embedding with lookup probability `p` appears in a
/// batch of `b` independent lookups.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_batch_presence_prob(p: f64, b: u64, out: *mut f64) -> EcStatus {
    guard(|| {
        let v = cost_model::batch_presence_prob(p, b)?;
        unsafe { write(out, "out", v) }
    })
}

/// Expected distinct embeddings in a batch of `b` lookups.
///
/// # Safety
/// `dist` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_expected_unique(
    dist: *const EcDistribution,
    b: u64,
    out: *mut f64,
) -> EcStatus {
    guard(|| {
        let d = unsafe { deref(dist, "dist") }?;
        let v = cost_model::expected_unique_per_batch(&d.inner, b)?;
        unsafe { write(out, "out", v) }
    })
}

/// Epoch cost without coalescing: one embedding per lookup.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_baseline_epoch_cost(
    num_samples: u64,
    b: u64,
    lookups: u32,
    out: *mut f64,
) -> EcStatus {
    guard(|| {
        let spec = WorkloadSpec::new(num_samples, b, lookups)?;
        unsafe { write(out, "out", cost_model::baseline_epoch_cost(&spec)) }
    })
}

/// Epoch cost with per-batch coalescing and the given ids cached on device.
/// Pass `cached_len = 0` for no cache.
///
/// # Safety
/// `dist` must be a live handle, `cached` must point to `cached_len` ids and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_cached_epoch_cost(
    dist: *const EcDistribution,
    num_samples: u64,
    b: u64,
    lookups: u32,
    cached: *const u32,
    cached_len: usize,
    out: *mut EcCost,
) -> EcStatus {
    guard(|| {
        let d = unsafe { deref(dist, "dist") }?;
        let cached = unsafe { slice(cached, cached_len, "cached") }?;
        let spec = WorkloadSpec::new(num_samples, b, lookups)?;
        let c = cost_model::cached_epoch_cost(&d.inner, &spec, cached)?;
        unsafe { write(out, "out", cost(c)) }
    })
}

/// Largest batch that fits once `cache_size` embeddings are resident.
///
/// # Safety
/// `device` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_max_batch_size(
    device: *const EcDevice,
    cache_size: u64,
    out: *mut u64,
) -> EcStatus {
    guard(|| {
        let dev = device_model(unsafe { deref(device, "device") }?)?;
        let b = cache_planner::max_batch_size(&dev, cache_size)?;
        unsafe { write(out, "out", b) }
    })
}

/// Whether caching the most probable uncached embedding lowers the epoch
/// cost, given `cache_size` embeddings already cached.
///
/// # Safety
/// `dist` must be a live handle, `device` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_delta_comm(
    dist: *const EcDistribution,
    device: *const EcDevice,
    num_samples: u64,
    lookups: u32,
    cache_size: u64,
    out: *mut EcMarginal,
) -> EcStatus {
    guard(|| {
        let d = unsafe { deref(dist, "dist") }?;
        let dev = device_model(unsafe { deref(device, "device") }?)?;
        let shape = DatasetShape::new(num_samples, lookups)?;
        let r = cache_planner::delta_comm(&d.inner, &dev, &shape, cache_size)?;
        let m = EcMarginal {
            candidate_id: r.candidate_id,
            batch_size: r.batch_size,
            next_batch_size: r.next_batch_size,
            presence_gain: r.presence_gain,
            threshold: r.threshold,
            delta_comm: r.delta_comm,
            recommend: r.recommend,
        };
        unsafe { write(out, "out", m) }
    })
}

/// Chooses the cache size minimizing expected epoch cost.
/// `exhaustive` evaluates every size; otherwise a verified binary search.
///
/// # Safety
/// `dist` must be a live handle, `device` readable and `out` a writable
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn ec_plan(
    dist: *const EcDistribution,
    device: *const EcDevice,
    num_samples: u64,
    lookups: u32,
    exhaustive: bool,
    out: *mut *mut EcCachePlan,
) -> EcStatus {
    guard(|| {
        let d = unsafe { deref(dist, "dist") }?;
        let dev = device_model(unsafe { deref(device, "device") }?)?;
        let shape = DatasetShape::new(num_samples, lookups)?;
        let inner = if exhaustive {
            cache_planner::optimal_cache_size_scan(&d.inner, &dev, &shape)?
        } else {
            cache_planner::optimal_cache_size_search(&d.inner, &dev, &shape)?
        };
        unsafe { write(out, "out", Box::into_raw(Box::new(EcCachePlan { inner }))) }
    })
}

/// # Safety
/// `plan` must be NULL or a live handle from [`ec_plan`].
#[no_mangle]
pub unsafe extern "C" fn ec_plan_free(plan: *mut EcCachePlan) {
    if !plan.is_null() {
        drop(unsafe { Box::from_raw(plan) });
    }
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_cache_size(plan: *const EcCachePlan) -> u64 {
    unsafe { plan.as_ref() }.map_or(0, |p| p.inner.cache_size)
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_batch_size(plan: *const EcCachePlan) -> u64 {
    unsafe { plan.as_ref() }.map_or(0, |p| p.inner.batch_size)
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_feasible(plan: *const EcCachePlan) -> bool {
    unsafe { plan.as_ref() }.is_some_and(|p| p.inner.feasible)
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_method(plan: *const EcCachePlan) -> EcSearchMethod {
    match unsafe { plan.as_ref() }.map(|p| p.inner.method) {
        Some(SearchMethod::BinarySearch) => EcSearchMethod::BinarySearch,
        Some(SearchMethod::ScanFallback) => EcSearchMethod::ScanFallback,
        Some(SearchMethod::Fixed) => EcSearchMethod::Fixed,
        _ => EcSearchMethod::Scan,
    }
}

/// Expected epoch cost of the plan; fails for infeasible plans.
///
/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_cost(plan: *const EcCachePlan, out: *mut EcCost) -> EcStatus {
    guard(|| {
        let p = unsafe { deref(plan, "plan") }?;
        let c = p.inner.expected_epoch_cost.clone().ok_or_else(|| Failure {
            status: EcStatus::Infeasible,
            message: "plan is infeasible and has no cost".to_string(),
        })?;
        unsafe { write(out, "out", cost(c)) }
    })
}

/// Copies up to `capacity` cached ids into `ids` and returns the total
/// number of cached ids. Call with `capacity = 0` to size the buffer.
///
/// # Safety
/// `plan` must be a live handle and `ids` must have room for `capacity` ids.
#[no_mangle]
pub unsafe extern "C" fn ec_plan_cached_ids(
    plan: *const EcCachePlan,
    ids: *mut u32,
    capacity: usize,
) -> usize {
    let Some(p) = (unsafe { plan.as_ref() }) else {
        return 0;
    };
    let src = &p.inner.cached_ids;
    if !ids.is_null() {
        let n = capacity.min(src.len());
        unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), ids, n) };
    }
    src.len()
}

/// Monte Carlo mean of distinct embeddings per batch over `trials`
/// independent batches, reproducible from `seed`.
///
/// # Safety
/// `dist` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_measure_unique(
    dist: *const EcDistribution,
    b: u64,
    trials: u64,
    seed: u64,
    out: *mut EcUniqueEstimate,
) -> EcStatus {
    guard(|| {
        let d = unsafe { deref(dist, "dist") }?;
        let m = simulator::measure_unique(&d.inner, b, trials, seed)?;
        let est = EcUniqueEstimate {
            mean: m.mean_unique_per_batch.mean,
            std_error: m.mean_unique_per_batch.std_error,
            max: m.max_unique_per_batch,
        };
        unsafe { write(out, "out", est) }
    })
}
