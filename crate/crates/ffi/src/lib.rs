//! C ABI over the `hwnas` library.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`HwnasStatus`]; results go through
//!   out-pointers, which are written only on success.
//! * Objects are opaque handles created by `*_new`/`*_from_*` style calls
//!   and released with the matching `*_free`. Freeing NULL is a no-op.
//! * Strings returned to the caller are NUL-terminated UTF-8 owned by the
//!   caller and must be released with [`hwnas_string_free`].
//! * After a failure, [`hwnas_last_error`] describes it. The pointer stays
//!   valid until the next failing call on the same thread.
//! * Panics never cross the boundary; they surface as
//!   `HWNAS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hwnas::estimator::{
    self, load_linear_surrogate, DeviceProfile, EstimatorConfig, ResourceEstimate, ResourceEstimator,
    RuleBasedEstimator, Strategy,
};
use hwnas::ir::NetworkDescription;
use hwnas::moo;
use hwnas::rng::rng_from_seed;
use hwnas::space::{ArchitectureGenome, SearchSpace, SearchSpaceConfig};
use hwnas::train::fake_quantize;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HwnasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Shape = 5,
    Io = 6,
    Panic = 7,
}

/// Parsed network description.
pub struct HwnasNetwork(NetworkDescription);
/// Validated search space.
pub struct HwnasSpace(SearchSpace);
/// One architecture genome.
pub struct HwnasGenome(ArchitectureGenome);
/// A resource estimator (rule-based or linear surrogate).
pub struct HwnasEstimator(Box<dyn ResourceEstimator>);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HwnasResourceEstimate {
    pub bram: f64,
    pub dsp: f64,
    pub ff: f64,
    pub lut: f64,
    pub ii_cycles: f64,
    pub latency_cycles: f64,
}

impl From<ResourceEstimate> for HwnasResourceEstimate {
    fn from(e: ResourceEstimate) -> Self {
        Self {
            bram: e.bram,
            dsp: e.dsp,
            ff: e.ff,
            lut: e.lut,
            ii_cycles: e.ii_cycles,
            latency_cycles: e.latency_cycles,
        }
    }
}

impl From<&HwnasResourceEstimate> for ResourceEstimate {
    fn from(e: &HwnasResourceEstimate) -> Self {
        Self {
            bram: e.bram,
            dsp: e.dsp,
            ff: e.ff,
            lut: e.lut,
            ii_cycles: e.ii_cycles,
            latency_cycles: e.latency_cycles,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HwnasDevice {
    pub lut_capacity: u64,
    pub ff_capacity: u64,
    pub dsp_capacity: u64,
    pub bram_capacity: u64,
    pub clock_period_ns: f64,
}

impl HwnasDevice {
    fn profile(&self) -> Result<DeviceProfile, Failure> {
        let d = DeviceProfile {
            name: "custom".into(),
            lut_capacity: self.lut_capacity,
            ff_capacity: self.ff_capacity,
            dsp_capacity: self.dsp_capacity,
            bram_capacity: self.bram_capacity,
            clock_period_ns: self.clock_period_ns,
        };
        d.validate().map_err(|m| Failure(HwnasStatus::InvalidArgument, m))?;
        Ok(d)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(HwnasStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HwnasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HwnasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside hwnas");
            HwnasStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HwnasStatus::NullPointer, format!("`{what}` is NULL"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(HwnasStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(HwnasStatus::InvalidArgument, e.to_string()))
}

fn parse_err(e: impl std::fmt::Display) -> Failure {
    Failure(HwnasStatus::Parse, e.to_string())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn hwnas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread (empty if none).
#[no_mangle]
pub extern "C" fn hwnas_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn hwnas_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and shape-checks a network description in JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_from_json(json: *const c_char, out_net: *mut *mut HwnasNetwork) -> HwnasStatus {
    guard(|| {
        let s = text(json, "json")?;
        let slot = out(out_net, "out_net")?;
        let net: NetworkDescription = serde_json::from_str(s).map_err(parse_err)?;
        net.validate_shapes()
            .map_err(|e| Failure(HwnasStatus::Shape, e.to_string()))?;
        *slot = boxed(HwnasNetwork(net));
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_to_json(net: *const HwnasNetwork, out_json: *mut *mut c_char) -> HwnasStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        let slot = out(out_json, "out_json")?;
        *slot = owned_string(serde_json::to_string(&n.0).map_err(parse_err)?)?;
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_free(net: *mut HwnasNetwork) {
    free(net)
}

/// Copy of `net` with every layer set to the given bit widths.
///
/// # Safety
/// `net` must be a live handle; `out_net` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_with_precision(
    net: *const HwnasNetwork,
    weight_bits: u32,
    act_bits: u32,
    out_net: *mut *mut HwnasNetwork,
) -> HwnasStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        let slot = out(out_net, "out_net")?;
        let q = n.0.clone().with_precision(weight_bits, act_bits);
        q.validate_shapes()
            .map_err(|e| Failure(HwnasStatus::InvalidArgument, e.to_string()))?;
        *slot = boxed(HwnasNetwork(q));
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_param_count(net: *const HwnasNetwork, out_count: *mut u64) -> HwnasStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        *out(out_count, "out_count")? = n.0.param_count();
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle; `out_bops` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_network_bops(net: *const HwnasNetwork, out_bops: *mut u64) -> HwnasStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        *out(out_bops, "out_bops")? = n.0.count_bops();
        Ok(())
    })
}

/// The default MLP search space for the given input and class counts.
///
/// # Safety
/// `out_space` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_space_default(
    input_dim: usize,
    num_classes: usize,
    out_space: *mut *mut HwnasSpace,
) -> HwnasStatus {
    guard(|| {
        let slot = out(out_space, "out_space")?;
        let s = SearchSpace::new(SearchSpaceConfig::standard(input_dim, num_classes))
            .map_err(|e| Failure(HwnasStatus::InvalidArgument, e.to_string()))?;
        *slot = boxed(HwnasSpace(s));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out_space` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_space_from_json(json: *const c_char, out_space: *mut *mut HwnasSpace) -> HwnasStatus {
    guard(|| {
        let s = text(json, "json")?;
        let slot = out(out_space, "out_space")?;
        let cfg: SearchSpaceConfig = serde_json::from_str(s).map_err(parse_err)?;
        let space = SearchSpace::new(cfg).map_err(|e| Failure(HwnasStatus::InvalidArgument, e.to_string()))?;
        *slot = boxed(HwnasSpace(space));
        Ok(())
    })
}

/// # Safety
/// `space` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwnas_space_free(space: *mut HwnasSpace) {
    free(space)
}

/// Draws a genome uniformly from the space; equal seeds give equal genomes.
///
/// # Safety
/// `space` must be a live handle; `out_genome` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_space_sample(
    space: *const HwnasSpace,
    seed: u64,
    out_genome: *mut *mut HwnasGenome,
) -> HwnasStatus {
    guard(|| {
        let s = borrow(space, "space")?;
        let slot = out(out_genome, "out_genome")?;
        *slot = boxed(HwnasGenome(s.0.sample(&mut rng_from_seed(seed))));
        Ok(())
    })
}

/// # Safety
/// `space` and `genome` must be live handles; `out_net` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_space_decode(
    space: *const HwnasSpace,
    genome: *const HwnasGenome,
    out_net: *mut *mut HwnasNetwork,
) -> HwnasStatus {
    guard(|| {
        let s = borrow(space, "space")?;
        let g = borrow(genome, "genome")?;
        let slot = out(out_net, "out_net")?;
        let net = s.0.decode(&g.0).map_err(|e| Failure(HwnasStatus::InvalidArgument, e.to_string()))?;
        *slot = boxed(HwnasNetwork(net));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out_genome` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_genome_from_json(json: *const c_char, out_genome: *mut *mut HwnasGenome) -> HwnasStatus {
    guard(|| {
        let s = text(json, "json")?;
        let slot = out(out_genome, "out_genome")?;
        let g: ArchitectureGenome = serde_json::from_str(s).map_err(parse_err)?;
        *slot = boxed(HwnasGenome(g));
        Ok(())
    })
}

/// # Safety
/// `genome` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_genome_to_json(genome: *const HwnasGenome, out_json: *mut *mut c_char) -> HwnasStatus {
    guard(|| {
        let g = borrow(genome, "genome")?;
        let slot = out(out_json, "out_json")?;
        *slot = owned_string(serde_json::to_string(&g.0).map_err(parse_err)?)?;
        Ok(())
    })
}

/// Canonical text key of a genome.
///
/// # Safety
/// `genome` must be a live handle; `out_key` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_genome_key(genome: *const HwnasGenome, out_key: *mut *mut c_char) -> HwnasStatus {
    guard(|| {
        let g = borrow(genome, "genome")?;
        let slot = out(out_key, "out_key")?;
        *slot = owned_string(g.0.key())?;
        Ok(())
    })
}

/// # Safety
/// `genome` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwnas_genome_free(genome: *mut HwnasGenome) {
    free(genome)
}

/// Rule-based estimator. `resource_strategy` non-zero keeps weights in BRAM.
///
/// # Safety
/// `out_est` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_estimator_rule_based(
    reuse_factor: u32,
    dsp_bit_threshold: u32,
    resource_strategy: bool,
    out_est: *mut *mut HwnasEstimator,
) -> HwnasStatus {
    guard(|| {
        let slot = out(out_est, "out_est")?;
        if reuse_factor == 0 {
            return Err(Failure(HwnasStatus::InvalidArgument, "reuse_factor must be at least 1".into()));
        }
        let cfg = EstimatorConfig {
            reuse_factor,
            dsp_bit_threshold,
            strategy: if resource_strategy { Strategy::Resource } else { Strategy::Latency },
        };
        *slot = boxed(HwnasEstimator(Box::new(RuleBasedEstimator::new(cfg))));
        Ok(())
    })
}

/// Linear surrogate from a coefficient file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_est` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_estimator_load_linear(path: *const c_char, out_est: *mut *mut HwnasEstimator) -> HwnasStatus {
    guard(|| {
        let p = text(path, "path")?;
        let slot = out(out_est, "out_est")?;
        let s = load_linear_surrogate(Path::new(p)).map_err(|e| match e {
            estimator::SurrogateError::Io { .. } => Failure(HwnasStatus::Io, e.to_string()),
            _ => Failure(HwnasStatus::Parse, e.to_string()),
        })?;
        *slot = boxed(HwnasEstimator(Box::new(s)));
        Ok(())
    })
}

/// # Safety
/// `est` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwnas_estimator_free(est: *mut HwnasEstimator) {
    free(est)
}

/// # Safety
/// `est` and `net` must be live handles; `out_estimate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwnas_estimate(
    est: *const HwnasEstimator,
    net: *const HwnasNetwork,
    out_estimate: *mut HwnasResourceEstimate,
) -> HwnasStatus {
    guard(|| {
        let e = borrow(est, "est")?;
        let n = borrow(net, "net")?;
        *out(out_estimate, "out_estimate")? = e.0.estimate(&n.0).into();
        Ok(())
    })
}

/// Virtex UltraScale+ VU13P capacities at a 5 ns clock.
#[no_mangle]
pub extern "C" fn hwnas_device_vu13p() -> HwnasDevice {
    let d = DeviceProfile::vu13p();
    HwnasDevice {
        lut_capacity: d.lut_capacity,
        ff_capacity: d.ff_capacity,
        dsp_capacity: d.dsp_capacity,
        bram_capacity: d.bram_capacity,
        clock_period_ns: d.clock_period_ns,
    }
}

/// Mean BRAM/DSP/FF/LUT utilization in percent.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hwnas_avg_resource_pct(
    estimate: *const HwnasResourceEstimate,
    device: *const HwnasDevice,
    out_pct: *mut f64,
) -> HwnasStatus {
    guard(|| {
        let e = borrow(estimate, "estimate")?;
        let d = borrow(device, "device")?.profile()?;
        *out(out_pct, "out_pct")? = estimator::avg_resource_pct(&e.into(), &d);
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hwnas_latency_ns(
    estimate: *const HwnasResourceEstimate,
    device: *const HwnasDevice,
    out_ns: *mut f64,
) -> HwnasStatus {
    guard(|| {
        let e = borrow(estimate, "estimate")?;
        let d = borrow(device, "device")?.profile()?;
        *out(out_ns, "out_ns")? = estimator::latency_ns(&e.into(), &d);
        Ok(())
    })
}

unsafe fn points<'a>(data: *const f64, n: usize, m: usize) -> Result<Vec<&'a [f64]>, Failure> {
    if n == 0 || m == 0 {
        return Err(Failure(HwnasStatus::InvalidArgument, "need at least one point and one objective".into()));
    }
    let len = n
        .checked_mul(m)
        .ok_or_else(|| Failure(HwnasStatus::InvalidArgument, "n * m overflows".into()))?;
    if data.is_null() {
        return Err(null("points"));
    }
    let all = std::slice::from_raw_parts(data, len);
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Failure(HwnasStatus::InvalidArgument, "objective values must be finite".into()));
    }
    Ok(all.chunks_exact(m).collect())
}

/// Non-dominated ranks of `n` points with `m` objectives each (row-major,
/// all minimized). Writes `n` ranks, 0 for the first front.
///
/// # Safety
/// `points_data` must hold `n * m` doubles and `out_ranks` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn hwnas_non_dominated_sort(
    points_data: *const f64,
    n: usize,
    m: usize,
    out_ranks: *mut usize,
) -> HwnasStatus {
    guard(|| {
        let pts: Vec<Vec<f64>> = points(points_data, n, m)?.into_iter().map(<[f64]>::to_vec).collect();
        if out_ranks.is_null() {
            return Err(null("out_ranks"));
        }
        let ranks = std::slice::from_raw_parts_mut(out_ranks, n);
        for (r, front) in moo::sort_fronts(&pts).iter().enumerate() {
            for &i in front {
                ranks[i] = r;
            }
        }
        Ok(())
    })
}

/// Crowding distances of `n` points forming one front (row-major, all
/// minimized). Boundary points get +infinity.
///
/// # Safety
/// `points_data` must hold `n * m` doubles and `out_distance` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn hwnas_crowding_distance(
    points_data: *const f64,
    n: usize,
    m: usize,
    out_distance: *mut f64,
) -> HwnasStatus {
    guard(|| {
        let pts: Vec<Vec<f64>> = points(points_data, n, m)?.into_iter().map(<[f64]>::to_vec).collect();
        if out_distance.is_null() {
            return Err(null("out_distance"));
        }
        std::slice::from_raw_parts_mut(out_distance, n).copy_from_slice(&moo::crowding_distance(&pts));
        Ok(())
    })
}

/// Symmetric per-tensor fake quantization to `bits` (2..=16).
///
/// # Safety
/// `input` and `output` must each hold `n` floats (they may alias);
/// `out_scale` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hwnas_fake_quantize(
    input: *const f32,
    n: usize,
    bits: u32,
    output: *mut f32,
    out_scale: *mut f32,
) -> HwnasStatus {
    guard(|| {
        if !(2..=16).contains(&bits) {
            return Err(Failure(HwnasStatus::InvalidArgument, format!("bits {bits} outside 2..=16")));
        }
        if n == 0 {
            if !out_scale.is_null() {
                *out_scale = 0.0;
            }
            return Ok(());
        }
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let x = std::slice::from_raw_parts(input, n).to_vec();
        let (q, scale) = fake_quantize(&x, bits);
        ptr::copy_nonoverlapping(q.as_ptr(), output, n);
        if !out_scale.is_null() {
            *out_scale = scale;
        }
        Ok(())
    })
}
