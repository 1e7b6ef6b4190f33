//! C ABI for the capgame library.
//!
//! Instances and profiles cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns a [`CgStatus`]; on failure a human-readable message is available
//! from [`cg_last_error`] until the next failing call on the same thread.
//! Panics never unwind into the caller; they surface as `CG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use capgame::{
    alloc, dual_solve, io, iterated_allocation, nash_check, serial_poa, welfare,
    NetworkInstance, PayoffMode, SerialPoAInputs, StrategyProfile,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// A file could not be read or parsed.
    Io = 3,
    /// An algorithm failed on a valid input.
    Algorithm = 4,
    /// The optimizer stopped before reaching the requested tolerance.
    NotConverged = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

/// Payoff weighting for [`cg_instance_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgPayoffMode {
    Uniform = 0,
    PathLength = 1,
}

impl From<CgPayoffMode> for PayoffMode {
    fn from(m: CgPayoffMode) -> Self {
        match m {
            CgPayoffMode::Uniform => PayoffMode::Uniform,
            CgPayoffMode::PathLength => PayoffMode::PathLength,
        }
    }
}

/// Opaque network instance.
pub struct CgInstance(NetworkInstance);

/// Opaque strategy profile (a `links x flows` allocation matrix).
pub struct CgProfile(StrategyProfile);

/// Closed-form price of anarchy of the serial topology.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CgSerialPoA {
    pub chi: f64,
    pub poa1: f64,
    pub poa2: f64,
    pub poa: f64,
}

/// Equilibrium check summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CgNashReport {
    /// 1 when every relative gap is within tolerance.
    pub is_nash: i32,
    pub max_gap: f64,
    /// Link with the largest gap, or -1 when there are no links.
    pub worst_link: i64,
    /// Social welfare; `-INFINITY` when some flow has zero rate and the
    /// utility diverges.
    pub welfare: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(CgStatus, String);

impl Fail {
    fn new(status: CgStatus, err: impl ToString) -> Self {
        Fail(status, err.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CgStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(CgStatus::NullPointer, format!("{name} is null"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn boxed_instance(inst: NetworkInstance) -> *mut CgInstance {
    Box::into_raw(Box::new(CgInstance(inst)))
}

fn boxed_profile(s: StrategyProfile) -> *mut CgProfile {
    Box::into_raw(Box::new(CgProfile(s)))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds an instance from a row-major `links x flows` routing matrix of
/// 0/1 bytes.
///
/// `weights` may be null, in which case every weight is 1.
///
/// # Safety
/// `routing` must point to `links * flows` bytes, `capacities` to `links`
/// doubles, `weights` (if non-null) to `flows` doubles, and `out` must be a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cg_instance_new(
    links: usize,
    flows: usize,
    routing: *const u8,
    capacities: *const f64,
    gamma: f64,
    weights: *const f64,
    mode: CgPayoffMode,
    out: *mut *mut CgInstance,
) -> CgStatus {
    guard(|| {
        let cells = links
            .checked_mul(flows)
            .ok_or_else(|| Fail::new(CgStatus::InvalidArgument, "links * flows overflows"))?;
        let routing = slice(routing, cells, "routing")?;
        let capacities = slice(capacities, links, "capacities")?.to_vec();
        let weights = if weights.is_null() {
            vec![1.0; flows]
        } else {
            slice(weights, flows, "weights")?.to_vec()
        };
        let inst = NetworkInstance::new(
            links,
            flows,
            routing.iter().map(|&b| b != 0).collect(),
            capacities,
            gamma,
            weights,
            mode.into(),
        )
        .map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        write_out(out, boxed_instance(inst), "out")
    })
}

/// Loads an instance from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_instance_load(
    path: *const c_char,
    out: *mut *mut CgInstance,
) -> CgStatus {
    guard(|| {
        let path = deref(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        let inst = io::load_instance(path).map_err(|e| Fail::new(CgStatus::Io, e))?;
        write_out(out, boxed_instance(inst), "out")
    })
}

/// Releases an instance. Null is ignored.
///
/// # Safety
/// `inst` must be null or a handle returned by this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_instance_free(inst: *mut CgInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Number of links, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_instance_links(inst: *const CgInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_links())
}

/// Number of flows, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_instance_flows(inst: *const CgInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_flows())
}

/// One-step proportional allocation.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_one_step(inst: *const CgInstance, out: *mut *mut CgProfile) -> CgStatus {
    guard(|| {
        let inst = deref(inst, "inst")?;
        write_out(out, boxed_profile(alloc::one_step_profile(&inst.0)), "out")
    })
}

/// Iterated allocation. `iterations` (if non-null) receives the number of
/// iterations performed.
///
/// # Safety
/// `inst` must be a live handle, `out` a valid pointer and `iterations`
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn cg_iterated(
    inst: *const CgInstance,
    out: *mut *mut CgProfile,
    iterations: *mut usize,
) -> CgStatus {
    guard(|| {
        let inst = deref(inst, "inst")?;
        let (s, trace) =
            iterated_allocation(&inst.0).map_err(|e| Fail::new(CgStatus::Algorithm, e))?;
        if !iterations.is_null() {
            iterations.write(trace.iterations.len());
        }
        write_out(out, boxed_profile(s), "out")
    })
}

/// Loads a profile from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_profile_load(path: *const c_char, out: *mut *mut CgProfile) -> CgStatus {
    guard(|| {
        let path = deref(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        let s = io::load_profile(path).map_err(|e| Fail::new(CgStatus::Io, e))?;
        write_out(out, boxed_profile(s), "out")
    })
}

/// Releases a profile. Null is ignored.
///
/// # Safety
/// `profile` must be null or a handle returned by this library that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_profile_free(profile: *mut CgProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Reads the allocation of `link` to `flow`.
///
/// # Safety
/// `profile` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_profile_get(
    profile: *const CgProfile,
    link: usize,
    flow: usize,
    out: *mut f64,
) -> CgStatus {
    guard(|| {
        let s = &deref(profile, "profile")?.0;
        if link >= s.num_links() || flow >= s.num_flows() {
            return Err(Fail(
                CgStatus::InvalidArgument,
                format!("({link}, {flow}) outside {}x{}", s.num_links(), s.num_flows()),
            ));
        }
        write_out(out, s.get(link, flow), "out")
    })
}

/// Writes the end-to-end rates of `profile` into `rates[0..flows]`.
///
/// # Safety
/// `inst` and `profile` must be live handles and `rates` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cg_rates(
    inst: *const CgInstance,
    profile: *const CgProfile,
    rates: *mut f64,
    len: usize,
) -> CgStatus {
    guard(|| {
        let inst = &deref(inst, "inst")?.0;
        let s = &deref(profile, "profile")?.0;
        let r = capgame::rates_of(inst, s).map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        if len < r.len() {
            return Err(Fail(
                CgStatus::InvalidArgument,
                format!("buffer holds {len} rates, need {}", r.len()),
            ));
        }
        if rates.is_null() {
            return Err(null("rates"));
        }
        ptr::copy_nonoverlapping(r.as_ptr(), rates, r.len());
        Ok(())
    })
}

/// Social welfare of a profile; `-INFINITY` when it diverges.
///
/// # Safety
/// `inst` and `profile` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_welfare(
    inst: *const CgInstance,
    profile: *const CgProfile,
    out: *mut f64,
) -> CgStatus {
    guard(|| {
        let inst = &deref(inst, "inst")?.0;
        let s = &deref(profile, "profile")?.0;
        let w = welfare(inst, s).map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        write_out(out, w.to_f64(), "out")
    })
}

/// Checks whether `profile` is a Nash equilibrium within relative
/// tolerance `rel_tol`.
///
/// # Safety
/// `inst` and `profile` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_nash_check(
    inst: *const CgInstance,
    profile: *const CgProfile,
    rel_tol: f64,
    out: *mut CgNashReport,
) -> CgStatus {
    guard(|| {
        let inst = &deref(inst, "inst")?.0;
        let s = &deref(profile, "profile")?.0;
        if rel_tol.is_nan() || rel_tol < 0.0 {
            return Err(Fail(CgStatus::InvalidArgument, format!("tolerance {rel_tol}")));
        }
        let rep = nash_check(inst, s, rel_tol).map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        let report = CgNashReport {
            is_nash: rep.is_nash as i32,
            max_gap: rep.max_gap,
            worst_link: rep.worst_link().map_or(-1, |l| l as i64),
            welfare: rep.welfare.to_f64(),
        };
        write_out(out, report, "out")
    })
}

/// Solves the utility maximization problem by dual decomposition.
///
/// On success `objective` receives the optimal welfare and, if `rates` is
/// non-null, the optimal rates are written to `rates[0..flows]`. When the
/// solver stops early the outputs are still written and
/// `CG_STATUS_NOT_CONVERGED` is returned.
///
/// # Safety
/// `inst` must be a live handle, `objective` a valid pointer, and `rates`
/// null or pointing to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cg_dual_solve(
    inst: *const CgInstance,
    tol: f64,
    max_iter: usize,
    objective: *mut f64,
    rates: *mut f64,
    len: usize,
) -> CgStatus {
    let mut converged = true;
    let status = guard(|| {
        let inst = &deref(inst, "inst")?.0;
        if objective.is_null() {
            return Err(null("objective"));
        }
        if !rates.is_null() && len < inst.num_flows() {
            return Err(Fail(
                CgStatus::InvalidArgument,
                format!("buffer holds {len} rates, need {}", inst.num_flows()),
            ));
        }
        let res = dual_solve(inst, tol, max_iter)
            .map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        objective.write(res.objective);
        if !rates.is_null() {
            ptr::copy_nonoverlapping(res.rates.as_ptr(), rates, res.rates.len());
        }
        converged = res.converged;
        Ok(())
    });
    if status == CgStatus::Ok && !converged {
        set_error(format!("dual solver did not reach tolerance {tol} in {max_iter} iterations"));
        return CgStatus::NotConverged;
    }
    status
}

/// Closed-form price of anarchy of a serial network with `links` links.
///
/// # Safety
/// `local_weights` must point to `links` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cg_serial_poa(
    links: usize,
    gamma: f64,
    local_weights: *const f64,
    long_weight: f64,
    long_b: f64,
    out: *mut CgSerialPoA,
) -> CgStatus {
    guard(|| {
        let local_weights = slice(local_weights, links, "local_weights")?.to_vec();
        let p = serial_poa(&SerialPoAInputs {
            links,
            gamma,
            local_weights,
            long_weight,
            long_b,
        })
        .map_err(|e| Fail::new(CgStatus::InvalidArgument, e))?;
        write_out(
            out,
            CgSerialPoA {
                chi: p.chi,
                poa1: p.poa1,
                poa2: p.poa2,
                poa: p.poa,
            },
            "out",
        )
    })
}
