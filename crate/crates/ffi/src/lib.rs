//! C interface to `rydflat`.
//!
//! Every function returns an [`RfStatus`]; on failure a message is stored
//! per thread and can be read with [`rf_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_compute` functions and released with the
//! matching `*_free`. Panics never cross the boundary; they are reported as
//! `RF_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rydflat::bloch::{self, BandStructure};
use rydflat::disorder::{self, DisorderMode, DisorderParams};
use rydflat::dynamics::{self, LadderState, Propagator, PulseMode, SpinSystem};
use rydflat::lattice::{self, RealLattice};
use rydflat::transfer::{self, TransferConfig};
use rydflat::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfDisorderMode {
    Positional = 0,
    FlatPairOnly = 1,
    FlatAllSites = 2,
}

impl From<RfDisorderMode> for DisorderMode {
    fn from(m: RfDisorderMode) -> Self {
        match m {
            RfDisorderMode::Positional => DisorderMode::Positional,
            RfDisorderMode::FlatPairOnly => DisorderMode::FlatPairOnly,
            RfDisorderMode::FlatAllSites => DisorderMode::FlatAllSites,
        }
    }
}

/// Leg-resolved moments of the excitation profile (rungs counted from 1).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RfObservables {
    pub mean_upper: f64,
    pub mean_lower: f64,
    pub dx_upper: f64,
    pub dx_lower: f64,
}

/// Band structure on a momentum grid.
pub struct RfBands {
    inner: BandStructure,
}

/// Flat-band state evolving under one disorder realization of the
/// effective ladder Hamiltonian.
pub struct RfEvolution {
    propagator: Propagator,
    initial: LadderState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RfStatus {
    match err {
        Error::ResampleBudget { .. }
        | Error::Resonance { .. }
        | Error::NotHermitian(_)
        | Error::TooFewPoints { .. }
        | Error::Undefined(_) => RfStatus::Numerical,
        _ => RfStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), (RfStatus, String)>>(f: F) -> RfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            RfStatus::Panic
        }
    }
}

trait Lift<T> {
    fn lift(self) -> Result<T, (RfStatus, String)>;
}

impl<T> Lift<T> for rydflat::Result<T> {
    fn lift(self) -> Result<T, (RfStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (RfStatus, String) {
    (RfStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (RfStatus, String) {
    (RfStatus::InvalidArgument, msg.into())
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], (RfStatus, String)> {
    if buf.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err((RfStatus::BufferTooSmall, format!("`{what}` holds {len} values, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, need))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Bands

/// Computes the synthetic-lattice bands of a built-in lattice (`"chain"`,
/// `"ladder"`, `"square"`, `"triangular"`, `"honeycomb"`) or of a lattice
/// JSON document, on the `k_y = 0` cut with `kpoints` points.
#[no_mangle]
pub unsafe extern "C" fn rf_bands_compute(lattice: *const c_char, kpoints: usize, out: *mut *mut RfBands) -> RfStatus {
    guard(|| {
        if lattice.is_null() {
            return Err(null("lattice"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = CStr::from_ptr(lattice).to_str().map_err(|_| invalid("lattice is not UTF-8"))?;
        if kpoints == 0 {
            return Err(invalid("kpoints must be >= 1"));
        }
        let real = if spec.trim_start().starts_with('{') {
            RealLattice::from_json(spec).lift()?
        } else {
            RealLattice::build(spec.parse().lift()?).lift()?
        };
        let syn = lattice::synthesize(&real).lift()?;
        let grid = bloch::axis_cut(&syn, kpoints);
        let inner = bloch::band_structure(&syn, &grid).lift()?;
        *out = Box::into_raw(Box::new(RfBands { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_bands_free(bands: *mut RfBands) {
    if !bands.is_null() {
        drop(Box::from_raw(bands));
    }
}

/// Writes the number of momenta and bands.
#[no_mangle]
pub unsafe extern "C" fn rf_bands_shape(bands: *const RfBands, n_k: *mut usize, n_bands: *mut usize) -> RfStatus {
    guard(|| {
        let b = bands.as_ref().ok_or_else(|| null("bands"))?;
        if n_k.is_null() || n_bands.is_null() {
            return Err(null("n_k/n_bands"));
        }
        *n_k = b.inner.k_grid.len();
        *n_bands = b.inner.n_bands();
        Ok(())
    })
}

/// Copies the energies row-major (`n_k x n_bands`, ascending per row).
#[no_mangle]
pub unsafe extern "C" fn rf_bands_energies(bands: *const RfBands, buf: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let b = bands.as_ref().ok_or_else(|| null("bands"))?;
        let need = b.inner.k_grid.len() * b.inner.n_bands();
        let dst = out_slice(buf, len, need, "buf")?;
        for (d, e) in dst.iter_mut().zip(b.inner.bands.iter().flatten()) {
            *d = *e;
        }
        Ok(())
    })
}

/// Number of bands whose spread over the grid is below `tol`.
#[no_mangle]
pub unsafe extern "C" fn rf_bands_flat_count(bands: *const RfBands, tol: f64, count: *mut usize) -> RfStatus {
    guard(|| {
        let b = bands.as_ref().ok_or_else(|| null("bands"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        if !(tol > 0.0) {
            return Err(invalid("tol must be > 0"));
        }
        *count = bloch::count_flat_bands(&b.inner, tol);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Disorder

/// Density of the relative pair shift `dv = d^-alpha - 1` at spread `s`.
#[no_mangle]
pub unsafe extern "C" fn rf_shift_density(dv: f64, s: f64, alpha: u32, out: *mut f64) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = disorder::pdf_energy_shift(dv, s, alpha).lift()?;
        Ok(())
    })
}

/// Fills `buf` with `n` sampled relative pair shifts.
#[no_mangle]
pub unsafe extern "C" fn rf_sample_shifts(n: usize, s: f64, alpha: u32, seed: u64, buf: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        DisorderParams::positional(s, alpha, 1.0).validate().lift()?;
        let dst = out_slice(buf, len, n, "buf")?;
        dst.copy_from_slice(&disorder::sample_relative_shifts(n, s, alpha, seed));
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Localization

/// Localization lengths `xi1 <= xi2` (unit cells) of the disordered ladder
/// at `energy`, with standard errors. `strength` is `s` for positional
/// disorder (then `alpha`, `v0_over_omega` apply) and `W` otherwise.
#[no_mangle]
pub unsafe extern "C" fn rf_localization_lengths(
    energy: f64,
    mode: RfDisorderMode,
    strength: f64,
    alpha: u32,
    v0_over_omega: f64,
    n_steps: usize,
    seed: u64,
    xi: *mut f64,
    xi_stderr: *mut f64,
) -> RfStatus {
    guard(|| {
        if xi.is_null() || xi_stderr.is_null() {
            return Err(null("xi/xi_stderr"));
        }
        let mode: DisorderMode = mode.into();
        let mut params = DisorderParams { alpha, v0_over_omega, mode, ..DisorderParams::default() };
        match mode {
            DisorderMode::Positional => params.s = strength,
            _ => params.w = strength,
        }
        let cfg = TransferConfig { n_steps, ..TransferConfig::new(energy, params, seed) };
        let r = transfer::lyapunov_spectrum(&cfg).lift()?;
        let (x, e) = (std::slice::from_raw_parts_mut(xi, 2), std::slice::from_raw_parts_mut(xi_stderr, 2));
        x.copy_from_slice(&[r.xi1, r.xi2]);
        e.copy_from_slice(&[r.xi1_stderr, r.xi2_stderr]);
        Ok(())
    })
}

/// Fitted exponents `nu` with `xi ~ strength^-nu` over an ascending grid of
/// `n` disorder strengths.
#[no_mangle]
pub unsafe extern "C" fn rf_scaling_exponents(
    energy: f64,
    mode: RfDisorderMode,
    grid: *const f64,
    n: usize,
    n_steps: usize,
    seed: u64,
    nu: *mut f64,
) -> RfStatus {
    guard(|| {
        if grid.is_null() || nu.is_null() {
            return Err(null("grid/nu"));
        }
        let g = std::slice::from_raw_parts(grid, n);
        if !g.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("grid must be strictly ascending"));
        }
        let params = DisorderParams { mode: mode.into(), ..DisorderParams::default() };
        let cfg = TransferConfig { n_steps, ..TransferConfig::new(energy, params, seed) };
        let (fit, _) = transfer::scaling_exponent(energy, g, &cfg, 1, None).lift()?;
        std::slice::from_raw_parts_mut(nu, 2).copy_from_slice(&fit.nu);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Dynamics

/// Flat-band state on rungs `L/2, L/2 + 1` of an `L`-rung ladder under one
/// positional-disorder realization.
#[no_mangle]
pub unsafe extern "C" fn rf_evolution_new(
    length: usize,
    s: f64,
    v0_over_omega: f64,
    alpha: u32,
    seed: u64,
    out: *mut *mut RfEvolution,
) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if length < 4 {
            return Err(invalid(format!("length must be >= 4, got {length}")));
        }
        let params = DisorderParams::positional(s, alpha, v0_over_omega);
        params.validate().lift()?;
        let real = dynamics::ladder_disorder(length, &params, seed).lift()?;
        let propagator = Propagator::new(dynamics::disordered_effective_hamiltonian(&real, length).lift()?).lift()?;
        let initial = dynamics::psi_loc(length, length / 2).lift()?;
        *out = Box::into_raw(Box::new(RfEvolution { propagator, initial }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_evolution_free(evolution: *mut RfEvolution) {
    if !evolution.is_null() {
        drop(Box::from_raw(evolution));
    }
}

unsafe fn state_at(ev: *const RfEvolution, t: f64) -> Result<(usize, dynamics::Observables), (RfStatus, String)> {
    let e = ev.as_ref().ok_or_else(|| null("evolution"))?;
    if !t.is_finite() {
        return Err(invalid("t must be finite"));
    }
    let amps = e.propagator.evolve(&e.initial.amplitudes, t).lift()?;
    let st = LadderState { amplitudes: amps, ..e.initial.clone() };
    Ok((e.initial.length, dynamics::observables(&st).lift()?))
}

/// Profile moments at time `t` (units of `1/Omega`).
#[no_mangle]
pub unsafe extern "C" fn rf_evolution_observe(evolution: *const RfEvolution, t: f64, out: *mut RfObservables) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, o) = state_at(evolution, t)?;
        *out = RfObservables { mean_upper: o.mean_upper, mean_lower: o.mean_lower, dx_upper: o.dx_upper, dx_lower: o.dx_lower };
        Ok(())
    })
}

/// Normalized per-rung profiles of both legs at time `t`; each buffer
/// must hold `L` values.
#[no_mangle]
pub unsafe extern "C" fn rf_evolution_profile(
    evolution: *const RfEvolution,
    t: f64,
    upper: *mut f64,
    lower: *mut f64,
    len: usize,
) -> RfStatus {
    guard(|| {
        let (l, o) = state_at(evolution, t)?;
        out_slice(upper, len, l, "upper")?.copy_from_slice(&o.p_upper);
        out_slice(lower, len, l, "lower")?.copy_from_slice(&o.p_lower);
        Ok(())
    })
}

/// Fidelity of the six-pulse preparation on rungs `rung, rung + 1`
/// (1-based). `full_hamiltonian` selects finite-duration pulses at Rabi
/// frequency `omega_r` instead of ideal gates.
#[no_mangle]
pub unsafe extern "C" fn rf_prepare_fidelity(
    length: usize,
    rung: usize,
    full_hamiltonian: bool,
    omega_r: f64,
    v0_over_omega: f64,
    fidelity: *mut f64,
) -> RfStatus {
    guard(|| {
        if fidelity.is_null() {
            return Err(null("fidelity"));
        }
        if !(omega_r > 0.0) {
            return Err(invalid("omega_r must be > 0"));
        }
        let mode = if full_hamiltonian { PulseMode::FullHamiltonian } else { PulseMode::IdealGate };
        let sys = SpinSystem::ideal(length, v0_over_omega, 3);
        *fidelity = dynamics::prepare(&sys, rung, mode, omega_r).lift()?.fidelity;
        Ok(())
    })
}
