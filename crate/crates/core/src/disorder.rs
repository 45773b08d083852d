//! Correlated positional disorder and its energy-shift statistics.
//!
//! Lengths are in units of the ideal bond length `R0`, energies in units of
//! the drive `Omega` unless stated otherwise. `dv` denotes the relative shift
//! `dV / V0 = d^-alpha - 1`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::FiniteLattice;
use crate::seed;
use crate::stats;

/// Reduced Planck constant in J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant in J / K.
pub const K_B: f64 = 1.380_649e-23;

/// Bonds shorter than this (units of `R0`) trigger a resample.
pub const COINCIDENCE_GUARD: f64 = 1e-6;
pub const RESAMPLE_BUDGET: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisorderMode {
    #[default]
    Positional,
    FlatPairOnly,
    FlatAllSites,
}

impl std::str::FromStr for DisorderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "positional" => Ok(Self::Positional),
            "flat_pair_only" | "flat_pair" | "pair" => Ok(Self::FlatPairOnly),
            "flat_all_sites" | "flat_all" | "all" => Ok(Self::FlatAllSites),
            other => Err(Error::InvalidParameter(format!("unknown disorder mode `{other}`"))),
        }
    }
}

impl DisorderMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Positional => "positional",
            Self::FlatPairOnly => "flat_pair_only",
            Self::FlatAllSites => "flat_all_sites",
        }
    }
}

/// How a realized distance is turned into an energy shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftFormula {
    /// `V0 (d^-alpha - 1)`.
    #[default]
    Exact,
    /// `-alpha V0 (d - 1)`.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisorderParams {
    /// Position spread `sigma / R0`.
    pub s: f64,
    pub alpha: u32,
    /// `V(R0) / Omega`.
    pub v0_over_omega: f64,
    pub mode: DisorderMode,
    /// Flat-disorder width in units of `Omega`.
    pub w: f64,
    #[serde(default)]
    pub formula: ShiftFormula,
}

impl Default for DisorderParams {
    fn default() -> Self {
        Self {
            s: 0.0,
            alpha: 3,
            v0_over_omega: 300.0,
            mode: DisorderMode::Positional,
            w: 0.0,
            formula: ShiftFormula::Exact,
        }
    }
}

impl DisorderParams {
    pub fn positional(s: f64, alpha: u32, v0_over_omega: f64) -> Self {
        Self { s, alpha, v0_over_omega, ..Self::default() }
    }

    pub fn flat(mode: DisorderMode, w: f64) -> Self {
        Self { mode, w, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(Error::InvalidParameter(format!("s must be >= 0, got {}", self.s)));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::InvalidParameter(format!("W must be >= 0, got {}", self.w)));
        }
        if self.alpha != 3 && self.alpha != 6 {
            return Err(Error::InvalidParameter(format!("alpha must be 3 or 6, got {}", self.alpha)));
        }
        if !self.v0_over_omega.is_finite() {
            return Err(Error::InvalidParameter("V0/Omega must be finite".into()));
        }
        Ok(())
    }

    /// Energy shift `dV / Omega` of a bond of length `d`.
    pub fn shift(&self, d: f64) -> f64 {
        match self.formula {
            ShiftFormula::Exact => self.v0_over_omega * (d.powi(-(self.alpha as i32)) - 1.0),
            ShiftFormula::Linearized => -(self.alpha as f64) * self.v0_over_omega * (d - 1.0),
        }
    }
}

/// One sample of the disorder on a finite lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    /// Per-atom 3D displacement, indexed like [`FiniteLattice::positions`].
    pub displacements: Vec<[f64; 3]>,
    /// Per bond slot `dV / Omega`; dangling slots hold 0.
    pub shifts: Vec<f64>,
    /// Per atom shift; nonzero only in [`DisorderMode::FlatAllSites`].
    pub one_exc_shifts: Vec<f64>,
    pub seed: u64,
    pub params: DisorderParams,
    /// Number of rejected draws before this one was accepted.
    pub resamples: usize,
}

// ---------------------------------------------------------------------------
// Trap width

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapSigma {
    /// Thermal harmonic-oscillator width in metres.
    pub exact: f64,
    /// Classical equipartition width in metres.
    pub semiclassical: f64,
}

/// Thermal position spread of an atom of mass `mass` (kg) in a harmonic trap
/// of angular frequency `trap_frequency` (rad/s) at `temperature` (K).
pub fn trap_sigma(temperature: f64, trap_frequency: f64, mass: f64) -> Result<TrapSigma> {
    for (name, v) in [("temperature", temperature), ("trap frequency", trap_frequency), ("mass", mass)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
        }
    }
    let x = trap_frequency * HBAR / (K_B * temperature);
    let var_exact = HBAR / (2.0 * mass * trap_frequency) * sinh_over_cosh_minus_one(x);
    let var_classical = K_B * temperature / (mass * trap_frequency * trap_frequency);
    Ok(TrapSigma { exact: var_exact.sqrt(), semiclassical: var_classical.sqrt() })
}

/// `sinh(x) / (cosh(x) - 1) = coth(x / 2)`, evaluated without cancellation.
fn sinh_over_cosh_minus_one(x: f64) -> f64 {
    1.0 / (0.5 * x).tanh()
}

// ---------------------------------------------------------------------------
// Sampling

pub fn sample_positions<R: Rng + ?Sized>(n_atoms: usize, s: f64, rng: &mut R) -> Vec<[f64; 3]> {
    (0..n_atoms)
        .map(|_| {
            let mut v = [0.0; 3];
            for x in &mut v {
                let z: f64 = StandardNormal.sample(rng);
                *x = s * z;
            }
            v
        })
        .collect()
}

/// Realized 3D length of bond slot `slot`, or `None` for a dangling slot.
pub fn bond_distance(lattice: &FiniteLattice, displacements: &[[f64; 3]], slot: usize) -> Option<f64> {
    let (a, b) = lattice.bonds[slot]?;
    let bv = lattice.bond_vector(slot);
    let ua = displacements[a];
    let ub = displacements[b];
    let v = [bv[0] + ub[0] - ua[0], bv[1] + ub[1] - ua[1], ub[2] - ua[2]];
    Some((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
}

/// Energy shift on every bond slot. Fails with `InvalidParameter` when a bond
/// is shorter than [`COINCIDENCE_GUARD`].
pub fn energy_shifts(
    lattice: &FiniteLattice,
    displacements: &[[f64; 3]],
    params: &DisorderParams,
) -> Result<Vec<f64>> {
    if displacements.len() != lattice.n_atoms() {
        return Err(Error::DimensionMismatch { expected: lattice.n_atoms(), got: displacements.len() });
    }
    (0..lattice.bonds.len())
        .map(|slot| match bond_distance(lattice, displacements, slot) {
            None => Ok(0.0),
            Some(d) if d < COINCIDENCE_GUARD => {
                Err(Error::InvalidParameter(format!("coincident atoms on bond slot {slot} (d = {d:e})")))
            }
            Some(d) => Ok(params.shift(d)),
        })
        .collect()
}

/// Uniform shifts on `[-W/2, W/2]`: `(pair, one_exc)`. One-excitation shifts
/// are all zero in [`DisorderMode::FlatPairOnly`].
pub fn sample_flat_disorder<R: Rng + ?Sized>(
    params: &DisorderParams,
    n_pair: usize,
    n_one: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let w = params.w;
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| w * (rng.random::<f64>() - 0.5)).collect() };
    match params.mode {
        DisorderMode::Positional => {
            Err(Error::InvalidParameter("flat disorder requested in positional mode".into()))
        }
        DisorderMode::FlatPairOnly => Ok((draw(n_pair), vec![0.0; n_one])),
        DisorderMode::FlatAllSites => {
            let pair = draw(n_pair);
            Ok((pair, draw(n_one)))
        }
    }
}

/// Draws a full realization on `lattice`. Positional draws that produce a
/// coincident pair are redrawn from the next sub-stream.
pub fn sample_realization(lattice: &FiniteLattice, params: &DisorderParams, seed: u64) -> Result<DisorderRealization> {
    params.validate()?;
    let n_atoms = lattice.n_atoms();
    if params.mode != DisorderMode::Positional {
        let mut rng = seed::rng(seed);
        let (shifts, one) = sample_flat_disorder(params, lattice.bonds.len(), n_atoms, &mut rng)?;
        let shifts = shifts
            .into_iter()
            .zip(&lattice.bonds)
            .map(|(v, b)| if b.is_some() { v } else { 0.0 })
            .collect();
        return Ok(DisorderRealization {
            displacements: vec![[0.0; 3]; n_atoms],
            shifts,
            one_exc_shifts: one,
            seed,
            params: *params,
            resamples: 0,
        });
    }
    for attempt in 0..RESAMPLE_BUDGET {
        let mut rng = seed::stream(seed, &[attempt as u64]);
        let displacements = sample_positions(n_atoms, params.s, &mut rng);
        if let Ok(shifts) = energy_shifts(lattice, &displacements, params) {
            return Ok(DisorderRealization {
                displacements,
                shifts,
                one_exc_shifts: vec![0.0; n_atoms],
                seed,
                params: *params,
                resamples: attempt,
            });
        }
    }
    Err(Error::ResampleBudget { what: "coincident atoms".into(), budget: RESAMPLE_BUDGET })
}

// ---------------------------------------------------------------------------
// Analytic densities

fn check_s(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("s must be > 0, got {s}")))
    }
}

/// Density of the realized distance `d` between two atoms with ideal
/// separation 1 and independent isotropic Gaussian displacements of width `s`.
pub fn pdf_distance(d: f64, s: f64) -> Result<f64> {
    check_s(s)?;
    if d < 0.0 {
        return Ok(0.0);
    }
    // d/(sqrt(pi) s) exp(-(d^2+1)/4s^2) sinh(d/2s^2), rearranged to avoid overflow.
    let s2 = s * s;
    Ok(d / (2.0 * PI.sqrt() * s) * (-(d - 1.0).powi(2) / (4.0 * s2)).exp() * -(-d / s2).exp_m1())
}

/// Cumulative distribution of [`pdf_distance`].
pub fn cdf_distance(d: f64, s: f64) -> Result<f64> {
    check_s(s)?;
    if d <= 0.0 {
        return Ok(0.0);
    }
    let tau = std::f64::consts::SQRT_2 * s;
    let (a, b) = ((d - 1.0) / tau, (d + 1.0) / tau);
    // Phi(a) + Phi(b) - 1 = Phi(a) - Phi(-b), the latter avoids cancellation.
    let f = stats::normal_cdf(a) - stats::normal_cdf(-b) + tau * (stats::normal_pdf(b) - stats::normal_pdf(a));
    Ok(f.clamp(0.0, 1.0))
}

/// Distance that produces relative shift `dv`.
pub fn distance_of_shift(dv: f64, alpha: u32) -> f64 {
    (1.0 + dv).powf(-1.0 / alpha as f64)
}

/// Density of the relative shift `dv = d^-alpha - 1`.
pub fn pdf_energy_shift(dv: f64, s: f64, alpha: u32) -> Result<f64> {
    check_s(s)?;
    if dv <= -1.0 || !dv.is_finite() {
        return Err(Error::InvalidParameter(format!("dv must lie in (-1, inf), got {dv}")));
    }
    let a = alpha as f64;
    let d = distance_of_shift(dv, alpha);
    let jac = (1.0 + dv).powf(-1.0 / a - 1.0) / a;
    Ok(pdf_distance(d, s)? * jac)
}

/// Cumulative distribution of [`pdf_energy_shift`].
pub fn cdf_energy_shift(dv: f64, s: f64, alpha: u32) -> Result<f64> {
    check_s(s)?;
    if dv <= -1.0 {
        return Ok(0.0);
    }
    Ok(1.0 - cdf_distance(distance_of_shift(dv, alpha), s)?)
}

/// Leading large-`dv` behaviour of [`pdf_energy_shift`].
pub fn tail_asymptote(dv: f64, s: f64, alpha: u32) -> f64 {
    let a = alpha as f64;
    (-1.0 / (4.0 * s * s)).exp() * dv.powf(-1.0 - 3.0 / a) / (2.0 * a * PI.sqrt() * s.powi(3))
}

/// Start of the fat tail, `(2 s^2)^-alpha`.
pub fn tail_threshold(s: f64, alpha: u32) -> f64 {
    (2.0 * s * s).powi(-(alpha as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailProbability {
    pub threshold: f64,
    /// `4 s^3 / (3 sqrt(pi)) exp(-1/4s^2)`.
    pub closed_form: f64,
    /// Numerical integral of the density beyond the threshold.
    pub quadrature: f64,
    /// Whether the threshold is deep enough in the tail for the closed form.
    pub valid: bool,
}

/// Probability mass of the fat tail `dv > (2 s^2)^-alpha`.
pub fn tail_probability(s: f64, alpha: u32) -> Result<TailProbability> {
    check_s(s)?;
    let threshold = tail_threshold(s, alpha);
    let closed_form = 4.0 * s.powi(3) / (3.0 * PI.sqrt()) * (-1.0 / (4.0 * s * s)).exp();
    // P(dv > T) = P(d < d_T); integrate the distance density over [0, d_T].
    let d_t = distance_of_shift(threshold, alpha);
    let scale = closed_form.max(f64::MIN_POSITIVE);
    let quadrature = stats::integrate_panels(|d| pdf_distance(d, s).unwrap_or(0.0), 0.0, d_t, 16, 1e-10 * scale);
    Ok(TailProbability { threshold, closed_form, quadrature, valid: threshold >= 100.0 })
}

// ---------------------------------------------------------------------------
// Chain averages

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub theory: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Mean bond length of an open chain of `l` bonds.
fn chain_mean_distance<R: Rng + ?Sized>(l: usize, s: f64, rng: &mut R) -> f64 {
    let u = sample_positions(l + 1, s, rng);
    (0..l)
        .map(|k| {
            let v = [1.0 + u[k + 1][0] - u[k][0], u[k + 1][1] - u[k][1], u[k + 1][2] - u[k][2]];
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .sum::<f64>()
        / l as f64
}

/// Variance of the mean bond length `D` of an `l`-bond chain: theory
/// `2 s^2 / l^2` and a Monte-Carlo estimate over `samples` chains.
pub fn mean_distance_variance(l: usize, s: f64, samples: usize, seed: u64) -> Result<VarianceEstimate> {
    if l < 2 {
        return Err(Error::LengthTooSmall(l));
    }
    let mut rng = seed::rng(seed);
    let ds: Vec<f64> = (0..samples).map(|_| chain_mean_distance(l, s, &mut rng)).collect();
    let (estimate, stderr) = stats::variance_stderr(&ds);
    Ok(VarianceEstimate { theory: 2.0 * s * s / (l * l) as f64, estimate, stderr })
}

/// Control model where every bond takes an independent distance: the
/// variance of `D` falls only as `2 s^2 / l`.
pub fn independent_distance_variance(l: usize, s: f64, samples: usize, seed: u64) -> Result<VarianceEstimate> {
    if l < 2 {
        return Err(Error::LengthTooSmall(l));
    }
    let mut rng = seed::rng(seed);
    let ds: Vec<f64> = (0..samples)
        .map(|_| (0..l).map(|_| chain_mean_distance(1, s, &mut rng)).sum::<f64>() / l as f64)
        .collect();
    let (estimate, stderr) = stats::variance_stderr(&ds);
    Ok(VarianceEstimate { theory: 2.0 * s * s / l as f64, estimate, stderr })
}

/// Mean over `samples` open chains of `l` bonds of the summed relative shift
/// `sum_k dv_k`, with its standard error.
pub fn mean_total_shift(l: usize, s: f64, alpha: u32, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = seed::rng(seed);
    let a = -(alpha as i32);
    let totals: Vec<f64> = (0..samples)
        .map(|_| {
            let u = sample_positions(l + 1, s, &mut rng);
            (0..l)
                .map(|k| {
                    let v = [1.0 + u[k + 1][0] - u[k][0], u[k + 1][1] - u[k][1], u[k + 1][2] - u[k][2]];
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powi(a) - 1.0
                })
                .sum()
        })
        .collect();
    stats::mean_stderr(&totals)
}

/// Samples per independent stream in [`sample_relative_shifts`].
const SHIFT_CHUNK: usize = 1 << 16;

/// `n` independent relative shifts `dv = d^-alpha - 1` of a single bond.
/// Chunk `k` of the output is drawn from `derive(seed, [k])`, so the result
/// does not depend on the thread count.
pub fn sample_relative_shifts(n: usize, s: f64, alpha: u32, seed: u64) -> Vec<f64> {
    use rayon::prelude::*;
    let a = -(alpha as i32);
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(SHIFT_CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::stream(seed, &[k as u64]);
            let len = SHIFT_CHUNK.min(n - k * SHIFT_CHUNK);
            (0..len)
                .map(|_| {
                    let u = sample_positions(2, s, &mut rng);
                    let v = [1.0 + u[1][0] - u[0][0], u[1][1] - u[0][1], u[1][2] - u[0][2]];
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powi(a) - 1.0
                })
                .collect()
        })
        .collect();
    chunks.concat()
}
