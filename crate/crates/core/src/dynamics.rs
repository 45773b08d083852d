//! Quench dynamics on the ladder: state preparation, evolution under the
//! effective synthetic Hamiltonian and the full spin Hamiltonian, and
//! excitation-profile observables.
//!
//! Conventions: rungs are numbered `1..=L` in user-facing APIs. Atom `c` is
//! the upper atom of rung `c + 1`, atom `L + c` the lower one; bit `j` of a
//! spin configuration is set when atom `j` is excited. Synthetic slot
//! `type * L + c` with types `A, B, C, D, E` (see [`crate::lattice`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{self, DisorderParams};
use crate::error::{Error, Result};
use crate::lattice::{self, Boundary, FiniteLattice, LatticeKind, OnSite, RealLattice};
use crate::seed;
use crate::stats;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-12;
/// Largest ladder for the full spin Hamiltonian (`2^(2L)` states).
pub const MAX_SPIN_LENGTH: usize = 7;

const A: usize = 0;
const B: usize = 1;
const C: usize = 2;
const D: usize = 3;
const E: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `5L` amplitudes on the synthetic ladder.
    Synthetic,
    /// `2^(2L)` spin amplitudes.
    Spin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderState {
    pub representation: Representation,
    pub length: usize,
    pub amplitudes: DVector<Complex64>,
}

impl LadderState {
    pub fn new(representation: Representation, length: usize, amplitudes: DVector<Complex64>) -> Result<Self> {
        let dim = match representation {
            Representation::Synthetic => 5 * length,
            Representation::Spin => 1 << (2 * length),
        };
        if amplitudes.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: amplitudes.len() });
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!("state norm {norm} differs from 1")));
        }
        if representation == Representation::Synthetic {
            for slot in [A * length + length - 1, B * length + length - 1] {
                if amplitudes[slot].norm() > 0.0 {
                    return Err(Error::InvalidParameter("amplitude on a removed boundary slot".into()));
                }
            }
        }
        Ok(Self { representation, length, amplitudes })
    }

    /// All atoms in the ground state.
    pub fn all_down(length: usize) -> Result<Self> {
        check_spin_length(length)?;
        let mut v = DVector::zeros(1 << (2 * length));
        v[0] = Complex64::new(1.0, 0.0);
        Self::new(Representation::Spin, length, v)
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `|<self|other>|^2`; both states must share representation and length.
    pub fn fidelity(&self, other: &LadderState) -> Result<f64> {
        if self.representation != other.representation || self.length != other.length {
            return Err(Error::InvalidParameter("fidelity between incompatible states".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes).norm_sqr())
    }
}

fn check_spin_length(l: usize) -> Result<()> {
    if l < 2 {
        return Err(Error::LengthTooSmall(l));
    }
    if l > MAX_SPIN_LENGTH {
        return Err(Error::InvalidParameter(format!(
            "spin representation limited to L <= {MAX_SPIN_LENGTH}, got {l}"
        )));
    }
    Ok(())
}

/// Spin configuration of synthetic slot `slot`, or `None` for a removed
/// boundary slot.
pub fn slot_configuration(length: usize, slot: usize) -> Option<u64> {
    let (t, c) = (slot / length, slot % length);
    let up = |c: usize| 1u64 << c;
    let lo = |c: usize| 1u64 << (length + c);
    match t {
        A if c + 1 < length => Some(up(c) | up(c + 1)),
        B if c + 1 < length => Some(lo(c) | lo(c + 1)),
        C => Some(up(c)),
        D => Some(lo(c)),
        E => Some(up(c) | lo(c)),
        _ => None,
    }
}

/// Localized flat-band state `(A_i + B_i - E_i - E_{i+1}) / 2` on rungs
/// `i, i+1` (1-based).
pub fn psi_loc(length: usize, i: usize) -> Result<LadderState> {
    if length < 2 {
        return Err(Error::LengthTooSmall(length));
    }
    if i < 1 || i >= length {
        return Err(Error::InvalidParameter(format!("rung {i} outside 1..={}", length - 1)));
    }
    let c = i - 1;
    let mut v = DVector::zeros(5 * length);
    v[A * length + c] = Complex64::new(0.5, 0.0);
    v[B * length + c] = Complex64::new(0.5, 0.0);
    v[E * length + c] = Complex64::new(-0.5, 0.0);
    v[E * length + c + 1] = Complex64::new(-0.5, 0.0);
    LadderState::new(Representation::Synthetic, length, v)
}

/// Embeds a synthetic state into the spin basis.
pub fn embed_in_spin(state: &LadderState) -> Result<LadderState> {
    if state.representation != Representation::Synthetic {
        return Err(Error::InvalidParameter("embedding expects a synthetic state".into()));
    }
    let l = state.length;
    check_spin_length(l)?;
    let mut v = DVector::zeros(1 << (2 * l));
    for (slot, amp) in state.amplitudes.iter().enumerate() {
        if let Some(cfg) = slot_configuration(l, slot) {
            v[cfg as usize] = *amp;
        }
    }
    LadderState::new(Representation::Spin, l, v)
}

/// Projection of a spin state onto the single-excitation and single-pair
/// subspace, with the norm left outside (`leakage = 1 - |P psi|^2`).
pub fn project_to_synthetic(state: &LadderState) -> Result<(DVector<Complex64>, f64)> {
    if state.representation != Representation::Spin {
        return Err(Error::InvalidParameter("projection expects a spin state".into()));
    }
    let l = state.length;
    let mut v = DVector::zeros(5 * l);
    for slot in 0..5 * l {
        if let Some(cfg) = slot_configuration(l, slot) {
            v[slot] = state.amplitudes[cfg as usize];
        }
    }
    let leakage = (state.norm().powi(2) - v.norm_squared()).max(0.0);
    Ok((v, leakage))
}

// ---------------------------------------------------------------------------
// Hamiltonians

/// Ladder geometry used to place atoms and compute bond shifts.
pub fn ladder_lattice(length: usize) -> Result<FiniteLattice> {
    RealLattice::build(LatticeKind::Ladder)?.finite(length, Boundary::Open)
}

/// Effective `5L x 5L` Hamiltonian (units of `Omega`) with per-bond shifts
/// laid out as `A_0..A_{L-1}, B_0.., E_0..` and optional atom shifts
/// `C_0.., D_0..`.
pub fn effective_hamiltonian(length: usize, pair: Option<&[f64]>, one_exc: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let syn = lattice::synthesize(&RealLattice::build(LatticeKind::Ladder)?)?;
    lattice::finite_hamiltonian_with(&syn, length, Boundary::Open, OnSite { pair, one_exc })
}

/// How interaction distances are measured in the full spin Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceModel {
    /// All pairs, true 3D distances of the displaced atoms.
    #[default]
    Geometric,
    /// Only the `3L - 2` ladder bonds interact, with their realized lengths;
    /// the chain-style truncation of the interaction tail.
    NearestNeighbour,
}

/// Atom register with interaction parameters, shared by the full
/// Hamiltonian and pulse evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub length: usize,
    /// Drive amplitude in units of the reference `Omega`.
    pub omega: f64,
    pub v0_over_omega: f64,
    pub alpha: u32,
    /// Per-atom displacements in units of `R0`.
    pub displacements: Vec<[f64; 3]>,
    pub distance_model: DistanceModel,
}

impl SpinSystem {
    pub fn ideal(length: usize, v0_over_omega: f64, alpha: u32) -> Self {
        Self {
            length,
            omega: 1.0,
            v0_over_omega,
            alpha,
            displacements: vec![[0.0; 3]; 2 * length],
            distance_model: DistanceModel::Geometric,
        }
    }

    fn position(&self, atom: usize) -> [f64; 3] {
        let l = self.length;
        let (x, y) = if atom < l { (atom as f64, 0.0) } else { ((atom - l) as f64, -1.0) };
        let u = self.displacements[atom];
        [x + u[0], y + u[1], u[2]]
    }

    fn ideal_distance(&self, a: usize, b: usize) -> f64 {
        let l = self.length;
        let (xa, ya) = ((a % l) as f64, (a / l) as f64);
        let (xb, yb) = ((b % l) as f64, (b / l) as f64);
        (xa - xb).hypot(ya - yb)
    }

    /// Interaction `V(d_ab) / Omega`.
    pub fn interaction(&self, a: usize, b: usize) -> f64 {
        if self.distance_model == DistanceModel::NearestNeighbour && (self.ideal_distance(a, b) - 1.0).abs() > 1e-9 {
            return 0.0;
        }
        let (p, q) = (self.position(a), self.position(b));
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        self.v0_over_omega * d.powi(-(self.alpha as i32))
    }

    fn interaction_table(&self) -> Vec<Vec<f64>> {
        let n = 2 * self.length;
        (0..n)
            .map(|a| (0..n).map(|b| if a == b { 0.0 } else { self.interaction(a, b) }).collect())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        check_spin_length(self.length)?;
        if self.displacements.len() != 2 * self.length {
            return Err(Error::DimensionMismatch { expected: 2 * self.length, got: self.displacements.len() });
        }
        Ok(())
    }
}

/// Full spin Hamiltonian in units of `Omega`:
/// `omega sum_k sigma_x + Delta sum_k n_k + sum_{k<j} V(d_kj) n_k n_j` with the
/// facilitation detuning `Delta = -V0`.
pub fn build_full_hamiltonian(sys: &SpinSystem) -> Result<DMatrix<f64>> {
    sys.validate()?;
    let n = 2 * sys.length;
    let dim = 1usize << n;
    let v = sys.interaction_table();
    let delta = -sys.v0_over_omega;
    let mut h = DMatrix::zeros(dim, dim);
    for cfg in 0..dim {
        let mut diag = 0.0;
        for a in 0..n {
            if cfg >> a & 1 == 1 {
                diag += delta;
                for b in a + 1..n {
                    if cfg >> b & 1 == 1 {
                        diag += v[a][b];
                    }
                }
            }
            h[(cfg ^ (1 << a), cfg)] = sys.omega;
        }
        h[(cfg, cfg)] = diag;
    }
    Ok(h)
}

/// Largest asymmetry `|H_ij - H_ji|`.
pub fn hermiticity_defect(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Evolution

/// Spectral decomposition of a real symmetric Hamiltonian for repeated
/// evaluation of `exp(-i H t)`.
pub struct Propagator {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    hamiltonian: DMatrix<f64>,
}

fn split(v: &DVector<Complex64>) -> (DVector<f64>, DVector<f64>) {
    (v.map(|z| z.re), v.map(|z| z.im))
}

impl Propagator {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::DimensionMismatch { expected: h.nrows(), got: h.ncols() });
        }
        let defect = hermiticity_defect(&h);
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let eig = SymmetricEigen::new(h.clone());
        Ok(Self { values: eig.eigenvalues, vectors: eig.eigenvectors, hamiltonian: h })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    /// Spectral coefficients `V^T psi`.
    fn coefficients(&self, psi: &DVector<Complex64>) -> DVector<Complex64> {
        let (re, im) = split(psi);
        let vt = self.vectors.transpose();
        let (cr, ci) = (&vt * re, &vt * im);
        DVector::from_fn(cr.len(), |k, _| Complex64::new(cr[k], ci[k]))
    }

    fn synthesize(&self, coeffs: &DVector<Complex64>) -> DVector<Complex64> {
        let (re, im) = split(coeffs);
        let (pr, pi) = (&self.vectors * re, &self.vectors * im);
        DVector::from_fn(pr.len(), |k, _| Complex64::new(pr[k], pi[k]))
    }

    pub fn evolve(&self, psi: &DVector<Complex64>, t: f64) -> Result<DVector<Complex64>> {
        Ok(self.evolve_many(psi, &[t])?.pop().expect("one time"))
    }

    pub fn evolve_many(&self, psi: &DVector<Complex64>, times: &[f64]) -> Result<Vec<DVector<Complex64>>> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: psi.len() });
        }
        let c = self.coefficients(psi);
        Ok(times
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    return psi.clone();
                }
                let phased = DVector::from_fn(c.len(), |k, _| c[k] * Complex64::from_polar(1.0, -self.values[k] * t));
                self.synthesize(&phased)
            })
            .collect())
    }

    /// `<psi|H|psi>`.
    pub fn energy(&self, psi: &DVector<Complex64>) -> f64 {
        let (re, im) = split(psi);
        re.dot(&(&self.hamiltonian * &re)) + im.dot(&(&self.hamiltonian * &im))
    }
}

/// `exp(-i H t) psi0` with `H` real symmetric.
pub fn evolve(h: &DMatrix<f64>, psi0: &LadderState, t: f64) -> Result<LadderState> {
    let prop = Propagator::new(h.clone())?;
    let amps = prop.evolve(&psi0.amplitudes, t)?;
    Ok(LadderState { amplitudes: amps, ..psi0.clone() })
}

// ---------------------------------------------------------------------------
// Observables

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observables {
    pub p_upper: Vec<f64>,
    pub p_lower: Vec<f64>,
    pub mean_upper: f64,
    pub mean_lower: f64,
    pub dx_upper: f64,
    pub dx_lower: f64,
}

/// Per-rung excitation numbers `(n^u, n^l)`.
pub fn occupations(state: &LadderState) -> (Vec<f64>, Vec<f64>) {
    let l = state.length;
    let mut up = vec![0.0; l];
    let mut lo = vec![0.0; l];
    match state.representation {
        Representation::Synthetic => {
            for slot in 0..5 * l {
                if let Some(cfg) = slot_configuration(l, slot) {
                    add_configuration(cfg, state.amplitudes[slot].norm_sqr(), l, &mut up, &mut lo);
                }
            }
        }
        Representation::Spin => {
            for (cfg, amp) in state.amplitudes.iter().enumerate() {
                let w = amp.norm_sqr();
                if w > 0.0 {
                    add_configuration(cfg as u64, w, l, &mut up, &mut lo);
                }
            }
        }
    }
    (up, lo)
}

fn add_configuration(cfg: u64, w: f64, l: usize, up: &mut [f64], lo: &mut [f64]) {
    for c in 0..l {
        if cfg >> c & 1 == 1 {
            up[c] += w;
        }
        if cfg >> (l + c) & 1 == 1 {
            lo[c] += w;
        }
    }
}

/// Normalized profile with mean and standard deviation over rungs `1..=L`.
pub fn profile_moments(n: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let total: f64 = n.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("leg without excitation".into()));
    }
    let p: Vec<f64> = n.iter().map(|x| x / total).collect();
    let mean: f64 = p.iter().enumerate().map(|(i, q)| q * (i + 1) as f64).sum();
    let var: f64 = p.iter().enumerate().map(|(i, q)| q * ((i + 1) as f64 - mean).powi(2)).sum();
    Ok((p, mean, var.max(0.0).sqrt()))
}

pub fn observables(state: &LadderState) -> Result<Observables> {
    let (up, lo) = occupations(state);
    let (p_upper, mean_upper, dx_upper) = profile_moments(&up)?;
    let (p_lower, mean_lower, dx_lower) = profile_moments(&lo)?;
    Ok(Observables { p_upper, p_lower, mean_upper, mean_lower, dx_upper, dx_lower })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolutionRecord {
    pub times: Vec<f64>,
    pub p_upper: Vec<Vec<f64>>,
    pub p_lower: Vec<Vec<f64>>,
    pub mean_upper: Vec<f64>,
    pub mean_lower: Vec<f64>,
    pub dx_upper: Vec<f64>,
    pub dx_lower: Vec<f64>,
    pub seed: u64,
}

pub fn evolution_record(prop: &Propagator, psi0: &LadderState, times: &[f64], seed: u64) -> Result<EvolutionRecord> {
    let mut rec = EvolutionRecord {
        times: times.to_vec(),
        p_upper: vec![],
        p_lower: vec![],
        mean_upper: vec![],
        mean_lower: vec![],
        dx_upper: vec![],
        dx_lower: vec![],
        seed,
    };
    for amps in prop.evolve_many(&psi0.amplitudes, times)? {
        let st = LadderState { amplitudes: amps, ..psi0.clone() };
        let o = observables(&st)?;
        rec.p_upper.push(o.p_upper);
        rec.p_lower.push(o.p_lower);
        rec.mean_upper.push(o.mean_upper);
        rec.mean_lower.push(o.mean_lower);
        rec.dx_upper.push(o.dx_upper);
        rec.dx_lower.push(o.dx_lower);
    }
    Ok(rec)
}

// ---------------------------------------------------------------------------
// Disordered runs

/// Positional disorder realization on an `L`-rung ladder.
pub fn ladder_disorder(length: usize, params: &DisorderParams, seed: u64) -> Result<disorder::DisorderRealization> {
    disorder::sample_realization(&ladder_lattice(length)?, params, seed)
}

/// Effective Hamiltonian of one disorder realization.
pub fn disordered_effective_hamiltonian(real: &disorder::DisorderRealization, length: usize) -> Result<DMatrix<f64>> {
    let one = real.one_exc_shifts.iter().any(|&x| x != 0.0).then_some(&real.one_exc_shifts[..]);
    effective_hamiltonian(length, Some(&real.shifts), one)
}

/// Evolution of `psi_loc` at the ladder centre under one realization of
/// `H_eff`.
pub fn run_effective(length: usize, params: &DisorderParams, times: &[f64], seed: u64) -> Result<EvolutionRecord> {
    let real = ladder_disorder(length, params, seed)?;
    let prop = Propagator::new(disordered_effective_hamiltonian(&real, length)?)?;
    evolution_record(&prop, &psi_loc(length, length / 2)?, times, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DxRow {
    pub s: f64,
    pub v0_over_omega: f64,
    pub t: f64,
    pub dx_upper: f64,
    pub dx_upper_stderr: f64,
    pub dx_lower: f64,
    pub dx_lower_stderr: f64,
    /// Seed of the first realization of this cell.
    pub seed: u64,
}

/// Disorder-averaged width of `psi_loc` under `H_eff` for every
/// `(s, V0/Omega)` cell and time. Realization `r` of cell `(i, j)` uses seed
/// `derive(master, [i, j, r])`.
pub fn dx_scan(
    length: usize,
    s_grid: &[f64],
    v0_grid: &[f64],
    times: &[f64],
    realizations: usize,
    alpha: u32,
    master: u64,
) -> Result<Vec<DxRow>> {
    if length < 4 {
        return Err(Error::LengthTooSmall(length));
    }
    if realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let cells: Vec<(usize, usize)> =
        (0..s_grid.len()).flat_map(|i| (0..v0_grid.len()).map(move |j| (i, j))).collect();
    let per_cell: Vec<Vec<DxRow>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let params = DisorderParams::positional(s_grid[i], alpha, v0_grid[j]);
            let recs: Vec<EvolutionRecord> = (0..realizations)
                .map(|r| run_effective(length, &params, times, seed::derive(master, &[i as u64, j as u64, r as u64])))
                .collect::<Result<_>>()?;
            Ok(times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let up: Vec<f64> = recs.iter().map(|r| r.dx_upper[k]).collect();
                    let lo: Vec<f64> = recs.iter().map(|r| r.dx_lower[k]).collect();
                    let (mu, eu) = stats::mean_stderr(&up);
                    let (ml, el) = stats::mean_stderr(&lo);
                    DxRow {
                        s: s_grid[i],
                        v0_over_omega: v0_grid[j],
                        t,
                        dx_upper: mu,
                        dx_upper_stderr: eu,
                        dx_lower: ml,
                        dx_lower_stderr: el,
                        seed: seed::derive(master, &[i as u64, j as u64, 0]),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub v0_over_omega: f64,
    pub t: f64,
    pub dx_full: f64,
    pub dx_effective: f64,
    /// Mean over realizations of `|dx_full - dx_effective|` (legs averaged).
    pub mean_abs_discrepancy: f64,
    pub discrepancy_stderr: f64,
    pub mean_leakage: f64,
    pub realizations: usize,
}

/// Evolves `psi_loc` under the full spin Hamiltonian and under `H_eff` built
/// from the same atom displacements, and compares the leg-averaged widths at
/// time `t`.
pub fn compare_models(
    length: usize,
    s: f64,
    v0_over_omega: f64,
    alpha: u32,
    t: f64,
    realizations: usize,
    master: u64,
    distance_model: DistanceModel,
) -> Result<Comparison> {
    check_spin_length(length)?;
    let params = DisorderParams::positional(s, alpha, v0_over_omega);
    let loc = psi_loc(length, length / 2)?;
    let loc_spin = embed_in_spin(&loc)?;
    let rows: Vec<(f64, f64, f64)> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let real = ladder_disorder(length, &params, seed::derive(master, &[r as u64]))?;
            let eff = Propagator::new(disordered_effective_hamiltonian(&real, length)?)?;
            let st_eff = LadderState { amplitudes: eff.evolve(&loc.amplitudes, t)?, ..loc.clone() };
            let sys = SpinSystem {
                length,
                omega: 1.0,
                v0_over_omega,
                alpha,
                displacements: real.displacements.clone(),
                distance_model,
            };
            let full = Propagator::new(build_full_hamiltonian(&sys)?)?;
            let st_full = LadderState { amplitudes: full.evolve(&loc_spin.amplitudes, t)?, ..loc_spin.clone() };
            let (_, leak) = project_to_synthetic(&st_full)?;
            let oe = observables(&st_eff)?;
            let of = observables(&st_full)?;
            let dx_e = 0.5 * (oe.dx_upper + oe.dx_lower);
            let dx_f = 0.5 * (of.dx_upper + of.dx_lower);
            Ok((dx_f, dx_e, leak))
        })
        .collect::<Result<_>>()?;
    let full: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let eff: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| (r.0 - r.1).abs()).collect();
    let (mean_abs_discrepancy, discrepancy_stderr) = stats::mean_stderr(&diff);
    Ok(Comparison {
        v0_over_omega,
        t,
        dx_full: stats::mean_stderr(&full).0,
        dx_effective: stats::mean_stderr(&eff).0,
        mean_abs_discrepancy,
        discrepancy_stderr,
        mean_leakage: rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64,
        realizations,
    })
}

// ---------------------------------------------------------------------------
// Pulses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `Delta = 0`: resonant only without excited atoms nearby.
    Blockade,
    /// `Delta = -V0`: resonant only next to exactly one excitation.
    Facilitation,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b" | "blockade" => Ok(Self::Blockade),
            "f" | "facilitation" => Ok(Self::Facilitation),
            other => Err(Error::InvalidParameter(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// Projector-controlled rotation.
    #[default]
    IdealGate,
    /// Evolution of the addressed atom under drive, detuning and interactions.
    FullHamiltonian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Plaquette site `1..=4`: upper/lower atom of rungs `i` and `i+1`
    /// ordered `u_i, u_{i+1}, l_i, l_{i+1}`.
    pub site: usize,
    /// Pulse area `Omega_R tau`.
    pub theta: f64,
    pub regime: Regime,
    pub mode: PulseMode,
    /// Rabi frequency in units of `Omega` (full mode only).
    pub omega_r: f64,
}

impl PulseSpec {
    pub fn ideal(regime: Regime, site: usize, theta: f64) -> Self {
        Self { site, theta, regime, mode: PulseMode::IdealGate, omega_r: 1.0 }
    }
}

/// Atom index of plaquette site `site` on rungs `rung, rung+1` (1-based).
pub fn plaquette_atom(length: usize, rung: usize, site: usize) -> Result<usize> {
    if rung < 1 || rung >= length {
        return Err(Error::InvalidParameter(format!("plaquette rung {rung} outside 1..={}", length - 1)));
    }
    let c = rung - 1;
    match site {
        1 => Ok(c),
        2 => Ok(c + 1),
        3 => Ok(length + c),
        4 => Ok(length + c + 1),
        _ => Err(Error::InvalidParameter(format!("plaquette site {site} outside 1..=4"))),
    }
}

/// Whether the addressed atom is driven resonantly given the other atoms.
/// Nearest neighbours sit at distance 1; every other atom within `2 R0`
/// blocks the transition.
fn resonant(sys: &SpinSystem, atom: usize, cfg: u64, regime: Regime) -> bool {
    let mut nn = 0;
    let mut blocked = false;
    for other in 0..2 * sys.length {
        if other == atom || cfg >> other & 1 == 0 {
            continue;
        }
        let d = sys.ideal_distance(atom, other);
        if (d - 1.0).abs() < 1e-9 {
            nn += 1;
        } else if d <= 2.0 + 1e-9 {
            blocked = true;
        }
    }
    match regime {
        Regime::Blockade => nn == 0 && !blocked,
        Regime::Facilitation => nn == 1 && !blocked,
    }
}

/// `exp(-i t [[0, w], [w, e]])` for the two-level block (ground, excited).
fn two_level(w: f64, e: f64, t: f64) -> [[Complex64; 2]; 2] {
    let half = 0.5 * e;
    let r = (half * half + w * w).sqrt();
    let phase = Complex64::from_polar(1.0, -half * t);
    let i = Complex64::new(0.0, 1.0);
    let (cs, sn) = ((r * t).cos(), (r * t).sin());
    let sr = if r > 0.0 { sn / r } else { t };
    [
        [phase * (cs + i * half * sr), phase * (-i * w * sr)],
        [phase * (-i * w * sr), phase * (cs - i * half * sr)],
    ]
}

/// Applies one addressed pulse to a spin state of `sys`.
pub fn apply_pulse(state: &LadderState, pulse: &PulseSpec, rung: usize, sys: &SpinSystem) -> Result<LadderState> {
    if state.representation != Representation::Spin {
        return Err(Error::InvalidParameter("pulses act on spin states".into()));
    }
    sys.validate()?;
    if sys.length != state.length {
        return Err(Error::DimensionMismatch { expected: sys.length, got: state.length });
    }
    if !(0.0..=4.0 * std::f64::consts::PI + 1e-12).contains(&pulse.theta) {
        return Err(Error::InvalidParameter(format!("pulse area {} outside [0, 4 pi]", pulse.theta)));
    }
    let atom = plaquette_atom(sys.length, rung, pulse.site)?;
    let bit = 1usize << atom;
    let ideal_u = {
        let (c, s) = ((0.5 * pulse.theta).cos(), (0.5 * pulse.theta).sin());
        let m = Complex64::new(0.0, -s);
        [[Complex64::new(c, 0.0), m], [m, Complex64::new(c, 0.0)]]
    };
    let v = if pulse.mode == PulseMode::FullHamiltonian {
        if !(pulse.omega_r > 0.0) {
            return Err(Error::InvalidParameter("full-mode pulse needs omega_r > 0".into()));
        }
        Some(sys.interaction_table())
    } else {
        None
    };
    let mut out = state.amplitudes.clone();
    for cfg in 0..out.len() {
        if cfg & bit != 0 {
            continue;
        }
        let u = match &v {
            None => {
                if resonant(sys, atom, cfg as u64, pulse.regime) {
                    ideal_u
                } else {
                    continue;
                }
            }
            Some(v) => {
                let delta = match pulse.regime {
                    Regime::Blockade => 0.0,
                    Regime::Facilitation => -sys.v0_over_omega,
                };
                let shift: f64 = (0..2 * sys.length).filter(|&m| cfg >> m & 1 == 1).map(|m| v[atom][m]).sum();
                two_level(0.5 * pulse.omega_r, delta + shift, pulse.theta / pulse.omega_r)
            }
        };
        let (g, e) = (state.amplitudes[cfg], state.amplitudes[cfg | bit]);
        out[cfg] = u[0][0] * g + u[0][1] * e;
        out[cfg | bit] = u[1][0] * g + u[1][1] * e;
    }
    Ok(LadderState { amplitudes: out, ..state.clone() })
}

/// The six-pulse sequence preparing `psi_loc` on rungs `rung, rung+1`,
/// in application order.
pub fn preparation_sequence(mode: PulseMode, omega_r: f64) -> Vec<PulseSpec> {
    use std::f64::consts::PI;
    use Regime::{Blockade as Bl, Facilitation as Fa};
    [(Bl, 1, PI / 2.0), (Bl, 4, PI), (Fa, 2, PI / 2.0), (Fa, 3, PI), (Fa, 4, 2.0 * PI), (Fa, 2, 2.0 * PI)]
        .into_iter()
        .map(|(regime, site, theta)| PulseSpec { site, theta, regime, mode, omega_r })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preparation {
    /// State after each pulse.
    pub steps: Vec<LadderState>,
    pub fidelity: f64,
}

/// Runs [`preparation_sequence`] from the all-down state and reports the
/// overlap with `psi_loc`.
pub fn prepare(sys: &SpinSystem, rung: usize, mode: PulseMode, omega_r: f64) -> Result<Preparation> {
    let mut st = LadderState::all_down(sys.length)?;
    let mut steps = Vec::new();
    for p in preparation_sequence(mode, omega_r) {
        st = apply_pulse(&st, &p, rung, sys)?;
        steps.push(st.clone());
    }
    let target = embed_in_spin(&psi_loc(sys.length, rung)?)?;
    let fidelity = target.fidelity(&st)?;
    Ok(Preparation { steps, fidelity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn psi_loc_is_flat_band_state() {
        let l = 8;
        let psi = psi_loc(l, 3).unwrap();
        assert_abs_diff_eq!(psi.norm(), 1.0, epsilon = 1e-15);
        let h = effective_hamiltonian(l, None, None).unwrap();
        let re = psi.amplitudes.map(|z| z.re);
        assert!((&h * re).amax() < 1e-12);
        assert!(psi_loc(l, 0).is_err() && psi_loc(l, l).is_err());
    }

    #[test]
    fn psi_loc_profile() {
        let o = observables(&psi_loc(20, 10).unwrap()).unwrap();
        assert_abs_diff_eq!(o.p_upper[9], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(o.p_upper[10], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(o.mean_upper, 10.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.mean_lower, 10.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.dx_upper, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.dx_lower, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_rung_and_uniform_profiles() {
        let l = 6;
        let mut v = DVector::zeros(5 * l);
        v[E * l + 2] = c(1.0, 0.0);
        let o = observables(&LadderState::new(Representation::Synthetic, l, v).unwrap()).unwrap();
        assert_eq!(o.p_upper[2], 1.0);
        assert_eq!(o.p_lower[2], 1.0);
        assert_eq!(o.dx_upper, 0.0);
        let (_, _, dx) = profile_moments(&vec![1.0; 9]).unwrap();
        assert_abs_diff_eq!(dx, ((81.0 - 1.0) / 12.0f64).sqrt(), epsilon = 1e-12);
        assert!(profile_moments(&[0.0; 3]).is_err());
    }

    #[test]
    fn boundary_slots_rejected() {
        let l = 3;
        let mut v = DVector::zeros(5 * l);
        v[A * l + l - 1] = c(1.0, 0.0);
        assert!(LadderState::new(Representation::Synthetic, l, v).is_err());
    }

    #[test]
    fn evolution_basics() {
        let l = 10;
        let h = effective_hamiltonian(l, None, None).unwrap();
        let psi = psi_loc(l, 5).unwrap();
        let prop = Propagator::new(h).unwrap();
        assert_eq!(prop.evolve(&psi.amplitudes, 0.0).unwrap(), psi.amplitudes);
        for t in [0.3, 7.0, 123.0] {
            let out = prop.evolve(&psi.amplitudes, t).unwrap();
            assert!((psi.amplitudes.dotc(&out).norm() - 1.0).abs() < 1e-10);
        }
        let mut bad = DMatrix::<f64>::zeros(3, 3);
        bad[(0, 1)] = 1.0;
        assert!(matches!(Propagator::new(bad), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn disordered_evolution_conserves_norm_and_energy() {
        let l = 12;
        let real = ladder_disorder(l, &DisorderParams::positional(2e-3, 3, 200.0), 4).unwrap();
        let prop = Propagator::new(disordered_effective_hamiltonian(&real, l).unwrap()).unwrap();
        let psi = psi_loc(l, 6).unwrap();
        let e0 = prop.energy(&psi.amplitudes);
        for amps in prop.evolve_many(&psi.amplitudes, &[1.0, 10.0, 100.0]).unwrap() {
            assert!((amps.norm() - 1.0).abs() < 1e-10);
            assert!((prop.energy(&amps) - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_hamiltonian_diagonal() {
        let mut sys = SpinSystem::ideal(2, 50.0, 3);
        sys.omega = 0.0;
        let h = build_full_hamiltonian(&sys).unwrap();
        assert_eq!(h.nrows(), 16);
        assert!((h.clone() - DMatrix::from_diagonal(&h.diagonal())).amax() == 0.0);
        assert_eq!(h[(0, 0)], 0.0);
        // Upper leg bond: atoms 0 and 1.
        assert_abs_diff_eq!(h[(0b0011, 0b0011)], -50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(0b0001, 0b0001)], -50.0, epsilon = 1e-12);
        // Diagonal pair at sqrt(2): 2 Delta + V0 / 2^(3/2).
        assert_abs_diff_eq!(h[(0b1001, 0b1001)], -100.0 + 50.0 / 8f64.sqrt(), epsilon = 1e-12);
        assert!(build_full_hamiltonian(&SpinSystem::ideal(8, 1.0, 3)).is_err());
    }

    #[test]
    fn embed_and_project_roundtrip() {
        let psi = psi_loc(4, 2).unwrap();
        let spin = embed_in_spin(&psi).unwrap();
        let (back, leak) = project_to_synthetic(&spin).unwrap();
        assert_eq!(back, psi.amplitudes);
        assert_eq!(leak, 0.0);
        let (up, lo) = occupations(&spin);
        assert_eq!((up, lo), occupations(&psi));
    }

    #[test]
    fn blockade_pulse_on_ground_state() {
        let sys = SpinSystem::ideal(2, 200.0, 3);
        let st = apply_pulse(&LadderState::all_down(2).unwrap(), &PulseSpec::ideal(Regime::Blockade, 1, std::f64::consts::PI), 1, &sys)
            .unwrap();
        assert_abs_diff_eq!(st.amplitudes[1].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(st.amplitudes[1].im, -1.0, epsilon = 1e-15);
        let same = apply_pulse(&st, &PulseSpec::ideal(Regime::Facilitation, 2, 0.0), 1, &sys).unwrap();
        assert_eq!(same, st);
    }

    #[test]
    fn ideal_preparation_reaches_target() {
        let sys = SpinSystem::ideal(4, 200.0, 3);
        let prep = prepare(&sys, 2, PulseMode::IdealGate, 1.0).unwrap();
        assert!((prep.fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_is_unitary_and_resonant_limit() {
        let u = two_level(0.5, 0.0, std::f64::consts::PI);
        // Resonant pi pulse: -i sigma_x.
        assert_abs_diff_eq!(u[0][1].im, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u[0][0].norm(), 0.0, epsilon = 1e-14);
        let u = two_level(0.3, 2.0, 1.7);
        let n0 = u[0][0].norm_sqr() + u[1][0].norm_sqr();
        let x = u[0][0].conj() * u[0][1] + u[1][0].conj() * u[1][1];
        assert_abs_diff_eq!(n0, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn full_mode_preparation_improves_with_slow_pulses() {
        let sys = SpinSystem::ideal(2, 200.0, 6);
        let fast = prepare(&sys, 1, PulseMode::FullHamiltonian, 20.0).unwrap().fidelity;
        let slow = prepare(&sys, 1, PulseMode::FullHamiltonian, 0.5).unwrap().fidelity;
        assert!(slow > 0.9, "{slow}");
        assert!(slow > fast);
    }
}
