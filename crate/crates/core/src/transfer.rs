//! Transfer-matrix localization lengths of the disordered ladder.
//!
//! Pair amplitudes are eliminated from the eigenvalue equations, leaving a
//! second-order recursion on the atom amplitudes `(c_n, d_n)` of the upper
//! and lower leg. With `g_X = 1 / (eps - delta_X)`:
//!
//! ```text
//! (eps - dC_n) c_n = gA_{n-1} (c_{n-1} + c_n) + gA_n (c_n + c_{n+1}) + gE_n (c_n + d_n)
//! (eps - dD_n) d_n = gB_{n-1} (d_{n-1} + d_n) + gB_n (d_n + d_{n+1}) + gE_n (c_n + d_n)
//! ```
//!
//! which is solved for `(c_{n+1}, d_{n+1})` and written as the 4x4 map
//! `(c_{n+1}, d_{n+1}, c_n, d_n) = T_n (c_n, d_n, c_{n-1}, d_{n-1})`.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{self, DisorderMode, DisorderParams};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

pub const DENOMINATOR_FLOOR: f64 = 1e-12;
pub const DEFAULT_QR_PERIOD: usize = 8;
pub const DEFAULT_STEPS: usize = 1_000_000;
/// QR periods per block of the block-average error estimate.
pub const BLOCK_QR: usize = 100;
pub const RESAMPLE_BUDGET: usize = 10_000;

/// On-site shifts entering one transfer step (units of `Omega`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RungShifts {
    pub a_prev: f64,
    pub b_prev: f64,
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub c: f64,
    pub d: f64,
}

fn green(eps: f64, delta: f64, site: char) -> Result<f64> {
    let gap = eps - delta;
    if gap.abs() <= DENOMINATOR_FLOOR {
        return Err(Error::Resonance { site, gap: gap.abs() });
    }
    Ok(1.0 / gap)
}

/// Transfer matrix of one rung at energy `eps`.
pub fn rung_transfer_matrix(eps: f64, r: &RungShifts) -> Result<Matrix4<f64>> {
    let ga0 = green(eps, r.a_prev, 'A')?;
    let gb0 = green(eps, r.b_prev, 'B')?;
    let ga = green(eps, r.a, 'A')?;
    let gb = green(eps, r.b, 'B')?;
    let ge = green(eps, r.e, 'E')?;
    let (ia, ib) = (eps - r.a, eps - r.b);
    let cc = (eps - r.c - ga0 - ga - ge) * ia;
    let dd = (eps - r.d - gb0 - gb - ge) * ib;
    #[rustfmt::skip]
    let t = Matrix4::new(
        cc,       -ge * ia, -ga0 * ia, 0.0,
        -ge * ib, dd,       0.0,       -gb0 * ib,
        1.0,      0.0,      0.0,       0.0,
        0.0,      1.0,      0.0,       0.0,
    );
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub energy: f64,
    pub params: DisorderParams,
    pub n_steps: usize,
    pub qr_period: usize,
    pub seed: u64,
}

impl TransferConfig {
    pub fn new(energy: f64, params: DisorderParams, seed: u64) -> Self {
        Self { energy, params, n_steps: DEFAULT_STEPS, qr_period: DEFAULT_QR_PERIOD, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.qr_period < 1 {
            return Err(Error::InvalidParameter("qr_period must be >= 1".into()));
        }
        if self.n_steps < 10 * self.qr_period {
            return Err(Error::InvalidParameter(format!(
                "n_steps = {} must be >= 10 * qr_period = {}",
                self.n_steps,
                10 * self.qr_period
            )));
        }
        if !self.energy.is_finite() {
            return Err(Error::InvalidParameter("energy must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovResult {
    /// Exponents per unit cell, descending.
    pub exponents: [f64; 4],
    pub stderr: [f64; 4],
    /// Localization lengths in unit cells, `xi1 <= xi2`.
    pub xi1: f64,
    pub xi2: f64,
    pub xi1_stderr: f64,
    pub xi2_stderr: f64,
    /// Rung slices redrawn because of a resonant denominator.
    pub resamples: usize,
}

impl LyapunovResult {
    /// Largest deviation from the `gamma <-> -gamma` pairing in units of the
    /// combined standard error.
    pub fn pairing_defect(&self) -> f64 {
        let d1 = (self.exponents[0] + self.exponents[3]).abs() / self.stderr[0].hypot(self.stderr[3]);
        let d2 = (self.exponents[1] + self.exponents[2]).abs() / self.stderr[1].hypot(self.stderr[2]);
        d1.max(d2)
    }

    /// Symmetrized positive exponents `(g1, g2)` with `g1 >= g2`.
    pub fn positive_exponents(&self) -> (f64, f64) {
        (
            0.5 * (self.exponents[0] - self.exponents[3]),
            0.5 * (self.exponents[1] - self.exponents[2]),
        )
    }
}

/// Produces the rung shifts of consecutive cells.
trait RungSource {
    /// Shifts for the next cell. On resonance the source redraws its newest
    /// slice and the counter is bumped.
    fn next(&mut self, eps: f64, resamples: &mut usize) -> Result<Matrix4<f64>>;
}

/// Streaming positional disorder on an infinite ladder. Holds displacements of
/// the current cell and the precomputed rung shift of the next one.
struct PositionalSource {
    rng: ChaCha8Rng,
    params: DisorderParams,
    upper: [f64; 3],
    lower: [f64; 3],
    a_prev: f64,
    b_prev: f64,
    e: f64,
}

fn dist(base: [f64; 3], from: [f64; 3], to: [f64; 3]) -> f64 {
    let v = [base[0] + to[0] - from[0], base[1] + to[1] - from[1], base[2] + to[2] - from[2]];
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

const LEG: [f64; 3] = [1.0, 0.0, 0.0];
const RUNG: [f64; 3] = [0.0, -1.0, 0.0];

impl PositionalSource {
    fn new(params: DisorderParams, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let s = params.s;
        let prev = disorder::sample_positions(2, s, &mut rng);
        let cur = disorder::sample_positions(2, s, &mut rng);
        let mut src = Self { rng, params, upper: cur[0], lower: cur[1], a_prev: 0.0, b_prev: 0.0, e: 0.0 };
        src.a_prev = params.shift(dist(LEG, prev[0], cur[0]));
        src.b_prev = params.shift(dist(LEG, prev[1], cur[1]));
        src.e = params.shift(dist(RUNG, cur[0], cur[1]));
        src
    }
}

impl RungSource for PositionalSource {
    fn next(&mut self, eps: f64, resamples: &mut usize) -> Result<Matrix4<f64>> {
        loop {
            let nxt = disorder::sample_positions(2, self.params.s, &mut self.rng);
            let a = self.params.shift(dist(LEG, self.upper, nxt[0]));
            let b = self.params.shift(dist(LEG, self.lower, nxt[1]));
            let e_next = self.params.shift(dist(RUNG, nxt[0], nxt[1]));
            let r = RungShifts { a_prev: self.a_prev, b_prev: self.b_prev, a, b, e: self.e, c: 0.0, d: 0.0 };
            let resonant_next = (eps - e_next).abs() <= DENOMINATOR_FLOOR;
            match rung_transfer_matrix(eps, &r) {
                Ok(t) if !resonant_next => {
                    self.upper = nxt[0];
                    self.lower = nxt[1];
                    self.a_prev = a;
                    self.b_prev = b;
                    self.e = e_next;
                    return Ok(t);
                }
                Ok(_) | Err(Error::Resonance { .. }) => {
                    *resamples += 1;
                    if *resamples > RESAMPLE_BUDGET {
                        return Err(Error::ResampleBudget { what: "resonant rung".into(), budget: RESAMPLE_BUDGET });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Uniform shifts on `[-W/2, W/2]`, independent per site.
struct FlatSource {
    rng: ChaCha8Rng,
    w: f64,
    all_sites: bool,
    a_prev: f64,
    b_prev: f64,
}

impl FlatSource {
    fn draw(&mut self) -> f64 {
        self.w * (self.rng.random::<f64>() - 0.5)
    }
}

impl RungSource for FlatSource {
    fn next(&mut self, eps: f64, resamples: &mut usize) -> Result<Matrix4<f64>> {
        loop {
            let (a, b, e) = (self.draw(), self.draw(), self.draw());
            let (c, d) = if self.all_sites { (self.draw(), self.draw()) } else { (0.0, 0.0) };
            let r = RungShifts { a_prev: self.a_prev, b_prev: self.b_prev, a, b, e, c, d };
            match rung_transfer_matrix(eps, &r) {
                Ok(t) => {
                    self.a_prev = a;
                    self.b_prev = b;
                    return Ok(t);
                }
                Err(Error::Resonance { .. }) => {
                    *resamples += 1;
                    if *resamples > RESAMPLE_BUDGET {
                        return Err(Error::ResampleBudget { what: "resonant rung".into(), budget: RESAMPLE_BUDGET });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn source(cfg: &TransferConfig) -> Box<dyn RungSource> {
    let p = cfg.params;
    match p.mode {
        DisorderMode::Positional => Box::new(PositionalSource::new(p, cfg.seed)),
        mode => {
            let mut src = FlatSource {
                rng: seed::rng(cfg.seed),
                w: p.w,
                all_sites: mode == DisorderMode::FlatAllSites,
                a_prev: 0.0,
                b_prev: 0.0,
            };
            src.a_prev = src.draw();
            src.b_prev = src.draw();
            Box::new(src)
        }
    }
}

/// Lyapunov spectrum of the random transfer product over `cfg.n_steps` cells.
pub fn lyapunov_spectrum(cfg: &TransferConfig) -> Result<LyapunovResult> {
    cfg.validate()?;
    let mut src = source(cfg);
    let eps = cfg.energy;
    let mut q = Matrix4::<f64>::identity();
    let mut resamples = 0;
    let mut totals = Vector4::<f64>::zeros();
    let mut block = Vector4::<f64>::zeros();
    let mut block_steps = 0usize;
    let mut blocks: Vec<Vector4<f64>> = Vec::new();
    let block_len = BLOCK_QR * cfg.qr_period;
    let mut done = 0usize;
    while done < cfg.n_steps {
        let chunk = cfg.qr_period.min(cfg.n_steps - done);
        for _ in 0..chunk {
            q = src.next(eps, &mut resamples)? * q;
        }
        done += chunk;
        let qr = q.qr();
        let r = qr.r();
        let mut logs = Vector4::zeros();
        for i in 0..4 {
            logs[i] = r[(i, i)].abs().ln();
        }
        q = qr.q();
        totals += logs;
        block += logs;
        block_steps += chunk;
        if block_steps == block_len {
            blocks.push(block / block_steps as f64);
            block = Vector4::zeros();
            block_steps = 0;
        }
    }
    let mut exps: Vec<(f64, f64)> = (0..4)
        .map(|i| {
            let per_block: Vec<f64> = blocks.iter().map(|b| b[i]).collect();
            let err = if per_block.len() >= 2 { stats::mean_stderr(&per_block).1 } else { f64::NAN };
            (totals[i] / cfg.n_steps as f64, err)
        })
        .collect();
    exps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let exponents = [exps[0].0, exps[1].0, exps[2].0, exps[3].0];
    let stderr = [exps[0].1, exps[1].1, exps[2].1, exps[3].1];
    let g1 = 0.5 * (exponents[0] - exponents[3]);
    let g2 = 0.5 * (exponents[1] - exponents[2]);
    let e1 = 0.5 * stderr[0].hypot(stderr[3]);
    let e2 = 0.5 * stderr[1].hypot(stderr[2]);
    Ok(LyapunovResult {
        exponents,
        stderr,
        xi1: 1.0 / g1,
        xi2: 1.0 / g2,
        xi1_stderr: e1 / (g1 * g1),
        xi2_stderr: e2 / (g2 * g2),
        resamples,
    })
}

/// Fitted exponent `nu` with `xi ~ x^-nu` for both lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub energy: f64,
    /// Disorder strengths (`s` or `W`).
    pub grid: Vec<f64>,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub nu: [f64; 2],
    pub nu_stderr: [f64; 2],
    /// Number of points used in each fit.
    pub window: [usize; 2],
    /// Grid indices entering each fit.
    pub used: [Vec<usize>; 2],
    pub rms_residual: [f64; 2],
}

/// Index one past the last point kept by the curvature cut.
///
/// The leading slope is taken from the first three points; points are added
/// while each new segment slope stays within 25% of it (or 0.1 in absolute
/// terms for nearly flat series).
pub fn curvature_window(x: &[f64], y: &[f64]) -> usize {
    let n = x.len();
    if n <= 3 {
        return n;
    }
    let lead = stats::line_fit(&x[..3], &y[..3]).slope;
    let tol = (0.25 * lead.abs()).max(0.1);
    let mut end = 3;
    while end < n {
        let seg = (y[end] - y[end - 1]) / (x[end] - x[end - 1]);
        if (seg - lead).abs() > tol {
            break;
        }
        end += 1;
    }
    end
}

/// Relative standard error above which a localization length counts as
/// unresolved (typically `xi` comparable to the number of steps).
pub const MAX_RELATIVE_ERROR: f64 = 0.25;

/// Fits `nu` for both lengths. `grid` must be ascending. Points with a
/// relative error above [`MAX_RELATIVE_ERROR`] are masked when `stderr` is
/// given. `window` overrides the automatic curvature cut with a fixed number
/// of leading (unmasked) points.
pub fn fit_scaling(
    energy: f64,
    grid: &[f64],
    xi: [&[f64]; 2],
    stderr: Option<[&[f64]; 2]>,
    window: Option<usize>,
) -> Result<ScalingFit> {
    let n = grid.len();
    for v in xi.iter().chain(stderr.iter().flatten()) {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let mut nu = [0.0; 2];
    let mut nu_stderr = [0.0; 2];
    let mut win = [0; 2];
    let mut rms = [0.0; 2];
    let mut used = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let keep: Vec<usize> = (0..n)
            .filter(|&i| xi[k][i].is_finite() && xi[k][i] > 0.0)
            .filter(|&i| stderr.is_none_or(|e| e[k][i] <= MAX_RELATIVE_ERROR * xi[k][i]))
            .collect();
        let lx: Vec<f64> = keep.iter().map(|&i| grid[i].ln()).collect();
        let ly: Vec<f64> = keep.iter().map(|&i| xi[k][i].ln()).collect();
        let end = window.unwrap_or_else(|| curvature_window(&lx, &ly)).min(keep.len());
        if end < 4 {
            return Err(Error::TooFewPoints { need: 4, got: end });
        }
        let fit = stats::line_fit(&lx[..end], &ly[..end]);
        nu[k] = if fit.slope == 0.0 { 0.0 } else { -fit.slope };
        nu_stderr[k] = fit.slope_stderr;
        win[k] = end;
        rms[k] = fit.rms_residual;
        used[k] = keep[..end].to_vec();
    }
    let [used1, used2] = used;
    Ok(ScalingFit {
        energy,
        grid: grid.to_vec(),
        xi1: xi[0].to_vec(),
        xi2: xi[1].to_vec(),
        nu,
        nu_stderr,
        window: win,
        used: [used1, used2],
        rms_residual: rms,
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Seed of realization `r` at grid index `i` of a sweep at `energy`.
pub fn cell_seed(base: u64, energy: f64, i: usize, r: usize) -> u64 {
    seed::derive(base, &[energy.to_bits(), i as u64, r as u64])
}

/// Runs the transfer matrix over `grid` (values of `s` for positional mode,
/// `W` otherwise) and averages exponents over `realizations` seeds per grid
/// point. Seeds follow [`cell_seed`] with `base.seed`.
pub fn xi_sweep(
    energy: f64,
    grid: &[f64],
    base: &TransferConfig,
    realizations: usize,
) -> Result<Vec<LyapunovResult>> {
    if realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|i| (0..realizations).map(move |r| (i, r))).collect();
    let runs: Vec<LyapunovResult> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut cfg = *base;
            cfg.energy = energy;
            match cfg.params.mode {
                DisorderMode::Positional => cfg.params.s = grid[i],
                _ => cfg.params.w = grid[i],
            }
            cfg.seed = cell_seed(base.seed, energy, i, r);
            lyapunov_spectrum(&cfg)
        })
        .collect::<Result<_>>()?;
    Ok(runs.chunks(realizations).map(average_results).collect())
}

/// Fits `nu` to the lengths of an [`xi_sweep`].
pub fn fit_sweep(energy: f64, grid: &[f64], runs: &[LyapunovResult], window: Option<usize>) -> Result<ScalingFit> {
    let xi1: Vec<f64> = runs.iter().map(|r| r.xi1).collect();
    let xi2: Vec<f64> = runs.iter().map(|r| r.xi2).collect();
    let e1: Vec<f64> = runs.iter().map(|r| r.xi1_stderr).collect();
    let e2: Vec<f64> = runs.iter().map(|r| r.xi2_stderr).collect();
    fit_scaling(energy, grid, [&xi1, &xi2], Some([&e1, &e2]), window)
}

/// [`xi_sweep`] followed by [`fit_sweep`].
pub fn scaling_exponent(
    energy: f64,
    grid: &[f64],
    base: &TransferConfig,
    realizations: usize,
    window: Option<usize>,
) -> Result<(ScalingFit, Vec<LyapunovResult>)> {
    if grid.len() < 4 {
        return Err(Error::TooFewPoints { need: 4, got: grid.len() });
    }
    let averaged = xi_sweep(energy, grid, base, realizations)?;
    Ok((fit_sweep(energy, grid, &averaged, window)?, averaged))
}

/// Combines independent runs by averaging exponents.
pub fn average_results(runs: &[LyapunovResult]) -> LyapunovResult {
    if runs.len() == 1 {
        return runs[0];
    }
    let n = runs.len() as f64;
    let mut exponents = [0.0; 4];
    let mut stderr = [0.0; 4];
    for i in 0..4 {
        exponents[i] = runs.iter().map(|r| r.exponents[i]).sum::<f64>() / n;
        stderr[i] = runs.iter().map(|r| r.stderr[i].powi(2)).sum::<f64>().sqrt() / n;
    }
    let g1 = 0.5 * (exponents[0] - exponents[3]);
    let g2 = 0.5 * (exponents[1] - exponents[2]);
    let e1 = 0.5 * stderr[0].hypot(stderr[3]);
    let e2 = 0.5 * stderr[1].hypot(stderr[2]);
    LyapunovResult {
        exponents,
        stderr,
        xi1: 1.0 / g1,
        xi2: 1.0 / g2,
        xi1_stderr: e1 / (g1 * g1),
        xi2_stderr: e2 / (g2 * g2),
        resamples: runs.iter().map(|r| r.resamples).sum(),
    }
}

/// [`scaling_exponent`] at every energy with flat disorder of the given mode.
pub fn flat_disorder_sweep(
    energies: &[f64],
    w_grid: &[f64],
    mode: DisorderMode,
    base: &TransferConfig,
    realizations: usize,
) -> Result<Vec<ScalingFit>> {
    if mode == DisorderMode::Positional {
        return Err(Error::InvalidParameter("flat_disorder_sweep needs a flat mode".into()));
    }
    let mut cfg = *base;
    cfg.params.mode = mode;
    energies
        .iter()
        .map(|&e| scaling_exponent(e, w_grid, &cfg, realizations, None).map(|(fit, _)| fit))
        .collect()
}
