//! Bloch matrices, band structures and flat-band counting for synthetic
//! lattices, plus the detangling basis change of the Lieb ladder.
//!
//! In the basis (one-excitation sites | pair sites) every Bloch matrix has the
//! block form `[[0, C], [C^dag, 0]]` with `C` of size `n1 x n2`, so its kernel
//! has dimension at least `|n1 - n2|` at every quasimomentum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, RealLattice, SyntheticLattice, Vec2};

/// Default flatness tolerance (units of Omega).
pub const DEFAULT_FLAT_TOL: f64 = 1e-8;
/// Default number of k-points per reciprocal direction.
pub const DEFAULT_KPOINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct BlochMatrix {
    pub k: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    /// Off-diagonal block, rows = one-excitation sites, columns = pair sites.
    pub c_block: DMatrix<Complex64>,
}

impl BlochMatrix {
    pub fn size(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn full(&self) -> DMatrix<Complex64> {
        let n = self.size();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        m.view_mut((0, self.n1), (self.n1, self.n2)).copy_from(&self.c_block);
        m.view_mut((self.n1, 0), (self.n2, self.n1))
            .copy_from(&self.c_block.adjoint());
        m
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.full().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Number of eigenvalues with modulus below `tol`.
    pub fn kernel_dimension(&self, tol: f64) -> usize {
        self.eigenvalues().iter().filter(|e| e.abs() < tol).count()
    }
}

/// Fills `C[m, n]` with `sum exp(i k . j)` over the hops from pair site `n`
/// to one-excitation site `m`, `j` being the Bravais vector of the arrival cell.
pub fn bloch_matrix(syn: &SyntheticLattice, k: &[f64]) -> Result<BlochMatrix> {
    if k.len() != syn.dim {
        return Err(Error::DimensionMismatch {
            expected: syn.dim,
            got: k.len(),
        });
    }
    let mut c = DMatrix::<Complex64>::zeros(syn.n1(), syn.n2());
    for hop in &syn.hop_links {
        let j = lattice_vector(&syn.primitive_vectors, &hop.cell_offset);
        let phase = k.iter().zip(j).map(|(ki, ji)| ki * ji).sum::<f64>();
        c[(hop.one_exc, hop.pair)] += Complex64::from_polar(syn.hop_amplitude, phase);
    }
    Ok(BlochMatrix {
        k: k.to_vec(),
        n1: syn.n1(),
        n2: syn.n2(),
        c_block: c,
    })
}

fn lattice_vector(pv: &[Vec2], offset: &[i32]) -> Vec2 {
    let mut v = [0.0; 2];
    for (n, a) in offset.iter().zip(pv) {
        v[0] += *n as f64 * a[0];
        v[1] += *n as f64 * a[1];
    }
    v
}

/// Reciprocal vectors `b_i` with `b_i . a_j = 2 pi delta_ij` (components
/// beyond `dim` are zero).
pub fn reciprocal_vectors(primitive_vectors: &[Vec2]) -> Vec<Vec2> {
    match primitive_vectors {
        [a] => {
            let n2 = a[0] * a[0] + a[1] * a[1];
            vec![[2.0 * PI * a[0] / n2, 2.0 * PI * a[1] / n2]]
        }
        [a1, a2] => {
            let det = a1[0] * a2[1] - a1[1] * a2[0];
            let f = 2.0 * PI / det;
            vec![[f * a2[1], -f * a2[0]], [-f * a1[1], f * a1[0]]]
        }
        _ => panic!("only 1D and 2D lattices are supported"),
    }
}

/// Uniform grid over the parallelepiped spanned by the reciprocal vectors,
/// `n` points per direction, fractional coordinates `i / n`.
pub fn parallelepiped_grid(syn: &SyntheticLattice, n: usize) -> Vec<Vec<f64>> {
    let b = reciprocal_vectors(&syn.primitive_vectors);
    let frac = |i: usize| i as f64 / n as f64;
    match syn.dim {
        1 => (0..n).map(|i| vec![frac(i) * b[0][0]]).collect(),
        _ => (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .map(|(i, j)| {
                let (f1, f2) = (frac(i), frac(j));
                vec![f1 * b[0][0] + f2 * b[1][0], f1 * b[0][1] + f2 * b[1][1]]
            })
            .collect(),
    }
}

/// Cut along `k_y = 0` spanning `|k_x| <= eta * pi / |a_1|`, `n` points.
pub fn axis_cut(syn: &SyntheticLattice, n: usize) -> Vec<Vec<f64>> {
    let a1 = syn.primitive_vectors[0];
    let eta = syn.kind.momentum_scale().unwrap_or(1.0);
    let kmax = eta * PI / a1[0].hypot(a1[1]);
    let step = if n > 1 { 2.0 * kmax / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let kx = -kmax + i as f64 * step;
            if syn.dim == 1 {
                vec![kx]
            } else {
                vec![kx, 0.0]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub kind: LatticeKind,
    pub n1: usize,
    pub n2: usize,
    pub k_grid: Vec<Vec<f64>>,
    /// `bands[ik]` holds the ascending eigenvalues at `k_grid[ik]`.
    pub bands: Vec<Vec<f64>>,
    pub flat_flags: Vec<bool>,
    pub flat_tol: f64,
}

impl BandStructure {
    pub fn n_bands(&self) -> usize {
        self.n1 + self.n2
    }

    /// Values of band `b` across the grid.
    pub fn band(&self, b: usize) -> impl Iterator<Item = f64> + '_ {
        self.bands.iter().map(move |ev| ev[b])
    }

    /// (min, max) of band `b`.
    pub fn band_range(&self, b: usize) -> (f64, f64) {
        self.band(b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)))
    }

    /// Largest violation of the `e -> -e` symmetry over the grid.
    pub fn parity_defect(&self) -> f64 {
        self.bands
            .iter()
            .flat_map(|ev| ev.iter().zip(ev.iter().rev()).map(|(a, b)| (a + b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn flat_band_bound(&self) -> usize {
        self.n1.abs_diff(self.n2)
    }
}

/// Diagonalizes the Bloch matrix at every grid point (in parallel).
pub fn band_structure(syn: &SyntheticLattice, k_grid: &[Vec<f64>]) -> Result<BandStructure> {
    band_structure_with_tol(syn, k_grid, DEFAULT_FLAT_TOL)
}

pub fn band_structure_with_tol(
    syn: &SyntheticLattice,
    k_grid: &[Vec<f64>],
    flat_tol: f64,
) -> Result<BandStructure> {
    if k_grid.is_empty() {
        return Err(Error::InvalidParameter("empty k grid".into()));
    }
    let bands = k_grid
        .par_iter()
        .map(|k| bloch_matrix(syn, k).map(|m| m.eigenvalues()))
        .collect::<Result<Vec<_>>>()?;
    let mut bs = BandStructure {
        kind: syn.kind,
        n1: syn.n1(),
        n2: syn.n2(),
        k_grid: k_grid.to_vec(),
        bands,
        flat_flags: Vec::new(),
        flat_tol,
    };
    bs.flat_flags = (0..bs.n_bands())
        .map(|b| {
            let (lo, hi) = bs.band_range(b);
            hi - lo < flat_tol
        })
        .collect();
    Ok(bs)
}

/// Number of bands whose spread over the grid is below `flat_tol`.
pub fn count_flat_bands(bs: &BandStructure, flat_tol: f64) -> usize {
    (0..bs.n_bands())
        .filter(|&b| {
            let (lo, hi) = bs.band_range(b);
            hi - lo < flat_tol
        })
        .count()
}

/// Closed-form spectra of the synthetic triangular and honeycomb lattices,
/// ascending.
pub fn analytic_bands(kind: LatticeKind, k: &[f64]) -> Result<Vec<f64>> {
    if !matches!(kind, LatticeKind::Triangular | LatticeKind::Honeycomb) {
        return Err(Error::UnsupportedKind(kind.to_string()));
    }
    if k.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: k.len(),
        });
    }
    let real = RealLattice::build(kind)?;
    let [a1, a2] = [real.primitive_vectors[0], real.primitive_vectors[1]];
    let dot = |v: Vec2| k[0] * v[0] + k[1] * v[1];
    let (ka1, ka2) = (dot(a1), dot(a2));
    let mut ev = match kind {
        LatticeKind::Triangular => {
            let w = 2f64.sqrt() * (3.0 + ka1.cos() + ka2.cos() + (ka1 - ka2).cos()).sqrt();
            vec![-w, 0.0, 0.0, w]
        }
        _ => {
            let g = Complex64::new(1.0, 0.0)
                + Complex64::from_polar(1.0, ka1 - ka2)
                + Complex64::from_polar(1.0, -ka2);
            let lp = 3.0 + g.norm();
            let lm = (3.0 - g.norm()).max(0.0);
            vec![-lp.sqrt(), -lm.sqrt(), 0.0, lm.sqrt(), lp.sqrt()]
        }
    };
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// The two inequivalent corners `+-(b2 - b1) / 3` of the hexagonal zone.
pub fn hexagonal_zone_vertices(kind: LatticeKind) -> Result<[Vec2; 2]> {
    if !matches!(kind, LatticeKind::Triangular | LatticeKind::Honeycomb) {
        return Err(Error::UnsupportedKind(kind.to_string()));
    }
    let b = reciprocal_vectors(&RealLattice::build(kind)?.primitive_vectors);
    let v = [(b[1][0] - b[0][0]) / 3.0, (b[1][1] - b[0][1]) / 3.0];
    Ok([v, [-v[0], -v[1]]])
}

/// Slack of the three half-plane conditions bounding the hexagonal first zone
/// (`|k.g| <= |g|^2 / 2` for `g` in `{b1, b2, b1 - b2}`). All slacks are
/// non-negative inside the zone; a zero slack marks a boundary.
pub fn hexagonal_zone_slack(kind: LatticeKind, k: Vec2) -> Result<[f64; 3]> {
    let b = reciprocal_vectors(&RealLattice::build(kind)?.primitive_vectors);
    let g3 = [b[0][0] - b[1][0], b[0][1] - b[1][1]];
    let slack = |g: Vec2| 0.5 * (g[0] * g[0] + g[1] * g[1]) - (k[0] * g[0] + k[1] * g[1]).abs();
    Ok([slack(b[0]), slack(b[1]), slack(g3)])
}

/// 2x2 rotation taking `(A, B)` to `(X+, X-)`; it is its own inverse.
pub fn pair_rotation() -> Matrix2<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Matrix2::new(r, r, r, -r)
}

/// Result of the detangling basis change.
#[derive(Debug, Clone)]
pub struct Detangled {
    /// Columns are the new basis vectors in the canonical ladder basis, ordered
    /// `X-_1..X-_L, Y-_1..Y-_L | X+_1..X+_L, Y+_1..Y+_L, E_1..E_L`.
    pub transform: DMatrix<f64>,
    pub transformed: DMatrix<f64>,
    pub length: usize,
}

impl Detangled {
    /// The `2L x 2L` chain block (X-, Y- sites).
    pub fn chain_block(&self) -> DMatrix<f64> {
        let l = self.length;
        self.transformed.view((0, 0), (2 * l, 2 * l)).into_owned()
    }

    /// The `3L x 3L` stub block (X+, Y+, E sites).
    pub fn stub_block(&self) -> DMatrix<f64> {
        let l = self.length;
        self.transformed.view((2 * l, 2 * l), (3 * l, 3 * l)).into_owned()
    }

    /// Frobenius norm of the coupling between the two blocks.
    pub fn cross_block_norm(&self) -> f64 {
        let l = self.length;
        self.transformed.view((0, 2 * l), (2 * l, 3 * l)).norm()
    }
}

/// Rotates a canonical `5L x 5L` ladder Hamiltonian into the chain + stub basis
/// with `X+- = (A +- B)/sqrt2` and `Y+- = (C +- D)/sqrt2`.
pub fn detangle(h: &DMatrix<f64>, l: usize) -> Result<Detangled> {
    let n = 5 * l;
    if h.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h.nrows(),
        });
    }
    let rot = pair_rotation();
    let mut u = DMatrix::<f64>::zeros(n, n);
    // (old type of first partner, new column of the + combination, of the - combination)
    let sectors = [(0usize, 2 * l, 0usize), (2, 3 * l, l)];
    for (first, plus_col, minus_col) in sectors {
        for i in 0..l {
            let (p, q) = (first * l + i, (first + 1) * l + i);
            u[(p, plus_col + i)] = rot[(0, 0)];
            u[(q, plus_col + i)] = rot[(0, 1)];
            u[(p, minus_col + i)] = rot[(1, 0)];
            u[(q, minus_col + i)] = rot[(1, 1)];
        }
    }
    for i in 0..l {
        u[(4 * l + i, 4 * l + i)] = 1.0;
    }
    let transformed = u.transpose() * h * &u;
    Ok(Detangled {
        transform: u,
        transformed,
        length: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{finite_hamiltonian, finite_hamiltonian_with, synthesize, Boundary, OnSite};

    fn syn(kind: LatticeKind) -> SyntheticLattice {
        synthesize(&RealLattice::build(kind).unwrap()).unwrap()
    }

    #[test]
    fn triangular_gamma_point() {
        let m = bloch_matrix(&syn(LatticeKind::Triangular), &[0.0, 0.0]).unwrap();
        for n in 0..3 {
            assert!((m.c_block[(0, n)] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        }
        let ev = m.eigenvalues();
        let w = 2.0 * 3f64.sqrt();
        for (a, b) in ev.iter().zip([-w, 0.0, 0.0, w]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn honeycomb_gamma_point() {
        let ev = bloch_matrix(&syn(LatticeKind::Honeycomb), &[0.0, 0.0]).unwrap().eigenvalues();
        let w = 6f64.sqrt();
        for (a, b) in ev.iter().zip([-w, 0.0, 0.0, 0.0, w]) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn wrong_k_dimension() {
        let err = bloch_matrix(&syn(LatticeKind::Square), &[0.0]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn every_column_has_two_unit_terms() {
        for kind in LatticeKind::BUILTIN {
            let s = syn(kind);
            let k: Vec<f64> = (0..s.dim).map(|i| 0.37 + 0.21 * i as f64).collect();
            let m = bloch_matrix(&s, &k).unwrap();
            for n in 0..s.n2() {
                // |sum of two unit phasors|^2 summed over rows = 2 + 2 Re(..) when
                // both land on one row, else 2
                let total: f64 = (0..s.n1()).map(|r| m.c_block[(r, n)].norm_sqr()).sum();
                assert!(total <= 4.0 + 1e-12 && total >= -1e-12);
            }
            let full = m.full();
            assert_eq!((&full - full.adjoint()).norm(), 0.0);
        }
    }

    #[test]
    fn reciprocal_duality() {
        for kind in [LatticeKind::Square, LatticeKind::Triangular, LatticeKind::Honeycomb] {
            let a = RealLattice::build(kind).unwrap().primitive_vectors;
            let b = reciprocal_vectors(&a);
            for i in 0..2 {
                for j in 0..2 {
                    let d = b[i][0] * a[j][0] + b[i][1] * a[j][1];
                    let e = if i == j { 2.0 * PI } else { 0.0 };
                    assert!((d - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lieb_flat_band() {
        let s = syn(LatticeKind::Square);
        let bs = band_structure(&s, &parallelepiped_grid(&s, 64)).unwrap();
        let (lo, hi) = bs.band_range(1);
        assert!(lo.abs() < 1e-10 && hi.abs() < 1e-10);
        assert_eq!(count_flat_bands(&bs, DEFAULT_FLAT_TOL), 1);
        assert_eq!(bs.flat_flags, vec![false, true, false]);
    }

    #[test]
    fn chain_has_no_flat_band() {
        let s = syn(LatticeKind::Chain);
        let bs = band_structure(&s, &parallelepiped_grid(&s, 256)).unwrap();
        assert_eq!(count_flat_bands(&bs, DEFAULT_FLAT_TOL), 0);
        assert_eq!(bs.flat_band_bound(), 0);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(band_structure(&syn(LatticeKind::Chain), &[]).is_err());
    }

    #[test]
    fn analytic_rejects_other_kinds() {
        assert_eq!(
            analytic_bands(LatticeKind::Square, &[0.0, 0.0]).unwrap_err(),
            Error::UnsupportedKind("square".into())
        );
    }

    #[test]
    fn honeycomb_touching_points() {
        for v in hexagonal_zone_vertices(LatticeKind::Honeycomb).unwrap() {
            let ev = analytic_bands(LatticeKind::Honeycomb, &v).unwrap();
            assert!((ev[3] - 3f64.sqrt()).abs() < 1e-7 && (ev[4] - 3f64.sqrt()).abs() < 1e-7);
            let slack = hexagonal_zone_slack(LatticeKind::Honeycomb, v).unwrap();
            assert!(slack.iter().all(|s| *s > -1e-12));
            assert_eq!(slack.iter().filter(|s| s.abs() < 1e-12).count(), 2);
        }
        let ev = analytic_bands(LatticeKind::Honeycomb, &[0.0, 0.0]).unwrap();
        assert!((ev[4] - 6f64.sqrt()).abs() < 1e-12 && ev[3].abs() < 1e-12);
    }

    #[test]
    fn pair_rotation_is_involutive() {
        let r = pair_rotation();
        assert!((r * r - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn detangle_clean_ladder_decouples() {
        let s = syn(LatticeKind::Ladder);
        let h = finite_hamiltonian(&s, 10, None).unwrap();
        let d = detangle(&h, 10).unwrap();
        assert!(d.cross_block_norm() < 1e-12);
        let u = &d.transform;
        assert!((u.transpose() * u - DMatrix::identity(50, 50)).norm() < 1e-12);
        // vertical hop of the stub is sqrt 2
        let stub = d.stub_block();
        assert!((stub[(10, 20)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn detangle_disordered_ladder_couples() {
        let s = syn(LatticeKind::Ladder);
        let shifts: Vec<f64> = (0..30).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.01).collect();
        let h = finite_hamiltonian(&s, 10, Some(&shifts)).unwrap();
        assert!(detangle(&h, 10).unwrap().cross_block_norm() > 0.0);
        assert!(detangle(&h, 9).is_err());
    }

    #[test]
    fn detangled_block_edges() {
        // periodic ladder of 8 cells samples k = 0 and k = pi exactly
        let s = syn(LatticeKind::Ladder);
        let h = finite_hamiltonian_with(&s, 8, Boundary::Periodic, OnSite::default()).unwrap();
        let d = detangle(&h, 8).unwrap();
        let chain: Vec<f64> = d.chain_block().symmetric_eigenvalues().iter().copied().collect();
        let cmax = chain.iter().copied().fold(f64::MIN, f64::max);
        let cmin = chain.iter().copied().fold(f64::MAX, f64::min);
        assert!((cmax - 2.0).abs() < 1e-12 && (cmin + 2.0).abs() < 1e-12);
        let stub: Vec<f64> = d.stub_block().symmetric_eigenvalues().iter().copied().collect();
        let disp: Vec<f64> = stub.iter().map(|e| e.abs()).filter(|e| *e > 1e-9).collect();
        let lo = disp.iter().copied().fold(f64::MAX, f64::min);
        let hi = disp.iter().copied().fold(f64::MIN, f64::max);
        assert!((lo - 2f64.sqrt()).abs() < 1e-12 && (hi - 6f64.sqrt()).abs() < 1e-12);
    }
}
