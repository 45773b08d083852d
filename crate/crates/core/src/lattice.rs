//! Real-space tweezer geometries and the synthetic Hilbert-space lattices they
//! induce under facilitation.
//!
//! Lengths are in units of the nearest-neighbour spacing `R0`, energies in
//! units of the Rabi frequency `Omega`. A synthetic lattice has one
//! one-excitation site per atom of the real unit cell and one pair site at the
//! midpoint of every nearest-neighbour bond; each pair site hops (amplitude 1)
//! to the two one-excitation sites at the ends of its bond and nowhere else.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement in the lattice plane.
pub type Vec2 = [f64; 2];

const LINK_LENGTH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Ladder,
    Square,
    Triangular,
    Honeycomb,
    Custom,
}

impl LatticeKind {
    pub const BUILTIN: [LatticeKind; 5] = [
        LatticeKind::Chain,
        LatticeKind::Ladder,
        LatticeKind::Square,
        LatticeKind::Triangular,
        LatticeKind::Honeycomb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::Chain => "chain",
            LatticeKind::Ladder => "ladder",
            LatticeKind::Square => "square",
            LatticeKind::Triangular => "triangular",
            LatticeKind::Honeycomb => "honeycomb",
            LatticeKind::Custom => "custom",
        }
    }

    /// Momentum-axis scale factor used when plotting zone cuts. Display only.
    pub fn momentum_scale(self) -> Option<f64> {
        match self {
            LatticeKind::Square => Some(1.0),
            LatticeKind::Triangular | LatticeKind::Honeycomb => Some(4.0 / 3.0),
            _ => None,
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LatticeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chain" => Ok(LatticeKind::Chain),
            "ladder" => Ok(LatticeKind::Ladder),
            "square" | "lieb" => Ok(LatticeKind::Square),
            "triangular" => Ok(LatticeKind::Triangular),
            "honeycomb" => Ok(LatticeKind::Honeycomb),
            "custom" => Ok(LatticeKind::Custom),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Nearest-neighbour bond from basis atom `from` in cell 0 to basis atom `to`
/// in the cell displaced by `cell_offset` (integer multiples of the primitive
/// vectors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub cell_offset: Vec<i32>,
}

impl Link {
    fn new(from: usize, to: usize, cell_offset: &[i32]) -> Self {
        Link {
            from,
            to,
            cell_offset: cell_offset.to_vec(),
        }
    }

    fn reversed(&self) -> Link {
        Link {
            from: self.to,
            to: self.from,
            cell_offset: self.cell_offset.iter().map(|o| -o).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// Real-space tweezer geometry: a Bravais lattice plus a basis and the list of
/// nearest-neighbour bonds (each physical bond stored once).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealLattice {
    pub kind: LatticeKind,
    pub dim: usize,
    pub primitive_vectors: Vec<Vec2>,
    pub basis: Vec<Vec2>,
    pub nn_links: Vec<Link>,
}

impl RealLattice {
    /// Builds one of the built-in geometries.
    ///
    /// The honeycomb primitive vectors have length `sqrt(3)` so that the bond
    /// length stays 1; all other kinds have unit primitive vectors.
    pub fn build(kind: LatticeKind) -> Result<Self> {
        let s3 = 3f64.sqrt();
        let lattice = match kind {
            LatticeKind::Chain => RealLattice {
                kind,
                dim: 1,
                primitive_vectors: vec![[1.0, 0.0]],
                basis: vec![[0.0, 0.0]],
                nn_links: vec![Link::new(0, 0, &[1])],
            },
            LatticeKind::Ladder => RealLattice {
                kind,
                dim: 1,
                primitive_vectors: vec![[1.0, 0.0]],
                // upper leg, lower leg
                basis: vec![[0.0, 0.0], [0.0, -1.0]],
                // upper leg bond, lower leg bond, rung
                nn_links: vec![Link::new(0, 0, &[1]), Link::new(1, 1, &[1]), Link::new(0, 1, &[0])],
            },
            LatticeKind::Square => RealLattice {
                kind,
                dim: 2,
                primitive_vectors: vec![[1.0, 0.0], [0.0, 1.0]],
                basis: vec![[0.0, 0.0]],
                nn_links: vec![Link::new(0, 0, &[1, 0]), Link::new(0, 0, &[0, 1])],
            },
            LatticeKind::Triangular => RealLattice {
                kind,
                dim: 2,
                primitive_vectors: vec![[1.0, 0.0], [0.5, s3 / 2.0]],
                basis: vec![[0.0, 0.0]],
                nn_links: vec![
                    Link::new(0, 0, &[1, 0]),
                    Link::new(0, 0, &[0, 1]),
                    Link::new(0, 0, &[1, -1]),
                ],
            },
            LatticeKind::Honeycomb => {
                let a1 = [s3, 0.0];
                let a2 = [s3 / 2.0, 1.5];
                let b2 = [(2.0 * a2[0] - a1[0]) / 3.0, (2.0 * a2[1] - a1[1]) / 3.0];
                RealLattice {
                    kind,
                    dim: 2,
                    primitive_vectors: vec![a1, a2],
                    basis: vec![[0.0, 0.0], b2],
                    nn_links: vec![
                        Link::new(0, 1, &[0, 0]),
                        Link::new(0, 1, &[1, -1]),
                        Link::new(0, 1, &[0, -1]),
                    ],
                }
            }
            LatticeKind::Custom => {
                return Err(Error::InvalidLattice(
                    "custom lattices must be given explicitly".into(),
                ))
            }
        };
        lattice.validate()?;
        Ok(lattice)
    }

    /// Builds and validates a user-supplied geometry.
    pub fn custom(
        dim: usize,
        primitive_vectors: Vec<Vec2>,
        basis: Vec<Vec2>,
        nn_links: Vec<Link>,
    ) -> Result<Self> {
        let lattice = RealLattice {
            kind: LatticeKind::Custom,
            dim,
            primitive_vectors,
            basis,
            nn_links,
        };
        lattice.validate()?;
        Ok(lattice)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lattice: RealLattice =
            serde_json::from_str(text).map_err(|e| Error::InvalidLattice(e.to_string()))?;
        lattice.validate()?;
        Ok(lattice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lattice serializes")
    }

    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.nn_links.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidLattice(msg));
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dimension {} not in {{1, 2}}", self.dim));
        }
        if self.primitive_vectors.len() != self.dim {
            return bad(format!(
                "{} primitive vectors for dimension {}",
                self.primitive_vectors.len(),
                self.dim
            ));
        }
        let independent = match self.dim {
            1 => norm2(self.primitive_vectors[0]) > 1e-12,
            _ => {
                let [a, b] = [self.primitive_vectors[0], self.primitive_vectors[1]];
                (a[0] * b[1] - a[1] * b[0]).abs() > 1e-12
            }
        };
        if !independent {
            return bad("primitive vectors are linearly dependent".into());
        }
        if self.basis.is_empty() {
            return bad("empty basis".into());
        }
        for (i, link) in self.nn_links.iter().enumerate() {
            if link.from >= self.basis.len() || link.to >= self.basis.len() {
                return bad(format!("link {i} references a missing basis atom"));
            }
            if link.cell_offset.len() != self.dim {
                return bad(format!("link {i} offset has wrong dimension"));
            }
            let len = norm2(self.link_vector(link));
            if (len - 1.0).abs() > LINK_LENGTH_TOL {
                return bad(format!("link {i} has length {len}, expected 1"));
            }
            let rev = link.reversed();
            for other in &self.nn_links[..i] {
                if *other == *link || *other == rev {
                    return bad(format!("link {i} duplicates an earlier bond"));
                }
            }
            if rev == *link {
                return bad(format!("link {i} is a self-loop"));
            }
        }
        Ok(())
    }

    /// Cartesian vector of a Bravais translation.
    pub fn lattice_vector(&self, offset: &[i32]) -> Vec2 {
        let mut v = [0.0; 2];
        for (n, a) in offset.iter().zip(&self.primitive_vectors) {
            v[0] += *n as f64 * a[0];
            v[1] += *n as f64 * a[1];
        }
        v
    }

    /// Bond vector pointing from the `from` atom to the `to` atom.
    pub fn link_vector(&self, link: &Link) -> Vec2 {
        let r = self.lattice_vector(&link.cell_offset);
        let (a, b) = (self.basis[link.from], self.basis[link.to]);
        [b[0] + r[0] - a[0], b[1] + r[1] - a[1]]
    }

    /// Explicit finite patch of `l` cells per dimension.
    pub fn finite(&self, l: usize, boundary: Boundary) -> Result<FiniteLattice> {
        let grid = CellGrid::new(self.dim, l, boundary)?;
        let n_cells = grid.n_cells();
        let mut positions = Vec::with_capacity(self.n_basis() * n_cells);
        for b in &self.basis {
            for c in 0..n_cells {
                let coords = grid.coords(c);
                let r = self.lattice_vector(&coords[..self.dim].iter().map(|&x| x as i32).collect::<Vec<_>>());
                positions.push([b[0] + r[0], b[1] + r[1], 0.0]);
            }
        }
        let mut bonds = Vec::with_capacity(self.n_bonds() * n_cells);
        for link in &self.nn_links {
            for c in 0..n_cells {
                let bond = grid
                    .shift(c, &link.cell_offset)
                    .map(|c2| (link.from * n_cells + c, link.to * n_cells + c2));
                bonds.push(bond);
            }
        }
        Ok(FiniteLattice {
            length: l,
            dim: self.dim,
            boundary,
            n_cells,
            n_basis: self.n_basis(),
            positions,
            bonds,
            bond_vectors: self.nn_links.iter().map(|link| self.link_vector(link)).collect(),
        })
    }
}

/// Finite patch of a [`RealLattice`].
///
/// Atom `b` of cell `c` has index `b * n_cells + c`; bond slot `n * n_cells + c`
/// holds the `n`-th link of cell `c`, or `None` when its far end falls outside
/// an open boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLattice {
    pub length: usize,
    pub dim: usize,
    pub boundary: Boundary,
    pub n_cells: usize,
    pub n_basis: usize,
    pub positions: Vec<[f64; 3]>,
    pub bonds: Vec<Option<(usize, usize)>>,
    /// Ideal bond vector of each link type.
    pub bond_vectors: Vec<Vec2>,
}

impl FiniteLattice {
    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    /// Ideal (undisplaced) vector of bond slot `slot`.
    pub fn bond_vector(&self, slot: usize) -> Vec2 {
        self.bond_vectors[slot / self.n_cells]
    }
}

/// Indexing of the cells of a finite `l^dim` patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellGrid {
    pub dim: usize,
    pub length: usize,
    pub boundary: Boundary,
}

impl CellGrid {
    pub fn new(dim: usize, length: usize, boundary: Boundary) -> Result<Self> {
        if length < 2 {
            return Err(Error::LengthTooSmall(length));
        }
        Ok(CellGrid {
            dim,
            length,
            boundary,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.length.pow(self.dim as u32)
    }

    /// Integer coordinates of cell `c` (second entry 0 in 1D).
    pub fn coords(&self, c: usize) -> [i64; 2] {
        let l = self.length;
        match self.dim {
            1 => [c as i64, 0],
            _ => [(c % l) as i64, (c / l) as i64],
        }
    }

    /// Cell reached from `c` by the Bravais translation `offset`.
    pub fn shift(&self, c: usize, offset: &[i32]) -> Option<usize> {
        let l = self.length as i64;
        let base = self.coords(c);
        let mut idx = 0usize;
        let mut stride = 1usize;
        for d in 0..self.dim {
            let mut x = base[d] + offset[d] as i64;
            match self.boundary {
                Boundary::Open => {
                    if x < 0 || x >= l {
                        return None;
                    }
                }
                Boundary::Periodic => x = x.rem_euclid(l),
            }
            idx += x as usize * stride;
            stride *= self.length;
        }
        Some(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteRole {
    OneExcitation,
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSite {
    pub label: String,
    pub role: SiteRole,
    pub offset: Vec2,
}

/// Hop between pair site `pair` (cell 0) and one-excitation site `one_exc` in
/// the cell displaced by `cell_offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopLink {
    pub pair: usize,
    pub one_exc: usize,
    pub cell_offset: Vec<i32>,
}

/// Reference to a synthetic basis site by role-local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteRef {
    One(usize),
    Pair(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLattice {
    pub kind: LatticeKind,
    pub dim: usize,
    pub primitive_vectors: Vec<Vec2>,
    pub one_exc_sites: Vec<SyntheticSite>,
    pub pair_sites: Vec<SyntheticSite>,
    pub hop_links: Vec<HopLink>,
    pub hop_amplitude: f64,
    /// Site-type-major ordering used by finite Hamiltonians.
    pub canonical_order: Vec<SiteRef>,
}

impl SyntheticLattice {
    pub fn n1(&self) -> usize {
        self.one_exc_sites.len()
    }

    pub fn n2(&self) -> usize {
        self.pair_sites.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n1() + self.n2()
    }

    /// Position of `site` within [`Self::canonical_order`].
    pub fn canonical_position(&self, site: SiteRef) -> usize {
        self.canonical_order
            .iter()
            .position(|s| *s == site)
            .expect("site is part of the canonical order")
    }

    pub fn label(&self, site: SiteRef) -> &str {
        match site {
            SiteRef::One(m) => &self.one_exc_sites[m].label,
            SiteRef::Pair(n) => &self.pair_sites[n].label,
        }
    }

    /// Hop links leaving pair site `n`.
    pub fn links_of_pair(&self, n: usize) -> impl Iterator<Item = &HopLink> {
        self.hop_links.iter().filter(move |h| h.pair == n)
    }

    pub fn validate(&self) -> Result<()> {
        for n in 0..self.n2() {
            let count = self.links_of_pair(n).count();
            if count != 2 {
                return Err(Error::InvalidLattice(format!(
                    "pair site {n} has {count} hop links, expected 2"
                )));
            }
        }
        if self.hop_links.iter().any(|h| h.one_exc >= self.n1() || h.pair >= self.n2()) {
            return Err(Error::InvalidLattice("hop link out of range".into()));
        }
        Ok(())
    }
}

/// Places a one-excitation site on every basis atom and a pair site on the
/// midpoint of every bond.
pub fn synthesize(real: &RealLattice) -> Result<SyntheticLattice> {
    real.validate()?;
    let ladder = real.kind == LatticeKind::Ladder;
    let one_labels = |m: usize| {
        if ladder {
            ["C", "D"][m].to_string()
        } else {
            format!("mu{}", m + 1)
        }
    };
    let pair_labels = |n: usize| {
        if ladder {
            ["A", "B", "E"][n].to_string()
        } else {
            format!("nu{}", n + 1)
        }
    };

    let one_exc_sites = real
        .basis
        .iter()
        .enumerate()
        .map(|(m, b)| SyntheticSite {
            label: one_labels(m),
            role: SiteRole::OneExcitation,
            offset: *b,
        })
        .collect();

    let mut pair_sites = Vec::with_capacity(real.n_bonds());
    let mut hop_links = Vec::with_capacity(2 * real.n_bonds());
    for (n, link) in real.nn_links.iter().enumerate() {
        let a = real.basis[link.from];
        let d = real.link_vector(link);
        pair_sites.push(SyntheticSite {
            label: pair_labels(n),
            role: SiteRole::Pair,
            offset: [a[0] + d[0] / 2.0, a[1] + d[1] / 2.0],
        });
        hop_links.push(HopLink {
            pair: n,
            one_exc: link.from,
            cell_offset: vec![0; real.dim],
        });
        hop_links.push(HopLink {
            pair: n,
            one_exc: link.to,
            cell_offset: link.cell_offset.clone(),
        });
    }

    let canonical_order = if ladder {
        vec![
            SiteRef::Pair(0),
            SiteRef::Pair(1),
            SiteRef::One(0),
            SiteRef::One(1),
            SiteRef::Pair(2),
        ]
    } else {
        (0..real.n_basis())
            .map(SiteRef::One)
            .chain((0..real.n_bonds()).map(SiteRef::Pair))
            .collect()
    };

    let syn = SyntheticLattice {
        kind: real.kind,
        dim: real.dim,
        primitive_vectors: real.primitive_vectors.clone(),
        one_exc_sites,
        pair_sites,
        hop_links,
        hop_amplitude: 1.0,
        canonical_order,
    };
    syn.validate()?;
    Ok(syn)
}

/// On-site energies for a finite synthetic Hamiltonian.
///
/// `pair[n * n_cells + c]` shifts pair site `n` of cell `c`; `one_exc` uses the
/// same layout for one-excitation sites.
#[derive(Debug, Clone, Copy, Default)]
pub struct OnSite<'a> {
    pub pair: Option<&'a [f64]>,
    pub one_exc: Option<&'a [f64]>,
}

/// Finite Hamiltonian with open boundaries and pair-site shifts only.
pub fn finite_hamiltonian(
    syn: &SyntheticLattice,
    l: usize,
    shifts: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    finite_hamiltonian_with(
        syn,
        l,
        Boundary::Open,
        OnSite {
            pair: shifts,
            one_exc: None,
        },
    )
}

/// Finite synthetic Hamiltonian on `l^dim` cells.
///
/// Row index is `canonical_position * n_cells + cell`. Under open boundaries a
/// pair site whose bond leaves the patch is dropped: its row and column stay
/// zero and its shift is ignored.
pub fn finite_hamiltonian_with(
    syn: &SyntheticLattice,
    l: usize,
    boundary: Boundary,
    onsite: OnSite<'_>,
) -> Result<DMatrix<f64>> {
    let grid = CellGrid::new(syn.dim, l, boundary)?;
    let n_cells = grid.n_cells();
    if let Some(s) = onsite.pair {
        if s.len() != syn.n2() * n_cells {
            return Err(Error::DimensionMismatch {
                expected: syn.n2() * n_cells,
                got: s.len(),
            });
        }
    }
    if let Some(s) = onsite.one_exc {
        if s.len() != syn.n1() * n_cells {
            return Err(Error::DimensionMismatch {
                expected: syn.n1() * n_cells,
                got: s.len(),
            });
        }
    }

    let dim = syn.n_sites() * n_cells;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let one_pos: Vec<usize> = (0..syn.n1())
        .map(|m| syn.canonical_position(SiteRef::One(m)))
        .collect();

    for n in 0..syn.n2() {
        let pair_pos = syn.canonical_position(SiteRef::Pair(n));
        let links: Vec<&HopLink> = syn.links_of_pair(n).collect();
        for c in 0..n_cells {
            let targets: Option<Vec<usize>> = links
                .iter()
                .map(|hl| grid.shift(c, &hl.cell_offset).map(|c2| one_pos[hl.one_exc] * n_cells + c2))
                .collect();
            let Some(targets) = targets else { continue };
            let row = pair_pos * n_cells + c;
            for t in targets {
                h[(row, t)] += syn.hop_amplitude;
                h[(t, row)] += syn.hop_amplitude;
            }
            if let Some(s) = onsite.pair {
                h[(row, row)] += s[n * n_cells + c];
            }
        }
    }
    if let Some(s) = onsite.one_exc {
        for (m, &pos) in one_pos.iter().enumerate() {
            for c in 0..n_cells {
                h[(pos * n_cells + c, pos * n_cells + c)] += s[m * n_cells + c];
            }
        }
    }
    Ok(h)
}

fn norm2(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syn(kind: LatticeKind) -> SyntheticLattice {
        synthesize(&RealLattice::build(kind).unwrap()).unwrap()
    }

    fn sorted_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn builtin_counts() {
        let counts: Vec<(usize, usize)> = LatticeKind::BUILTIN
            .iter()
            .map(|&k| {
                let r = RealLattice::build(k).unwrap();
                (r.n_basis(), r.n_bonds())
            })
            .collect();
        assert_eq!(counts, vec![(1, 1), (2, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn synthesized_site_counts() {
        assert_eq!((syn(LatticeKind::Square).n1(), syn(LatticeKind::Square).n2()), (1, 2));
        assert_eq!((syn(LatticeKind::Triangular).n1(), syn(LatticeKind::Triangular).n2()), (1, 3));
        let ladder = syn(LatticeKind::Ladder);
        assert_eq!((ladder.n1(), ladder.n2()), (2, 3));
        let labels: Vec<&str> = ladder.canonical_order.iter().map(|&s| ladder.label(s)).collect();
        assert_eq!(labels, ["A", "B", "C", "D", "E"]);
    }

    #[test]
    fn pair_sites_sit_on_bond_midpoints() {
        let s = syn(LatticeKind::Triangular);
        let expect = [[0.5, 0.0], [0.25, 3f64.sqrt() / 4.0], [0.25, -(3f64.sqrt()) / 4.0]];
        for (site, e) in s.pair_sites.iter().zip(expect) {
            assert!((site.offset[0] - e[0]).abs() < 1e-15 && (site.offset[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_kind_and_short_length() {
        assert_eq!("kagome".parse::<LatticeKind>(), Err(Error::UnknownKind("kagome".into())));
        let s = syn(LatticeKind::Ladder);
        assert_eq!(finite_hamiltonian(&s, 1, None).unwrap_err(), Error::LengthTooSmall(1));
        let r = RealLattice::build(LatticeKind::Chain).unwrap();
        assert!(r.finite(1, Boundary::Open).is_err());
    }

    #[test]
    fn invalid_custom_lattices_rejected() {
        // bond of length 2
        let err = RealLattice::custom(1, vec![[2.0, 0.0]], vec![[0.0, 0.0]], vec![Link::new(0, 0, &[1])]);
        assert!(matches!(err, Err(Error::InvalidLattice(_))));
        // duplicated bond stored in both orientations
        let err = RealLattice::custom(
            1,
            vec![[1.0, 0.0]],
            vec![[0.0, 0.0]],
            vec![Link::new(0, 0, &[1]), Link::new(0, 0, &[-1])],
        );
        assert!(matches!(err, Err(Error::InvalidLattice(_))));
        let err = RealLattice::custom(2, vec![[1.0, 0.0], [2.0, 0.0]], vec![[0.0, 0.0]], vec![]);
        assert!(matches!(err, Err(Error::InvalidLattice(_))));
    }

    #[test]
    fn json_round_trip() {
        let r = RealLattice::build(LatticeKind::Honeycomb).unwrap();
        let back = RealLattice::from_json(&r.to_json()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn ladder_l2_matches_block_structure() {
        let s = syn(LatticeKind::Ladder);
        let h = finite_hamiltonian(&s, 2, None).unwrap();
        assert_eq!(h.shape(), (10, 10));
        // index = type * L + cell, types A B C D E
        let idx = |t: usize, cell: usize| t * 2 + cell;
        let mut expect = DMatrix::<f64>::zeros(10, 10);
        let h0 = [(0, 2), (1, 3), (2, 4), (3, 4)];
        for cell in 0..2 {
            for (a, b) in h0 {
                expect[(idx(a, cell), idx(b, cell))] = 1.0;
                expect[(idx(b, cell), idx(a, cell))] = 1.0;
            }
        }
        // A_1 -> C_2, B_1 -> D_2
        for (a, b) in [(0, 2), (1, 3)] {
            expect[(idx(a, 0), idx(b, 1))] = 1.0;
            expect[(idx(b, 1), idx(a, 0))] = 1.0;
        }
        // open boundary: A_L and B_L removed
        for t in [0, 1] {
            let r = idx(t, 1);
            for c in 0..10 {
                expect[(r, c)] = 0.0;
                expect[(c, r)] = 0.0;
            }
        }
        assert_eq!(h, expect);
    }

    #[test]
    fn clean_matrices_are_symmetric_zero_one() {
        for kind in LatticeKind::BUILTIN {
            let s = syn(kind);
            for boundary in [Boundary::Open, Boundary::Periodic] {
                let h = finite_hamiltonian_with(&s, 4, boundary, OnSite::default()).unwrap();
                assert_eq!(h, h.transpose());
                assert!(h.iter().all(|&x| x == 0.0 || x == 1.0), "{kind} {boundary:?}");
            }
        }
    }

    #[test]
    fn bipartite_blocks_vanish() {
        for kind in LatticeKind::BUILTIN {
            let s = syn(kind);
            let n_cells = 3usize.pow(s.dim as u32);
            let h = finite_hamiltonian_with(&s, 3, Boundary::Open, OnSite::default()).unwrap();
            let role = |row: usize| matches!(s.canonical_order[row / n_cells], SiteRef::One(_));
            for i in 0..h.nrows() {
                for j in 0..h.ncols() {
                    if role(i) == role(j) {
                        assert_eq!(h[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn ladder_l3_has_zero_mode() {
        let s = syn(LatticeKind::Ladder);
        let h = finite_hamiltonian(&s, 3, None).unwrap();
        let ev = sorted_eigenvalues(&h);
        // two structural zeros from the removed A_L/B_L slots plus the flat band
        assert!(ev.iter().filter(|e| e.abs() < 1e-10).count() >= 3);
    }

    #[test]
    fn spectra_are_particle_hole_symmetric() {
        for kind in LatticeKind::BUILTIN {
            let s = syn(kind);
            let h = finite_hamiltonian_with(&s, 5, Boundary::Open, OnSite::default()).unwrap();
            let ev = sorted_eigenvalues(&h);
            for (a, b) in ev.iter().zip(ev.iter().rev()) {
                assert!((a + b).abs() < 1e-10, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn shift_length_is_checked() {
        let s = syn(LatticeKind::Ladder);
        let err = finite_hamiltonian(&s, 4, Some(&[0.0; 5])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 12, got: 5 });
    }

    #[test]
    fn shifts_land_on_pair_diagonal_only() {
        let s = syn(LatticeKind::Ladder);
        let l = 4;
        let shifts: Vec<f64> = (0..3 * l).map(|i| 0.1 * (i + 1) as f64).collect();
        let h = finite_hamiltonian(&s, l, Some(&shifts)).unwrap();
        // A_1 .. A_3 carry shifts, A_4 removed, C/D zero, E_1..E_4 shifted
        assert_eq!(h[(0, 0)], 0.1);
        assert_eq!(h[(3, 3)], 0.0);
        assert_eq!(h[(2 * l, 2 * l)], 0.0);
        assert_eq!(h[(4 * l + 3, 4 * l + 3)], shifts[2 * l + 3]);
    }
}
