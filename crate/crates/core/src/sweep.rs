//! Experiment orchestration behind the `rydflat` binary: configuration,
//! deterministic sweeps, tabular output and run manifests.
//!
//! Every subcommand derives its base seed as `derive(master_seed,
//! [tag(subcommand)])`; sweeps then append cell and realization indices (see
//! [`crate::seed`]). Results are collected in grid order, so the emitted
//! tables do not depend on the worker count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Matrix4;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bloch;
use crate::disorder::{self, DisorderMode, DisorderParams, ShiftFormula};
use crate::dynamics::{self, DistanceModel, PulseMode, SpinSystem};
use crate::lattice::{self, LatticeKind, RealLattice};
use crate::seed;
use crate::stats;
use crate::transfer::{self, LyapunovResult, RungShifts, TransferConfig};
use crate::{Error, Result};

pub const OUTPUT_DIR_ENV: &str = "RYDFLAT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "rydflat-out";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_MASTER_SEED: u64 = 2024;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for a failed run: numerical failures map to 3, everything
/// else (bad parameters, unreadable files) to 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ResampleBudget { .. }
        | Error::Resonance { .. }
        | Error::NotHermitian(_)
        | Error::TooFewPoints { .. }
        | Error::Undefined(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID_CONFIG,
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Parses a lowercase serde enum name such as `flat_pair_only`.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T> {
    let name = s.trim().to_ascii_lowercase().replace('-', "_");
    serde_json::from_value(Value::String(name)).map_err(|e| invalid(format!("`{s}`: {e}")))
}

// ---------------------------------------------------------------------------
// Grids

/// A list of values, either explicit or as a spec string:
/// `log:lo:hi:n`, `lin:lo:hi:n` or a comma list (`1,sqrt2,1.8`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Spec(String),
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Grid::Values(v) if v.is_empty() => Err(invalid("empty grid")),
            Grid::Values(v) if v.iter().any(|x| !x.is_finite()) => Err(invalid("grid values must be finite")),
            Grid::Values(v) => Ok(v.clone()),
            Grid::Spec(s) => parse_grid(s),
        }
    }
}

impl From<&str> for Grid {
    fn from(s: &str) -> Self {
        Grid::Spec(s.to_string())
    }
}

impl FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_grid(s)?;
        Ok(Grid::Spec(s.trim().to_string()))
    }
}

/// Number with optional `sqrt` prefix: `2.5`, `1e-3`, `sqrt2`, `sqrt(6)`.
pub fn parse_number(tok: &str) -> Result<f64> {
    let t = tok.trim();
    let v = if let Some(rest) = t.strip_prefix("sqrt") {
        let inner = rest.trim_start_matches('(').trim_end_matches(')');
        inner.parse::<f64>().map_err(|_| invalid(format!("bad number `{tok}`")))?.sqrt()
    } else {
        t.parse::<f64>().map_err(|_| invalid(format!("bad number `{tok}`")))?
    };
    if !v.is_finite() {
        return Err(invalid(format!("non-finite number `{tok}`")));
    }
    Ok(v)
}

/// Positive integer that may be written in float notation (`1e6`).
pub fn parse_count(tok: &str) -> Result<usize> {
    let v = parse_number(tok)?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(invalid(format!("`{tok}` is not a non-negative integer")));
    }
    Ok(v as usize)
}

pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let ranged = |body: &str, log: bool| -> Result<Vec<f64>> {
        let parts: Vec<&str> = body.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!("grid `{spec}` must read kind:lo:hi:n")));
        }
        let (lo, hi, n) = (parse_number(parts[0])?, parse_number(parts[1])?, parse_count(parts[2])?);
        if n == 0 {
            return Err(invalid(format!("grid `{spec}` has no points")));
        }
        if log {
            if lo <= 0.0 || hi <= 0.0 {
                return Err(invalid(format!("log grid `{spec}` needs positive bounds")));
            }
            return Ok(transfer::log_grid(lo, hi, n));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    };
    if let Some(body) = spec.strip_prefix("log:") {
        return ranged(body, true);
    }
    if let Some(body) = spec.strip_prefix("lin:") {
        return ranged(body, false);
    }
    if spec.is_empty() {
        return Err(invalid("empty grid"));
    }
    spec.split(',').map(parse_number).collect()
}

fn ascending(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

/// Decimal scientific notation with 17 significant digits.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Column-named table. Column names carry units in brackets.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self { columns: columns.iter().map(|c| c.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Num(x) => format_number(*x),
                    Cell::Int(i) => i.to_string(),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// `{"columns": [...], "rows": [[...], ...]}`; non-finite numbers become null.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Array(
                    row.iter()
                        .map(|c| match c {
                            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
                            Cell::Int(i) => json!(i),
                            Cell::Text(s) => json!(s),
                        })
                        .collect(),
                )
            })
            .collect();
        json!({ "columns": self.columns, "rows": rows })
    }

    /// Numeric column by name (non-numeric cells read as NaN).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(x) => *x,
                    Cell::Int(i) => *i as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KPath {
    /// Cut along `k_y = 0` over the scaled zone width.
    #[default]
    Cut,
    /// Full parallelepiped grid, `kpoints` per reciprocal direction.
    Zone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    /// Built-in kind name or path to a lattice JSON document.
    pub lattice: String,
    pub kpoints: usize,
    pub path: KPath,
    pub flat_tol: f64,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self { lattice: "honeycomb".into(), kpoints: bloch::DEFAULT_KPOINTS, path: KPath::Cut, flat_tol: bloch::DEFAULT_FLAT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderConfig {
    pub s: f64,
    pub alpha: u32,
    pub samples: usize,
    pub bins: usize,
    /// Histogram range in `dv`; defaults to the central 99% of the samples.
    pub range: Option<[f64; 2]>,
    /// KS significance level.
    pub ks_alpha: f64,
}

impl Default for DisorderConfig {
    fn default() -> Self {
        Self { s: 0.05, alpha: 3, samples: 1_000_000, bins: 200, range: None, ks_alpha: 0.01 }
    }
}

/// Shared by `localization` and `scaling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub energies: Grid,
    /// Disorder strengths: `s` in positional mode, `W` in the flat modes.
    pub grid: Grid,
    pub mode: DisorderMode,
    pub alpha: u32,
    pub v0_over_omega: f64,
    pub formula: ShiftFormula,
    pub steps: usize,
    pub qr_period: usize,
    pub realizations: usize,
    /// Fixed number of fit points instead of the automatic curvature cut.
    pub window: Option<usize>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            energies: "1,sqrt2,1.8,2,sqrt6".into(),
            grid: "log:5e-6:5e-4:9".into(),
            mode: DisorderMode::Positional,
            alpha: 3,
            v0_over_omega: 300.0,
            formula: ShiftFormula::Exact,
            steps: transfer::DEFAULT_STEPS,
            qr_period: transfer::DEFAULT_QR_PERIOD,
            realizations: 1,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub length: usize,
    pub s_grid: Grid,
    pub v0_over_omega: Grid,
    /// Evaluation times `Omega t`.
    pub times: Grid,
    pub realizations: usize,
    pub alpha: u32,
    /// Emit per-rung profiles of realization 0 of every cell.
    pub profiles: bool,
    /// Times `Omega t` of the profiles; defaults to `times`.
    pub profile_times: Option<Grid>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            length: 20,
            s_grid: "log:1e-4:1e-1:13".into(),
            v0_over_omega: "200".into(),
            times: "500,2000".into(),
            realizations: 100,
            alpha: 3,
            profiles: true,
            profile_times: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub length: usize,
    /// First rung of the target plaquette (1-based).
    pub rung: usize,
    pub mode: PulseMode,
    /// `Omega_R / Omega` for full-Hamiltonian pulses.
    pub omega_r: f64,
    pub v0_over_omega: f64,
    pub alpha: u32,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { length: 4, rung: 2, mode: PulseMode::IdealGate, omega_r: 1.0, v0_over_omega: 200.0, alpha: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub length: usize,
    pub s_grid: Grid,
    pub v0_over_omega: Grid,
    pub omega_t_over_2pi: Grid,
    pub realizations: usize,
    pub alpha: u32,
    pub distance_model: DistanceModel,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            length: 4,
            s_grid: "1e-3,3e-3,1e-2,3e-2".into(),
            v0_over_omega: "20,200".into(),
            omega_t_over_2pi: "4.3".into(),
            realizations: 100,
            alpha: 3,
            distance_model: DistanceModel::Geometric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Figure {
    #[serde(rename = "fig1")]
    #[default]
    Fig1,
    #[serde(rename = "fig2")]
    Fig2,
    #[serde(rename = "fig3")]
    Fig3,
    #[serde(rename = "fig4")]
    Fig4,
    #[serde(rename = "fig5")]
    Fig5,
    #[serde(rename = "tableS1")]
    TableS1,
}

impl Figure {
    pub const ALL: [Figure; 6] = [Figure::Fig1, Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5, Figure::TableS1];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::TableS1 => "tableS1",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Figure::ALL
            .into_iter()
            .find(|f| f.name().to_ascii_lowercase() == t)
            .ok_or_else(|| invalid(format!("unknown figure `{s}` (fig1..fig5, tableS1)")))
    }
}

/// Preset selection plus optional overrides of its sweep parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceConfig {
    pub figure: Figure,
    /// Disorder grid override (`fig4`, `fig5`).
    pub s_grid: Option<Grid>,
    pub realizations: Option<usize>,
    /// Transfer-matrix steps override (`fig3`, `tableS1`).
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Bands,
    Disorder,
    Localization,
    Scaling,
    Dynamics,
    Prepare,
    Compare,
    Reproduce,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Bands => "bands",
            Subcommand::Disorder => "disorder",
            Subcommand::Localization => "localization",
            Subcommand::Scaling => "scaling",
            Subcommand::Dynamics => "dynamics",
            Subcommand::Prepare => "prepare",
            Subcommand::Compare => "compare",
            Subcommand::Reproduce => "reproduce",
        }
    }
}

/// Global settings plus one parameter block per subcommand; only the block
/// of the dispatched subcommand is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub parallelism: usize,
    pub output_dir: Option<PathBuf>,
    pub format: Format,
    pub bands: BandsConfig,
    pub disorder: DisorderConfig,
    pub localization: LocalizationConfig,
    pub scaling: LocalizationConfig,
    pub dynamics: DynamicsConfig,
    pub prepare: PrepareConfig,
    pub compare: CompareConfig,
    pub reproduce: ReproduceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: DEFAULT_MASTER_SEED,
            parallelism: 0,
            output_dir: None,
            format: Format::Csv,
            bands: BandsConfig::default(),
            disorder: DisorderConfig::default(),
            localization: LocalizationConfig::default(),
            scaling: LocalizationConfig::default(),
            dynamics: DynamicsConfig::default(),
            prepare: PrepareConfig::default(),
            compare: CompareConfig::default(),
            reproduce: ReproduceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Global settings plus the block of `sub`.
    pub fn resolved(&self, sub: Subcommand) -> Value {
        let block = match sub {
            Subcommand::Bands => json!(self.bands),
            Subcommand::Disorder => json!(self.disorder),
            Subcommand::Localization => json!(self.localization),
            Subcommand::Scaling => json!(self.scaling),
            Subcommand::Dynamics => json!(self.dynamics),
            Subcommand::Prepare => json!(self.prepare),
            Subcommand::Compare => json!(self.compare),
            Subcommand::Reproduce => json!(self.reproduce),
        };
        let mut v = json!({
            "master_seed": self.master_seed,
            "parallelism": self.parallelism,
            "output_dir": self.output_dir,
            "format": self.format,
        });
        v[sub.name()] = block;
        v
    }

    /// Output directory: the configured one, else `$RYDFLAT_OUTPUT_DIR`,
    /// else `./rydflat-out`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

// ---------------------------------------------------------------------------
// Results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    /// Coordinates folded into the parent seed.
    pub derivation: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub label: String,
    pub status: String,
    /// Disorder slices redrawn because of coincident atoms or resonances.
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// In-memory products of one run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub documents: Vec<(String, Value)>,
    pub seeds: Vec<SeedRecord>,
    pub runs: Vec<RunStatus>,
    pub checks: Vec<Check>,
}

impl Outcome {
    fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn document(&self, name: &str) -> Option<&Value> {
        self.documents.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    fn absorb(&mut self, prefix: &str, other: Outcome) {
        let pre = |n: String| if prefix.is_empty() { n } else { format!("{prefix}_{n}") };
        self.tables.extend(other.tables.into_iter().map(|(n, t)| (pre(n), t)));
        self.documents.extend(other.documents.into_iter().map(|(n, d)| (pre(n), d)));
        self.seeds.extend(other.seeds.into_iter().map(|mut s| {
            s.label = format!("{prefix}/{}", s.label);
            s
        }));
        self.runs.extend(other.runs.into_iter().map(|mut r| {
            r.label = format!("{prefix}/{}", r.label);
            r
        }));
        self.checks.extend(other.checks);
    }

    pub fn failed_checks(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: Subcommand,
    pub config: Value,
    pub master_seed: u64,
    pub seed_scheme: String,
    pub seeds: Vec<SeedRecord>,
    pub wall_clock_seconds: f64,
    pub status: String,
    pub error: Option<String>,
    pub runs: Vec<RunStatus>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
}

const SEED_SCHEME: &str = "base = derive(master_seed, [fnv1a(subcommand)]); \
cell seeds fold grid/realization indices into base; \
derive folds with the SplitMix64 finalizer";

fn base_seed(master: u64, sub: &str) -> SeedRecord {
    SeedRecord { label: "base".into(), derivation: format!("[tag({sub})]"), seed: seed::derive(master, &[seed::tag(sub)]) }
}

// ---------------------------------------------------------------------------
// bands

fn load_lattice(spec: &str) -> Result<RealLattice> {
    match spec.parse::<LatticeKind>() {
        Ok(kind) if kind != LatticeKind::Custom => RealLattice::build(kind),
        _ => {
            let text = fs::read_to_string(spec)
                .map_err(|e| invalid(format!("lattice `{spec}` is neither a built-in kind nor a readable file: {e}")))?;
            RealLattice::from_json(&text)
        }
    }
}

pub fn run_bands(cfg: &BandsConfig) -> Result<Outcome> {
    if cfg.kpoints < 1 {
        return Err(invalid("kpoints must be >= 1"));
    }
    if !(cfg.flat_tol > 0.0) {
        return Err(invalid("flat_tol must be > 0"));
    }
    let real = load_lattice(&cfg.lattice)?;
    let syn = lattice::synthesize(&real)?;
    let grid = match cfg.path {
        KPath::Cut => bloch::axis_cut(&syn, cfg.kpoints),
        KPath::Zone => bloch::parallelepiped_grid(&syn, cfg.kpoints),
    };
    let bs = bloch::band_structure_with_tol(&syn, &grid, cfg.flat_tol)?;
    let mut cols: Vec<String> = match syn.dim {
        1 => vec!["k [1/R0]".into()],
        _ => vec!["kx [1/R0]".into(), "ky [1/R0]".into()],
    };
    cols.extend((1..=bs.n_bands()).map(|b| format!("e{b} [Omega]")));
    let mut table = Table::new(&cols);
    for (k, ev) in bs.k_grid.iter().zip(&bs.bands) {
        table.push(k.iter().chain(ev).map(|&x| Cell::Num(x)).collect());
    }
    let ranges: Vec<[f64; 2]> = (0..bs.n_bands()).map(|b| bs.band_range(b).into()).collect();
    let meta = json!({
        "lattice": real.kind.name(),
        "n1": bs.n1,
        "n2": bs.n2,
        "n_bands": bs.n_bands(),
        "kpoints": grid.len(),
        "path": cfg.path,
        "flat_flags": bs.flat_flags,
        "n_flat": bloch::count_flat_bands(&bs, cfg.flat_tol),
        "flat_band_bound": bs.flat_band_bound(),
        "flat_tol": cfg.flat_tol,
        "band_ranges": ranges,
        "parity_defect": bs.parity_defect(),
        "eta": real.kind.momentum_scale(),
    });
    Ok(Outcome {
        tables: vec![("bands".into(), table)],
        documents: vec![("bands_meta".into(), meta)],
        runs: vec![RunStatus { label: real.kind.name().into(), status: "ok".into(), resamples: 0 }],
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------
// disorder

pub fn run_disorder(cfg: &DisorderConfig, master: u64) -> Result<Outcome> {
    DisorderParams::positional(cfg.s, cfg.alpha, 1.0).validate()?;
    if !(cfg.s > 0.0) {
        return Err(invalid("s must be > 0 for shift statistics"));
    }
    if cfg.samples < 2 || cfg.bins < 1 {
        return Err(invalid("need samples >= 2 and bins >= 1"));
    }
    if !(cfg.ks_alpha > 0.0 && cfg.ks_alpha < 1.0) {
        return Err(invalid("ks_alpha must lie in (0, 1)"));
    }
    let base = base_seed(master, "disorder");
    let mut dv = disorder::sample_relative_shifts(cfg.samples, cfg.s, cfg.alpha, base.seed);
    let ks = stats::ks_statistic(&mut dv, |x| disorder::cdf_energy_shift(x, cfg.s, cfg.alpha).unwrap_or(0.0));
    let crit = stats::ks_critical(dv.len(), cfg.ks_alpha);
    let n = dv.len();
    let [lo, hi] = match cfg.range {
        Some(r) if r[0] > -1.0 && r[1] > r[0] => r,
        Some(r) => return Err(invalid(format!("bad histogram range {r:?}"))),
        None => [dv[n / 200], dv[n - 1 - n / 200]],
    };
    let width = (hi - lo) / cfg.bins as f64;
    let mut counts = vec![0usize; cfg.bins];
    for &x in &dv {
        if x >= lo && x < hi {
            counts[(((x - lo) / width) as usize).min(cfg.bins - 1)] += 1;
        }
    }
    let mut table = Table::new(&["dv_center [V0]", "empirical_density [1/V0]", "analytic_density [1/V0]"]);
    for (b, &c) in counts.iter().enumerate() {
        let x = lo + (b as f64 + 0.5) * width;
        table.push(vec![x.into(), (c as f64 / (n as f64 * width)).into(), disorder::pdf_energy_shift(x, cfg.s, cfg.alpha)?.into()]);
    }
    let tail = disorder::tail_probability(cfg.s, cfg.alpha)?;
    let beyond = n - dv.partition_point(|&x| x <= tail.threshold);
    let summary = json!({
        "s": cfg.s,
        "alpha": cfg.alpha,
        "samples": n,
        "seed": base.seed,
        "range": [lo, hi],
        "ks_statistic": ks,
        "ks_critical": crit,
        "ks_alpha": cfg.ks_alpha,
        "ks_passed": ks < crit,
        "tail": tail,
        "empirical_tail_fraction": beyond as f64 / n as f64,
    });
    Ok(Outcome {
        tables: vec![("histogram".into(), table)],
        documents: vec![("summary".into(), summary)],
        seeds: vec![base],
        runs: vec![RunStatus { label: format!("s={}", cfg.s), status: "ok".into(), resamples: 0 }],
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------
// localization / scaling

fn strength_column(mode: DisorderMode) -> &'static str {
    match mode {
        DisorderMode::Positional => "s [R0]",
        _ => "W [Omega]",
    }
}

fn scaling_table() -> Table {
    Table::new(&[
        "energy [Omega]",
        "nu1",
        "nu2",
        "nu1_stderr",
        "nu2_stderr",
        "window1",
        "window2",
        "rms_residual1",
        "rms_residual2",
    ])
}

fn push_fit(table: &mut Table, fit: &transfer::ScalingFit) {
    table.push(vec![
        fit.energy.into(),
        fit.nu[0].into(),
        fit.nu[1].into(),
        fit.nu_stderr[0].into(),
        fit.nu_stderr[1].into(),
        fit.window[0].into(),
        fit.window[1].into(),
        fit.rms_residual[0].into(),
        fit.rms_residual[1].into(),
    ]);
}

/// Runs the transfer-matrix sweep. With `strict`, a failed fit is an error;
/// otherwise it is recorded in the run status and the table is still emitted.
pub fn run_localization(cfg: &LocalizationConfig, master: u64, sub: Subcommand, strict: bool) -> Result<Outcome> {
    let energies = cfg.energies.values()?;
    let grid = cfg.grid.values()?;
    if !ascending(&grid) || grid[0] < 0.0 {
        return Err(invalid("disorder grid must be non-negative and strictly ascending"));
    }
    if cfg.realizations == 0 {
        return Err(invalid("realizations must be >= 1"));
    }
    let base = base_seed(master, sub.name());
    let params = DisorderParams { alpha: cfg.alpha, v0_over_omega: cfg.v0_over_omega, mode: cfg.mode, formula: cfg.formula, ..DisorderParams::default() };
    let tcfg = TransferConfig { energy: energies[0], params, n_steps: cfg.steps, qr_period: cfg.qr_period, seed: base.seed };
    tcfg.validate()?;
    let mut xi = Table::new(&[
        "energy [Omega]",
        strength_column(cfg.mode),
        "xi1 [cells]",
        "xi2 [cells]",
        "xi1_stderr [cells]",
        "xi2_stderr [cells]",
        "seed",
        "n_steps",
        "resamples",
    ]);
    let mut fits = scaling_table();
    let mut out = Outcome { seeds: vec![base.clone()], ..Outcome::default() };
    for &e in &energies {
        let runs: Vec<LyapunovResult> = transfer::xi_sweep(e, &grid, &tcfg, cfg.realizations)?;
        for (i, r) in runs.iter().enumerate() {
            let sd = transfer::cell_seed(base.seed, e, i, 0);
            xi.push(vec![
                e.into(),
                grid[i].into(),
                r.xi1.into(),
                r.xi2.into(),
                r.xi1_stderr.into(),
                r.xi2_stderr.into(),
                sd.into(),
                cfg.steps.into(),
                r.resamples.into(),
            ]);
            out.seeds.push(SeedRecord {
                label: format!("energy={e} cell={i} realization=0"),
                derivation: format!("base + [bits({e}), {i}, 0]"),
                seed: sd,
            });
        }
        let resamples = runs.iter().map(|r| r.resamples).sum();
        let status = match transfer::fit_sweep(e, &grid, &runs, cfg.window) {
            Ok(fit) => {
                push_fit(&mut fits, &fit);
                "ok".to_string()
            }
            Err(err) if !strict => format!("fit failed: {err}"),
            Err(err) => return Err(err),
        };
        out.runs.push(RunStatus { label: format!("energy={e}"), status, resamples });
    }
    match sub {
        Subcommand::Scaling => out.tables.push(("scaling".into(), fits)),
        _ => {
            out.tables.push(("xi".into(), xi));
            out.tables.push(("scaling".into(), fits));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dynamics

fn validate_dynamics(length: usize, alpha: u32, s_grid: &[f64], times: &[f64]) -> Result<()> {
    if length < 4 {
        return Err(Error::LengthTooSmall(length));
    }
    DisorderParams::positional(0.0, alpha, 1.0).validate()?;
    if s_grid.iter().any(|&s| s < 0.0) {
        return Err(invalid("s values must be >= 0"));
    }
    if times.iter().any(|&t| t < 0.0) {
        return Err(invalid("times must be >= 0"));
    }
    Ok(())
}

pub fn run_dynamics(cfg: &DynamicsConfig, master: u64) -> Result<Outcome> {
    let s_grid = cfg.s_grid.values()?;
    let v0_grid = cfg.v0_over_omega.values()?;
    let times = cfg.times.values()?;
    validate_dynamics(cfg.length, cfg.alpha, &s_grid, &times)?;
    let base = base_seed(master, "dynamics");
    let rows = dynamics::dx_scan(cfg.length, &s_grid, &v0_grid, &times, cfg.realizations, cfg.alpha, base.seed)?;
    let mut summary = Table::new(&[
        "s [R0]",
        "v0_over_omega",
        "t [1/Omega]",
        "omega_t_over_2pi",
        "dx_upper [rungs]",
        "dx_upper_stderr [rungs]",
        "dx_lower [rungs]",
        "dx_lower_stderr [rungs]",
        "seed",
    ]);
    for r in &rows {
        summary.push(vec![
            r.s.into(),
            r.v0_over_omega.into(),
            r.t.into(),
            (r.t / (2.0 * PI)).into(),
            r.dx_upper.into(),
            r.dx_upper_stderr.into(),
            r.dx_lower.into(),
            r.dx_lower_stderr.into(),
            r.seed.into(),
        ]);
    }
    let mut out = Outcome { seeds: vec![base.clone()], ..Outcome::default() };
    for (i, &s) in s_grid.iter().enumerate() {
        for (j, &v0) in v0_grid.iter().enumerate() {
            out.seeds.push(SeedRecord {
                label: format!("s={s} v0_over_omega={v0} realization=0"),
                derivation: format!("base + [{i}, {j}, 0]"),
                seed: seed::derive(base.seed, &[i as u64, j as u64, 0]),
            });
            out.runs.push(RunStatus { label: format!("s={s} v0_over_omega={v0}"), status: "ok".into(), resamples: 0 });
        }
    }
    if cfg.profiles {
        let ptimes = match &cfg.profile_times {
            Some(g) => g.values()?,
            None => times.clone(),
        };
        validate_dynamics(cfg.length, cfg.alpha, &s_grid, &ptimes)?;
        let cells: Vec<(usize, usize)> = (0..s_grid.len()).flat_map(|i| (0..v0_grid.len()).map(move |j| (i, j))).collect();
        use rayon::prelude::*;
        let recs: Vec<dynamics::EvolutionRecord> = cells
            .par_iter()
            .map(|&(i, j)| {
                let params = DisorderParams::positional(s_grid[i], cfg.alpha, v0_grid[j]);
                dynamics::run_effective(cfg.length, &params, &ptimes, seed::derive(base.seed, &[i as u64, j as u64, 0]))
            })
            .collect::<Result<_>>()?;
        let mut prof = Table::new(&["s [R0]", "v0_over_omega", "t [1/Omega]", "rung", "p_upper", "p_lower"]);
        for (&(i, j), rec) in cells.iter().zip(&recs) {
            for (k, &t) in ptimes.iter().enumerate() {
                for rung in 0..cfg.length {
                    prof.push(vec![
                        s_grid[i].into(),
                        v0_grid[j].into(),
                        t.into(),
                        (rung + 1).into(),
                        rec.p_upper[k][rung].into(),
                        rec.p_lower[k][rung].into(),
                    ]);
                }
            }
        }
        out.tables.push(("profiles".into(), prof));
    }
    out.tables.push(("dx".into(), summary));
    out.documents.push((
        "dynamics_meta".into(),
        json!({
            "length": cfg.length,
            "initial_rungs": [cfg.length / 2, cfg.length / 2 + 1],
            "realizations": cfg.realizations,
            "omega_t_over_2pi": times.iter().map(|t| t / (2.0 * PI)).collect::<Vec<_>>(),
            "base_seed": base.seed,
        }),
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// prepare

fn configuration_label(cfg: usize, length: usize) -> String {
    let mut parts = Vec::new();
    for c in 0..length {
        if cfg >> c & 1 == 1 {
            parts.push(format!("u{}", c + 1));
        }
    }
    for c in 0..length {
        if cfg >> (length + c) & 1 == 1 {
            parts.push(format!("l{}", c + 1));
        }
    }
    if parts.is_empty() { "0".into() } else { parts.join("+") }
}

pub fn run_prepare(cfg: &PrepareConfig) -> Result<Outcome> {
    if !(cfg.omega_r > 0.0) {
        return Err(invalid("omega_r must be > 0"));
    }
    DisorderParams::positional(0.0, cfg.alpha, cfg.v0_over_omega).validate()?;
    let sys = SpinSystem::ideal(cfg.length, cfg.v0_over_omega, cfg.alpha);
    let prep = dynamics::prepare(&sys, cfg.rung, cfg.mode, cfg.omega_r)?;
    let target = dynamics::embed_in_spin(&dynamics::psi_loc(cfg.length, cfg.rung)?)?;
    let mut steps = Table::new(&["step", "pulse", "theta [rad]", "fidelity", "norm"]);
    let mut states = Table::new(&["step", "configuration", "re", "im"]);
    for (k, (p, st)) in dynamics::preparation_sequence(cfg.mode, cfg.omega_r).iter().zip(&prep.steps).enumerate() {
        let letter = match p.regime {
            dynamics::Regime::Blockade => 'B',
            dynamics::Regime::Facilitation => 'F',
        };
        steps.push(vec![
            (k + 1).into(),
            format!("{letter}{}", p.site).into(),
            p.theta.into(),
            target.fidelity(st)?.into(),
            st.norm().into(),
        ]);
        for (c, a) in st.amplitudes.iter().enumerate() {
            if a.norm() > 1e-12 {
                states.push(vec![(k + 1).into(), configuration_label(c, cfg.length).into(), a.re.into(), a.im.into()]);
            }
        }
    }
    Ok(Outcome {
        tables: vec![("steps".into(), steps), ("states".into(), states)],
        documents: vec![("prepare_summary".into(), json!({ "fidelity": prep.fidelity, "mode": cfg.mode, "rung": cfg.rung }))],
        runs: vec![RunStatus { label: "preparation".into(), status: "ok".into(), resamples: 0 }],
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------
// compare

pub fn run_compare(cfg: &CompareConfig, master: u64) -> Result<Outcome> {
    let s_grid = cfg.s_grid.values()?;
    let v0_grid = cfg.v0_over_omega.values()?;
    let tau = cfg.omega_t_over_2pi.values()?;
    validate_dynamics(cfg.length, cfg.alpha, &s_grid, &tau)?;
    if cfg.realizations == 0 {
        return Err(invalid("realizations must be >= 1"));
    }
    let base = base_seed(master, "compare");
    let mut table = Table::new(&[
        "s [R0]",
        "v0_over_omega",
        "omega_t_over_2pi",
        "dx_full [rungs]",
        "dx_effective [rungs]",
        "mean_abs_discrepancy [rungs]",
        "discrepancy_stderr [rungs]",
        "mean_leakage",
        "realizations",
        "seed",
    ]);
    let mut out = Outcome { seeds: vec![base.clone()], ..Outcome::default() };
    let mut curves = Vec::new();
    for (j, &v0) in v0_grid.iter().enumerate() {
        for &x in &tau {
            let mut gaps = Vec::new();
            for (i, &s) in s_grid.iter().enumerate() {
                let sd = seed::derive(base.seed, &[i as u64, j as u64]);
                let c = dynamics::compare_models(cfg.length, s, v0, cfg.alpha, 2.0 * PI * x, cfg.realizations, sd, cfg.distance_model)?;
                gaps.push((c.dx_full - c.dx_effective).abs());
                table.push(vec![
                    s.into(),
                    v0.into(),
                    x.into(),
                    c.dx_full.into(),
                    c.dx_effective.into(),
                    c.mean_abs_discrepancy.into(),
                    c.discrepancy_stderr.into(),
                    c.mean_leakage.into(),
                    c.realizations.into(),
                    sd.into(),
                ]);
                if x == tau[0] {
                    out.seeds.push(SeedRecord { label: format!("s={s} v0_over_omega={v0}"), derivation: format!("base + [{i}, {j}]"), seed: sd });
                    out.runs.push(RunStatus { label: format!("s={s} v0_over_omega={v0}"), status: "ok".into(), resamples: 0 });
                }
            }
            curves.push(json!({
                "v0_over_omega": v0,
                "omega_t_over_2pi": x,
                "curve_discrepancy": gaps.iter().sum::<f64>() / gaps.len() as f64,
            }));
        }
    }
    out.tables.push(("compare".into(), table));
    out.documents.push((
        "compare_summary".into(),
        json!({ "length": cfg.length, "realizations": cfg.realizations, "curves": curves, "base_seed": base.seed }),
    ));
    Ok(out)
}

/// Mean over the `s` grid of `|<dx>_full - <dx>_eff|` for one `V0/Omega` and
/// time, read from a `compare` table.
pub fn curve_discrepancy(table: &Table, v0_over_omega: f64, omega_t_over_2pi: f64) -> Option<f64> {
    let v0 = table.column("v0_over_omega")?;
    let tau = table.column("omega_t_over_2pi")?;
    let full = table.column("dx_full [rungs]")?;
    let eff = table.column("dx_effective [rungs]")?;
    let gaps: Vec<f64> = (0..v0.len())
        .filter(|&k| v0[k] == v0_over_omega && tau[k] == omega_t_over_2pi)
        .map(|k| (full[k] - eff[k]).abs())
        .collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

// ---------------------------------------------------------------------------
// reproduce

/// Tabulated scaling exponents `(nu1, nu2)` at energies `1, sqrt2, 1.8, 2,
/// sqrt6` for each disorder mode.
pub fn reference_exponents(mode: DisorderMode) -> [(f64, f64); 5] {
    match mode {
        DisorderMode::Positional => [(0.0, 2.2), (0.7, 2.2), (2.0, 1.9), (1.1, 1.1), (0.0, 0.6)],
        DisorderMode::FlatPairOnly => [(0.0, 2.0), (0.7, 2.0), (2.0, 1.8), (0.7, 1.3), (0.0, 0.6)],
        DisorderMode::FlatAllSites => [(0.0, 1.8), (0.8, 1.4), (2.0, 2.0), (0.7, 1.3), (0.0, 0.6)],
    }
}

pub const REFERENCE_ENERGIES: &str = "1,sqrt2,1.8,2,sqrt6";
pub const NU_TOLERANCE: f64 = 0.3;

/// Disorder grid used for the scaling fits of each mode.
pub fn reference_grid(mode: DisorderMode) -> &'static str {
    match mode {
        DisorderMode::Positional => "log:5e-6:5e-4:9",
        DisorderMode::FlatPairOnly => "log:5e-2:1:9",
        DisorderMode::FlatAllSites => "log:1e-1:1:9",
    }
}

fn nu_checks(out: &mut Outcome, mode: DisorderMode, fits: &Table) {
    let targets = reference_exponents(mode);
    let nu1 = fits.column("nu1").unwrap_or_default();
    let nu2 = fits.column("nu2").unwrap_or_default();
    let energies = parse_grid(REFERENCE_ENERGIES).expect("static grid");
    for (k, &e) in energies.iter().enumerate() {
        let (Some(&a), Some(&b)) = (nu1.get(k), nu2.get(k)) else {
            out.checks.push(Check::new(format!("nu {} e={e:.4}", mode.name()), false, "fit missing"));
            continue;
        };
        let (t1, t2) = targets[k];
        let ok = (a - t1).abs() <= NU_TOLERANCE && (b - t2).abs() <= NU_TOLERANCE;
        out.checks.push(Check::new(
            format!("nu {} e={e:.4}", mode.name()),
            ok,
            format!("({a:.3}, {b:.3}) vs ({t1}, {t2}) +- {NU_TOLERANCE}"),
        ));
    }
}

fn scaling_preset(mode: DisorderMode, steps: Option<usize>) -> LocalizationConfig {
    LocalizationConfig {
        energies: REFERENCE_ENERGIES.into(),
        grid: reference_grid(mode).into(),
        mode,
        steps: steps.unwrap_or(transfer::DEFAULT_STEPS),
        ..LocalizationConfig::default()
    }
}

/// Moduli of the clean transfer-matrix eigenvalues, descending.
pub fn clean_transfer_moduli(eps: f64) -> Result<[f64; 4]> {
    let t: Matrix4<f64> = transfer::rung_transfer_matrix(eps, &RungShifts::default())?;
    let mut m: Vec<f64> = t.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    Ok([m[0], m[1], m[2], m[3]])
}

fn reproduce_fig1() -> Result<Outcome> {
    let mut out = Outcome::default();
    for (kind, expected) in [("square", 1), ("triangular", 2), ("honeycomb", 1)] {
        let sub = run_bands(&BandsConfig { lattice: kind.into(), ..BandsConfig::default() })?;
        let meta = sub.document("bands_meta").expect("meta");
        let n_flat = meta["n_flat"].as_u64().unwrap_or(0);
        let parity = meta["parity_defect"].as_f64().unwrap_or(f64::NAN);
        out.checks.push(Check::new(format!("flat bands {kind}"), n_flat == expected, format!("{n_flat} (expected {expected})")));
        out.checks.push(Check::new(format!("parity {kind}"), parity < 1e-10, format!("defect {parity:.2e}")));
        out.absorb(kind, sub);
    }
    Ok(out)
}

fn reproduce_fig2() -> Result<Outcome> {
    let mut out = Outcome::default();
    // Odd point count so the cut contains k = 0 as well as the zone edges.
    let sub = run_bands(&BandsConfig { lattice: "ladder".into(), kpoints: 1025, ..BandsConfig::default() })?;
    let meta = sub.document("bands_meta").expect("meta").clone();
    let flags: Vec<bool> = serde_json::from_value(meta["flat_flags"].clone()).unwrap_or_default();
    let ranges: Vec<[f64; 2]> = serde_json::from_value(meta["band_ranges"].clone()).unwrap_or_default();
    let flat_at_zero = flags.iter().zip(&ranges).any(|(&f, r)| f && r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
    out.checks.push(Check::new(
        "ladder flat band at 0",
        flags.iter().filter(|&&f| f).count() == 1 && flat_at_zero,
        format!("flags {flags:?}"),
    ));
    let edges: Vec<f64> = ranges.iter().flat_map(|r| [r[0], r[1]]).collect();
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let worst = [-s6, -2.0, -s2, s2, 2.0, s6]
        .iter()
        .map(|&x| edges.iter().map(|e| (e - x).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    out.checks.push(Check::new("ladder band edges", worst < 1e-9, format!("max deviation {worst:.2e}")));
    let l = 12;
    let h = dynamics::effective_hamiltonian(l, None, None)?;
    let cross = bloch::detangle(&h, l)?.cross_block_norm();
    out.checks.push(Check::new("ladder detangling", cross < 1e-12, format!("cross-block norm {cross:.2e}")));
    out.absorb("ladder", sub);

    let mut tm = Table::new(&["energy [Omega]", "abs_lambda1", "abs_lambda2", "abs_lambda3", "abs_lambda4"]);
    for k in 1..=300 {
        let e = k as f64 * 0.01;
        let m = clean_transfer_moduli(e)?;
        tm.push(vec![e.into(), m[0].into(), m[1].into(), m[2].into(), m[3].into()]);
    }
    out.tables.push(("transfer_eigenvalues".into(), tm));
    Ok(out)
}

fn reproduce_fig3(rc: &ReproduceConfig, master: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let map = LocalizationConfig {
        energies: "lin:0.05:2.55:26".into(),
        grid: reference_grid(DisorderMode::Positional).into(),
        steps: rc.steps.map_or(200_000, |n| n.min(200_000)),
        ..LocalizationConfig::default()
    };
    let mut sub = run_localization(&map, master, Subcommand::Localization, false)?;
    sub.tables.retain(|(n, _)| n == "xi");
    out.absorb("map", sub);
    let lines = run_localization(&scaling_preset(DisorderMode::Positional, rc.steps), master, Subcommand::Scaling, false)?;
    let mut lines = lines;
    let fits = lines.table("scaling").cloned().unwrap_or_else(scaling_table);
    nu_checks(&mut out, DisorderMode::Positional, &fits);
    lines.tables.retain(|(n, _)| n == "scaling");
    out.absorb("lines", lines);
    Ok(out)
}

fn reproduce_table_s1(rc: &ReproduceConfig, master: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let energies = parse_grid(REFERENCE_ENERGIES)?;
    let mut table = Table::new(&["mode", "energy [Omega]", "nu1", "nu2", "nu1_reference", "nu2_reference", "nu1_stderr", "nu2_stderr"]);
    for mode in [DisorderMode::Positional, DisorderMode::FlatPairOnly, DisorderMode::FlatAllSites] {
        let sub = run_localization(&scaling_preset(mode, rc.steps), master, Subcommand::Scaling, false)?;
        let fits = sub.table("scaling").cloned().unwrap_or_else(scaling_table);
        nu_checks(&mut out, mode, &fits);
        let targets = reference_exponents(mode);
        let col = |n: &str| fits.column(n).unwrap_or_default();
        let (e, n1, n2, s1, s2) = (col("energy [Omega]"), col("nu1"), col("nu2"), col("nu1_stderr"), col("nu2_stderr"));
        for (k, &en) in energies.iter().enumerate() {
            if let Some(r) = e.iter().position(|&x| x == en) {
                table.push(vec![
                    mode.name().into(),
                    en.into(),
                    n1[r].into(),
                    n2[r].into(),
                    targets[k].0.into(),
                    targets[k].1.into(),
                    s1[r].into(),
                    s2[r].into(),
                ]);
            }
        }
        out.seeds.extend(sub.seeds.into_iter().map(|mut s| {
            s.label = format!("{}/{}", mode.name(), s.label);
            s
        }));
        out.runs.extend(sub.runs.into_iter().map(|mut r| {
            r.label = format!("{}/{}", mode.name(), r.label);
            r
        }));
    }
    out.tables.push(("nu".into(), table));
    Ok(out)
}

/// Index of the largest value, if it lies strictly inside the series.
fn interior_max(v: &[f64]) -> Option<usize> {
    let k = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?.0;
    (k > 0 && k + 1 < v.len()).then_some(k)
}

fn dx_series(table: &Table, v0: f64, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let col = |n: &str| table.column(n).unwrap_or_default();
    let (s, vv, tt) = (col("s [R0]"), col("v0_over_omega"), col("t [1/Omega]"));
    let (u, ue, l, le) = (col("dx_upper [rungs]"), col("dx_upper_stderr [rungs]"), col("dx_lower [rungs]"), col("dx_lower_stderr [rungs]"));
    let idx: Vec<usize> = (0..s.len()).filter(|&k| vv[k] == v0 && tt[k] == t).collect();
    let pick = |c: &[f64]| idx.iter().map(|&k| c[k]).collect::<Vec<_>>();
    (pick(&s), pick(&u), pick(&ue), pick(&l), pick(&le))
}

fn dynamics_checks(out: &mut Outcome, table: &Table, v0_grid: &[f64], times: &[f64]) {
    let t_last = *times.last().expect("times");
    for &v0 in v0_grid {
        let (s, u, ue, l, le) = dx_series(table, v0, t_last);
        let positive = s.iter().filter(|&&x| x > 0.0).count();
        if positive >= 3 {
            let (pu, pl) = (interior_max(&u), interior_max(&l));
            out.checks.push(Check::new(
                format!("dx interior maximum v0={v0}"),
                pu.is_some() && pl.is_some(),
                format!("argmax upper {:?}, lower {:?} of {} points", pu.map(|k| s[k]), pl.map(|k| s[k]), s.len()),
            ));
        }
        let worst = (0..u.len())
            .filter(|&k| s[k] > 0.0)
            .map(|k| (u[k] - l[k]).abs() / ue[k].hypot(le[k]))
            .fold(0.0, f64::max);
        out.checks.push(Check::new(format!("legs agree v0={v0}"), worst <= 3.0, format!("max {worst:.2} combined stderr")));
        for &t in times {
            let (s, u, _, l, _) = dx_series(table, v0, t);
            if let Some(k) = s.iter().position(|&x| x == 0.0) {
                let dev = (u[k] - 0.5).abs().max((l[k] - 0.5).abs());
                out.checks.push(Check::new(format!("clean dx v0={v0} t={t}"), dev < 1e-12, format!("|dx - 0.5| = {dev:.2e}")));
            }
        }
    }
}

fn reproduce_fig4(rc: &ReproduceConfig, master: u64) -> Result<Outcome> {
    let cfg = DynamicsConfig {
        s_grid: rc.s_grid.clone().unwrap_or_else(|| "log:1e-4:1e-1:13".into()),
        realizations: rc.realizations.unwrap_or(100),
        profiles: false,
        ..DynamicsConfig::default()
    };
    let mut out = Outcome::default();
    let sub = run_dynamics(&cfg, master)?;
    let table = sub.table("dx").cloned().expect("dx table");
    dynamics_checks(&mut out, &table, &cfg.v0_over_omega.values()?, &cfg.times.values()?);
    out.absorb("scan", sub);
    // Time-resolved profile of a single realization at s = 0.0014.
    let prof = DynamicsConfig {
        s_grid: "0.0014".into(),
        realizations: 1,
        profiles: true,
        profile_times: Some("lin:0:2000:41".into()),
        ..DynamicsConfig::default()
    };
    let mut psub = run_dynamics(&prof, master)?;
    psub.tables.retain(|(n, _)| n == "profiles");
    psub.documents.clear();
    out.absorb("single", psub);
    Ok(out)
}

fn reproduce_fig5(rc: &ReproduceConfig, master: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let map = DynamicsConfig {
        s_grid: rc.s_grid.clone().unwrap_or_else(|| "log:1e-4:1e-1:13".into()),
        v0_over_omega: "10,20,50,100,200,400".into(),
        times: "2000".into(),
        realizations: rc.realizations.unwrap_or(100),
        profiles: false,
        ..DynamicsConfig::default()
    };
    let sub = run_dynamics(&map, master)?;
    let table = sub.table("dx").cloned().expect("dx table");
    let peak = |v0: f64| {
        let (s, u, _, l, _) = dx_series(&table, v0, 2000.0);
        let avg: Vec<f64> = u.iter().zip(&l).map(|(a, b)| 0.5 * (a + b)).collect();
        interior_max(&avg).map(|k| s[k])
    };
    let (p20, p200) = (peak(20.0), peak(200.0));
    if map.s_grid.values()?.iter().filter(|&&s| s > 0.0).count() >= 3 {
        out.checks.push(Check::new(
            "dx peak moves to larger s at smaller V0/Omega",
            matches!((p20, p200), (Some(a), Some(b)) if a > b),
            format!("peak s at V0/Omega=20: {p20:?}, at 200: {p200:?}"),
        ));
    }
    out.absorb("map", sub);

    let cmp = CompareConfig { realizations: rc.realizations.unwrap_or(100), ..CompareConfig::default() };
    let csub = run_compare(&cmp, master)?;
    let ct = csub.table("compare").cloned().expect("compare table");
    let (d20, d200) = (curve_discrepancy(&ct, 20.0, 4.3).unwrap_or(f64::NAN), curve_discrepancy(&ct, 200.0, 4.3).unwrap_or(f64::NAN));
    out.checks.push(Check::new(
        "effective model error shrinks with V0/Omega",
        d20 >= 3.0 * d200,
        format!("curve discrepancy {d20:.4} (V0/Omega=20) vs {d200:.4} (200), ratio {:.2}", d20 / d200),
    ));
    out.absorb("compare", csub);
    Ok(out)
}

pub fn run_reproduce(rc: &ReproduceConfig, master: u64) -> Result<Outcome> {
    let mut out = match rc.figure {
        Figure::Fig1 => reproduce_fig1()?,
        Figure::Fig2 => reproduce_fig2()?,
        Figure::Fig3 => reproduce_fig3(rc, master)?,
        Figure::Fig4 => reproduce_fig4(rc, master)?,
        Figure::Fig5 => reproduce_fig5(rc, master)?,
        Figure::TableS1 => reproduce_table_s1(rc, master)?,
    };
    out.documents.push(("report".into(), json!({ "figure": rc.figure, "checks": out.checks })));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dispatch and output

/// Runs `sub` in memory on a pool of `cfg.parallelism` workers.
pub fn execute(sub: Subcommand, cfg: &ExperimentConfig) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| match sub {
        Subcommand::Bands => run_bands(&cfg.bands),
        Subcommand::Disorder => run_disorder(&cfg.disorder, cfg.master_seed),
        Subcommand::Localization => run_localization(&cfg.localization, cfg.master_seed, sub, false),
        Subcommand::Scaling => run_localization(&cfg.scaling, cfg.master_seed, sub, true),
        Subcommand::Dynamics => run_dynamics(&cfg.dynamics, cfg.master_seed),
        Subcommand::Prepare => run_prepare(&cfg.prepare),
        Subcommand::Compare => run_compare(&cfg.compare, cfg.master_seed),
        Subcommand::Reproduce => run_reproduce(&cfg.reproduce, cfg.master_seed),
    })
}

/// Directory receiving the artifacts of `sub`.
pub fn run_dir(sub: Subcommand, cfg: &ExperimentConfig) -> PathBuf {
    let leaf = match sub {
        Subcommand::Reproduce => cfg.reproduce.figure.name(),
        _ => sub.name(),
    };
    cfg.output_root().join(leaf)
}

/// Renders artifacts as `(file name, contents)` in emission order.
pub fn render(out: &Outcome, format: Format) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for (name, t) in &out.tables {
        match format {
            Format::Csv => files.push((format!("{name}.csv"), t.to_csv())),
            Format::Json => files.push((format!("{name}.json"), pretty(&t.to_json()))),
        }
    }
    for (name, d) in &out.documents {
        files.push((format!("{name}.json"), pretty(d)));
    }
    if !out.checks.is_empty() {
        let mut txt = String::new();
        for c in &out.checks {
            let _ = writeln!(txt, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        files.push(("report.txt".into(), txt));
    }
    files
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| invalid(format!("cannot write {}: {e}", p.display())))?;
    Ok(p)
}

/// Summary of a completed [`run`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: RunManifest,
    pub outcome: Option<Outcome>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.checks.iter().any(|c| !c.passed) {
            EXIT_NUMERICAL
        } else {
            EXIT_OK
        }
    }
}

/// Executes `sub`, writes its artifacts and `manifest.json` into
/// [`run_dir`]. A manifest is written on failure too, with the error; the
/// error is then returned.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let dir = run_dir(sub, cfg);
    let result = execute(sub, cfg);
    let mut manifest = RunManifest {
        tool: "rydflat".into(),
        version: VERSION.into(),
        subcommand: sub,
        config: cfg.resolved(sub),
        master_seed: cfg.master_seed,
        seed_scheme: SEED_SCHEME.into(),
        seeds: Vec::new(),
        wall_clock_seconds: 0.0,
        status: "ok".into(),
        error: None,
        runs: Vec::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
    };
    let mkdir = fs::create_dir_all(&dir).map_err(|e| invalid(format!("cannot create {}: {e}", dir.display())));
    let mut files = Vec::new();
    let outcome = match result {
        Ok(out) => {
            mkdir?;
            for (name, contents) in render(&out, cfg.format) {
                files.push(write_file(&dir, &name, &contents)?);
                manifest.artifacts.push(name);
            }
            manifest.seeds = out.seeds.clone();
            manifest.runs = out.runs.clone();
            manifest.checks = out.checks.clone();
            if out.failed_checks() > 0 {
                manifest.status = "failed_checks".into();
            }
            Some(out)
        }
        Err(err) => {
            if mkdir.is_ok() {
                manifest.status = "error".into();
                manifest.error = Some(err.to_string());
                manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
                let _ = write_file(&dir, "manifest.json", &pretty(&json!(manifest)));
            }
            return Err(err);
        }
    };
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    files.push(write_file(&dir, "manifest.json", &pretty(&json!(manifest)))?);
    Ok(RunReport { dir, files, manifest, outcome })
}

/// Subcommand-independent summary lines for the terminal.
pub fn summary_lines(report: &RunReport) -> Vec<String> {
    let mut lines = vec![format!("wrote {} files to {}", report.files.len(), report.dir.display())];
    let mut by_status: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &report.manifest.runs {
        *by_status.entry(r.status.as_str()).or_default() += 1;
    }
    for (status, n) in by_status {
        lines.push(format!("{n} run(s): {status}"));
    }
    for c in &report.manifest.checks {
        lines.push(format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("1,2.5,sqrt4").unwrap(), vec![1.0, 2.5, 2.0]);
        assert_eq!(parse_grid("sqrt(2)").unwrap(), vec![2f64.sqrt()]);
        let g = parse_grid("log:5e-6:5e-4:12").unwrap();
        assert_eq!(g.len(), 12);
        assert!((g[0] - 5e-6).abs() < 1e-20 && (g[11] - 5e-4).abs() < 1e-16);
        assert_eq!(parse_grid("lin:0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        for bad in ["", "log:0:1:3", "lin:0:1", "1,,2", "lin:0:1:0", "nan"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert!(parse_count("2.5").is_err());
    }

    #[test]
    fn csv_format() {
        let mut t = Table::new(&["x [a]", "n"]);
        t.push(vec![0.1.into(), 3usize.into()]);
        t.push(vec![f64::NAN.into(), 4usize.into()]);
        assert_eq!(t.to_csv(), "x [a],n\n1.0000000000000001e-1,3\nnan,4\n");
        assert_eq!(t.to_json()["rows"][1][0], Value::Null);
        let x: f64 = format_number(1.0 / 3.0).parse().unwrap();
        assert_eq!(x, 1.0 / 3.0);
    }

    #[test]
    fn config_round_trip_and_unknown_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.localization.energies = Grid::Values(vec![0.1 + 0.2, 2f64.sqrt()]);
        cfg.localization.window = Some(5);
        cfg.format = Format::Json;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_json(r#"{"bands": {"kpts": 3}}"#).is_err());
        let partial = ExperimentConfig::from_json(r#"{"master_seed": 9, "scaling": {"mode": "flat_pair_only"}}"#).unwrap();
        assert_eq!(partial.master_seed, 9);
        assert_eq!(partial.scaling.mode, DisorderMode::FlatPairOnly);
        assert_eq!(partial.scaling.steps, transfer::DEFAULT_STEPS);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidParameter("x".into())), EXIT_INVALID_CONFIG);
        assert_eq!(exit_code(&Error::ResampleBudget { what: "x".into(), budget: 1 }), EXIT_NUMERICAL);
    }

    #[test]
    fn figure_names() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("fig6".parse::<Figure>().is_err());
    }

    #[test]
    fn clean_transfer_moduli_pair_up() {
        for e in [0.3, 1.0, 1.7, 2.2, 2.9] {
            let m = clean_transfer_moduli(e).unwrap();
            assert!((m[0] * m[3] - 1.0).abs() < 1e-9 && (m[1] * m[2] - 1.0).abs() < 1e-9, "{e}: {m:?}");
        }
    }
}
