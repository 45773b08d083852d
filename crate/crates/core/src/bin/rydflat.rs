use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use rydflat::sweep::{self, ExperimentConfig, Figure, Format, Grid, Subcommand};
use rydflat::{Error, Result};

/// Flat-band lattices, disorder, localization and quench dynamics of
/// facilitated Rydberg ladders.
///
/// Settings come from defaults, then `--config <file.json>`, then flags.
/// Artifacts go to `<output-dir>/<subcommand>/`; the output directory
/// defaults to $RYDFLAT_OUTPUT_DIR, else ./rydflat-out.
/// Exit codes: 0 ok, 2 invalid configuration, 3 numerical failure or failed check.
#[derive(Parser, Debug)]
#[command(name = "rydflat", version)]
struct Cli {
    /// JSON configuration file (see `--print-config` for the layout).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, short = 'j', global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Table format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Print the resolved configuration and exit without running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Bloch band structure of a lattice's synthetic graph.
    Bands(BandsArgs),
    /// Sampled pair energy-shift statistics against the analytic density.
    Disorder(DisorderArgs),
    /// Localization lengths on the ladder, with scaling fits when possible.
    Localization(LocArgs),
    /// Scaling exponents only; a failed fit is an error.
    Scaling(LocArgs),
    /// Disorder-averaged spreading of the flat-band state.
    Dynamics(DynamicsArgs),
    /// Six-pulse preparation of the flat-band state.
    Prepare(PrepareArgs),
    /// Full spin Hamiltonian against the effective model.
    Compare(CompareArgs),
    /// Preset reproduction with a pass/fail report (fig1..fig5, tableS1).
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct BandsArgs {
    /// Built-in kind (chain, ladder, square, triangular, honeycomb) or a lattice JSON file.
    #[arg(long)]
    lattice: Option<String>,
    #[arg(long)]
    kpoints: Option<String>,
    /// cut or zone.
    #[arg(long)]
    path: Option<String>,
    #[arg(long)]
    flat_tol: Option<String>,
}

#[derive(Args, Debug)]
struct DisorderArgs {
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
    /// Histogram range `lo:hi` in units of V0.
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    ks_alpha: Option<String>,
}

#[derive(Args, Debug)]
struct LocArgs {
    /// Energies, e.g. `1.8` or `1,sqrt2,1.8,2,sqrt6`.
    #[arg(long, visible_alias = "energies")]
    energy: Option<String>,
    /// Positional-disorder grid, e.g. `log:5e-6:5e-4:12`.
    #[arg(long, conflicts_with = "w_grid")]
    s_grid: Option<String>,
    /// Flat-disorder width grid.
    #[arg(long)]
    w_grid: Option<String>,
    /// positional, flat_pair_only or flat_all_sites.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long)]
    v0_over_omega: Option<String>,
    /// exact or linearized.
    #[arg(long)]
    formula: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    qr_period: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Fixed number of fit points.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct DynamicsArgs {
    /// Ladder length in rungs.
    #[arg(long = "L", visible_alias = "length")]
    length: Option<usize>,
    /// Position-spread grid `sigma / R0`.
    #[arg(long)]
    s_grid: Option<String>,
    /// Interaction strengths `V0 / Omega`, one or a list.
    #[arg(long)]
    v0_over_omega: Option<String>,
    /// Times `Omega t`.
    #[arg(long, conflicts_with = "omega_t_over_2pi")]
    times: Option<String>,
    /// Times as `Omega t / 2 pi`.
    #[arg(long)]
    omega_t_over_2pi: Option<String>,
    /// Disorder realizations per cell.
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    alpha: Option<u32>,
    /// Skip the per-rung profile table.
    #[arg(long)]
    no_profiles: bool,
    /// Profile times `Omega t`; defaults to the scan times.
    #[arg(long)]
    profile_times: Option<String>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Ladder length in rungs (spin simulation, keep small).
    #[arg(long = "L", visible_alias = "length")]
    length: Option<usize>,
    /// Left rung of the prepared plaquette, 1-based.
    #[arg(long)]
    rung: Option<usize>,
    /// ideal_gate or full_hamiltonian.
    #[arg(long)]
    mode: Option<String>,
    /// Pulse Rabi frequency in units of Omega (full mode).
    #[arg(long)]
    omega_r: Option<String>,
    #[arg(long)]
    v0_over_omega: Option<String>,
    #[arg(long)]
    alpha: Option<u32>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Ladder length in rungs (spin simulation, keep small).
    #[arg(long = "L", visible_alias = "length")]
    length: Option<usize>,
    #[arg(long)]
    s_grid: Option<String>,
    #[arg(long)]
    v0_over_omega: Option<String>,
    /// Comparison times as `Omega t / 2 pi`.
    #[arg(long)]
    omega_t_over_2pi: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    alpha: Option<u32>,
    /// geometric or nearest_neighbour.
    #[arg(long)]
    distance_model: Option<String>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// fig1, fig2, fig3, fig4, fig5 or tableS1.
    figure: String,
    /// Override the preset disorder grid.
    #[arg(long)]
    s_grid: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Override the transfer-matrix length.
    #[arg(long)]
    steps: Option<String>,
}

fn grid(s: &str) -> Result<Grid> {
    s.parse()
}

fn number(s: &str) -> Result<f64> {
    sweep::parse_number(s)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_loc(c: &mut sweep::LocalizationConfig, a: LocArgs) -> Result<()> {
    set(&mut c.energies, a.energy.as_deref().map(grid).transpose()?);
    set(&mut c.grid, a.s_grid.or(a.w_grid).as_deref().map(grid).transpose()?);
    set(&mut c.mode, a.mode.as_deref().map(str::parse).transpose()?);
    set(&mut c.alpha, a.alpha);
    set(&mut c.v0_over_omega, a.v0_over_omega.as_deref().map(number).transpose()?);
    set(&mut c.formula, a.formula.as_deref().map(sweep::parse_enum).transpose()?);
    set(&mut c.steps, a.steps.as_deref().map(sweep::parse_count).transpose()?);
    set(&mut c.qr_period, a.qr_period);
    set(&mut c.realizations, a.realizations);
    if a.window.is_some() {
        c.window = a.window;
    }
    Ok(())
}

fn resolve(cli: Cli) -> Result<(Subcommand, ExperimentConfig)> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.master_seed, cli.seed);
    set(&mut cfg.parallelism, cli.parallelism);
    if cli.output_dir.is_some() {
        cfg.output_dir = cli.output_dir;
    }
    set(&mut cfg.format, cli.format.as_deref().map(str::parse::<Format>).transpose()?);
    let sub = match cli.command {
        Command::Bands(a) => {
            let c = &mut cfg.bands;
            set(&mut c.lattice, a.lattice);
            set(&mut c.kpoints, a.kpoints.as_deref().map(sweep::parse_count).transpose()?);
            set(&mut c.path, a.path.as_deref().map(sweep::parse_enum).transpose()?);
            set(&mut c.flat_tol, a.flat_tol.as_deref().map(number).transpose()?);
            Subcommand::Bands
        }
        Command::Disorder(a) => {
            let c = &mut cfg.disorder;
            set(&mut c.s, a.s.as_deref().map(number).transpose()?);
            set(&mut c.alpha, a.alpha);
            set(&mut c.samples, a.samples.as_deref().map(sweep::parse_count).transpose()?);
            set(&mut c.bins, a.bins);
            set(&mut c.ks_alpha, a.ks_alpha.as_deref().map(number).transpose()?);
            if let Some(r) = a.range {
                let (lo, hi) = r
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidParameter(format!("range `{r}` must read lo:hi")))?;
                c.range = Some([number(lo)?, number(hi)?]);
            }
            Subcommand::Disorder
        }
        Command::Localization(a) => {
            apply_loc(&mut cfg.localization, a)?;
            Subcommand::Localization
        }
        Command::Scaling(a) => {
            apply_loc(&mut cfg.scaling, a)?;
            Subcommand::Scaling
        }
        Command::Dynamics(a) => {
            let c = &mut cfg.dynamics;
            set(&mut c.length, a.length);
            set(&mut c.s_grid, a.s_grid.as_deref().map(grid).transpose()?);
            set(&mut c.v0_over_omega, a.v0_over_omega.as_deref().map(grid).transpose()?);
            set(&mut c.times, a.times.as_deref().map(grid).transpose()?);
            if let Some(x) = a.omega_t_over_2pi {
                let t = sweep::parse_grid(&x)?.into_iter().map(|v| 2.0 * std::f64::consts::PI * v).collect();
                c.times = Grid::Values(t);
            }
            set(&mut c.realizations, a.realizations);
            set(&mut c.alpha, a.alpha);
            if a.no_profiles {
                c.profiles = false;
            }
            if let Some(p) = a.profile_times {
                c.profile_times = Some(grid(&p)?);
            }
            Subcommand::Dynamics
        }
        Command::Prepare(a) => {
            let c = &mut cfg.prepare;
            set(&mut c.length, a.length);
            set(&mut c.rung, a.rung);
            set(&mut c.mode, a.mode.as_deref().map(sweep::parse_enum).transpose()?);
            set(&mut c.omega_r, a.omega_r.as_deref().map(number).transpose()?);
            set(&mut c.v0_over_omega, a.v0_over_omega.as_deref().map(number).transpose()?);
            set(&mut c.alpha, a.alpha);
            Subcommand::Prepare
        }
        Command::Compare(a) => {
            let c = &mut cfg.compare;
            set(&mut c.length, a.length);
            set(&mut c.s_grid, a.s_grid.as_deref().map(grid).transpose()?);
            set(&mut c.v0_over_omega, a.v0_over_omega.as_deref().map(grid).transpose()?);
            set(&mut c.omega_t_over_2pi, a.omega_t_over_2pi.as_deref().map(grid).transpose()?);
            set(&mut c.realizations, a.realizations);
            set(&mut c.alpha, a.alpha);
            set(&mut c.distance_model, a.distance_model.as_deref().map(sweep::parse_enum).transpose()?);
            Subcommand::Compare
        }
        Command::Reproduce(a) => {
            let c = &mut cfg.reproduce;
            c.figure = a.figure.parse::<Figure>()?;
            if let Some(g) = a.s_grid {
                c.s_grid = Some(grid(&g)?);
            }
            if a.realizations.is_some() {
                c.realizations = a.realizations;
            }
            if let Some(n) = a.steps {
                c.steps = Some(sweep::parse_count(&n)?);
            }
            Subcommand::Reproduce
        }
    };
    Ok((sub, cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let print = cli.print_config;
    let (sub, cfg) = match resolve(cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(sweep::EXIT_INVALID_CONFIG as u8);
        }
    };
    if print {
        let _ = writeln!(std::io::stdout().lock(), "{}", cfg.to_json());
        return ExitCode::SUCCESS;
    }
    match sweep::run(sub, &cfg) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            for line in sweep::summary_lines(&report) {
                let _ = writeln!(out, "{line}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(sweep::exit_code(&e) as u8)
        }
    }
}
