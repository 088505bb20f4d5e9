//! Command-line driver for the stop-and-go suppression pipeline.
//!
//! `analyze` prints the equilibrium and its characteristic speeds,
//! `contour` maps the free/congested boundary, `kernels` solves and exports
//! the backstepping kernels, `simulate` runs a closed-loop scenario. All
//! results are CSV for external plotting.

pub mod config;
pub mod output;

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use stopgo_core::kernels::{controller_residual, observer_residual, solve_controller_kernels, solve_observer_kernels};
use stopgo_core::model::{analyze, congestion_boundary_scan, lambda4_at, REGIME_TOL};
use stopgo_core::riemann::{build_design_model, diagonalize};
use stopgo_core::sim::{convergence_metrics, run_scenario};
use stopgo_core::units::{ms_to_kmh, per_m_to_per_km};
use stopgo_core::{Pipeline, Regime, Scenario};

use config::{parse_config, parse_config_str, preset, scenario_name, ConfigError, RunConfig, PRESETS};
use output::{num, CsvArtifact};

pub const DEFAULT_PRESET: &str = "reference";
pub const DEFAULT_OUT: &str = "stopgo-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    OpenLoop,
    FullState,
    OutputFeedback,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::OpenLoop => Scenario::OpenLoop,
            ScenarioArg::FullState => Scenario::FullStateFeedback,
            ScenarioArg::OutputFeedback => Scenario::OutputFeedback,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stopgo", version, about = "Backstepping ramp metering for two-class congested traffic")]
pub struct Cli {
    /// Configuration file (`key = value unit` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Shipped configuration: reference (default) or reference_n200.
    #[arg(long, global = true, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Simulation grid nodes.
    #[arg(long, global = true, value_name = "N")]
    pub grid_n: Option<usize>,
    /// Kernel grid nodes per triangle edge.
    #[arg(long, global = true, value_name = "N")]
    pub kernel_n: Option<usize>,
    /// Fraction of the CFL time step limit, in (0, 1].
    #[arg(long, global = true, value_name = "FRACTION")]
    pub cfl: Option<f64>,
    /// Simulation end time [s].
    #[arg(long, global = true, value_name = "SECONDS")]
    pub t_end: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Equilibrium, characteristic speeds, regime and convergence time.
    Analyze,
    /// lambda_4 over a density grid and its zero contour.
    Contour,
    /// Controller and observer kernels with a residual report.
    Kernels,
    /// Run a scenario and write the trajectory.
    Simulate,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{op} failed: {source}")]
    Numerical {
        op: &'static str,
        #[source]
        source: stopgo_core::Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }
}

fn numerical(op: &'static str) -> impl FnOnce(stopgo_core::Error) -> CliError {
    move |source| CliError::Numerical { op, source }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Configuration with command-line overrides applied and validated.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => parse_config(path)?,
        (None, name) => {
            let name = name.as_deref().unwrap_or(DEFAULT_PRESET);
            let text = preset(name).ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                ConfigError::Validation(format!("unknown preset `{name}` (available: {})", known.join(", ")))
            })?;
            parse_config_str(text, name)?
        }
    };
    if let Some(s) = cli.scenario {
        cfg.sim.scenario = s.into();
    }
    if let Some(n) = cli.grid_n {
        cfg.sim.n = n;
    }
    if let Some(n) = cli.kernel_n {
        cfg.kernel.n = n;
    }
    if let Some(c) = cli.cfl {
        cfg.sim.cfl_fraction = c;
    }
    if let Some(t) = cli.t_end {
        cfg.sim.t_end = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let console = Path::new("<stdout>");
    match cli.command {
        Command::Analyze => cmd_analyze(&cfg, stdout),
        Command::Contour => cmd_contour(&cfg, stdout),
        Command::Kernels => cmd_kernels(&cfg, stdout),
        Command::Simulate => cmd_simulate(&cfg, stdout),
    }
    .and_then(|()| stdout.flush().map_err(io_err(console)))
}

fn say(stdout: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(stdout, "{line}").map_err(io_err(Path::new("<stdout>")))
}

fn require_congested(regime: Regime, cfg: &RunConfig) -> Result<(), CliError> {
    if regime == Regime::Congested {
        return Ok(());
    }
    Err(ConfigError::Validation(format!(
        "equilibrium rho* = ({:.3}, {:.3}) veh/km is {regime:?}; kernels and control need a congested equilibrium (lambda_4 < 0)",
        per_m_to_per_km(cfg.rho_star[0]),
        per_m_to_per_km(cfg.rho_star[1]),
    ))
    .into())
}

fn cmd_analyze(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (eq, lin) = analyze(cfg.rho_star, &cfg.params).map_err(numerical("model::analyze"))?;
    let l = lin.lambdas;
    say(
        out,
        format_args!(
            "equilibrium  rho* = ({:.3}, {:.3}) veh/km  v* = ({:.3}, {:.3}) km/h  AO* = {:.5}",
            per_m_to_per_km(eq.rho_star[0]),
            per_m_to_per_km(eq.rho_star[1]),
            ms_to_kmh(eq.v_star[0]),
            ms_to_kmh(eq.v_star[1]),
            eq.ao_star
        ),
    )?;
    say(
        out,
        format_args!(
            "flows        q* = ({:.2}, {:.2}) veh/h",
            eq.q_star[0] * 3600.0,
            eq.q_star[1] * 3600.0
        ),
    )?;
    say(
        out,
        format_args!("speeds       lambda = ({:.4}, {:.4}, {:.4}, {:.4}) m/s", l[0], l[1], l[2], l[3]),
    )?;
    say(out, format_args!("regime       {:?}", lin.regime))?;
    if lin.regime == Regime::Congested {
        let length = cfg.params.road.length;
        let (a, b) = (length / eq.v_star[1], length / -l[3]);
        say(
            out,
            format_args!("t_F          {:.2} s  (L/v2* = {:.2} s, L/(-lambda_4) = {:.2} s)", a + b, a, b),
        )?;
        say(out, format_args!("2 t_F        {:.2} s", 2.0 * (a + b)))?;
    } else {
        say(out, format_args!("t_F          undefined outside the congested regime"))?;
    }
    Ok(())
}

fn regime_label(l4: Option<f64>) -> &'static str {
    match l4 {
        None => "infeasible",
        Some(v) if v > REGIME_TOL => "free",
        Some(v) if v < -REGIME_TOL => "congested",
        Some(_) => "boundary",
    }
}

fn cmd_contour(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let c = &cfg.contour;
    let scan = congestion_boundary_scan(&cfg.params, c.rho1, c.rho2, c.resolution)
        .map_err(numerical("model::congestion_boundary_scan"))?;
    let dir = out_dir(cfg);

    let grid_path = dir.join("lambda4_grid.csv");
    let mut grid = CsvArtifact::create(&grid_path, &["rho1_veh_per_km", "rho2_veh_per_km", "lambda4_m_per_s", "regime"])
        .map_err(io_err(&grid_path))?;
    for (row, &r2) in scan.rho2.iter().enumerate() {
        for (col, &r1) in scan.rho1.iter().enumerate() {
            let l4 = scan.at(row, col);
            let value = l4.map(num).unwrap_or_default();
            grid.row([num(per_m_to_per_km(r1)), num(per_m_to_per_km(r2)), value, regime_label(l4).to_string()])
                .map_err(io_err(&grid_path))?;
        }
    }
    grid.finish().map_err(io_err(&grid_path))?;

    let contour_path = dir.join("lambda4_contour.csv");
    let mut contour = CsvArtifact::create(
        &contour_path,
        &["polyline", "vertex", "rho1_veh_per_km", "rho2_veh_per_km", "lambda4_m_per_s"],
    )
    .map_err(io_err(&contour_path))?;
    let mut worst = 0.0_f64;
    let mut vertices = 0usize;
    for (p, line) in scan.contour.iter().enumerate() {
        for (v, pt) in line.iter().enumerate() {
            let l4 = lambda4_at(*pt, &cfg.params).unwrap_or(f64::NAN);
            worst = worst.max(l4.abs());
            vertices += 1;
            contour
                .row([p.to_string(), v.to_string(), num(per_m_to_per_km(pt[0])), num(per_m_to_per_km(pt[1])), num(l4)])
                .map_err(io_err(&contour_path))?;
        }
    }
    contour.finish().map_err(io_err(&contour_path))?;

    let here = lambda4_at(cfg.rho_star, &cfg.params);
    say(
        out,
        format_args!(
            "scan         {}x{} samples, rho1 in [{:.2}, {:.2}] veh/km, rho2 in [{:.2}, {:.2}] veh/km",
            c.resolution.0,
            c.resolution.1,
            per_m_to_per_km(c.rho1.0),
            per_m_to_per_km(c.rho1.1),
            per_m_to_per_km(c.rho2.0),
            per_m_to_per_km(c.rho2.1)
        ),
    )?;
    say(
        out,
        format_args!(
            "contour      {} polylines, {} vertices, max |lambda_4| = {:.3e} m/s (tolerance {:.0e})",
            scan.contour.len(),
            vertices,
            worst,
            scan.contour_tol
        ),
    )?;
    say(
        out,
        format_args!(
            "rho*         ({:.3}, {:.3}) veh/km lies on the {} side (lambda_4 = {})",
            per_m_to_per_km(cfg.rho_star[0]),
            per_m_to_per_km(cfg.rho_star[1]),
            regime_label(here),
            here.map(|v| format!("{v:.4} m/s")).unwrap_or_else(|| "n/a".into())
        ),
    )?;
    say(out, format_args!("wrote        {}, {}", grid_path.display(), contour_path.display()))
}

fn cmd_kernels(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, lin) = analyze(cfg.rho_star, &cfg.params).map_err(numerical("model::analyze"))?;
    require_congested(lin.regime, cfg)?;
    let dec = diagonalize(&lin).map_err(numerical("riemann::diagonalize"))?;
    let design = build_design_model(&dec, &lin, &cfg.params.road).map_err(numerical("riemann::build_design_model"))?;
    let c = &design.coeffs;
    let ctrl = solve_controller_kernels(c, &cfg.kernel).map_err(numerical("kernels::solve_controller_kernels"))?;
    let obs = solve_observer_kernels(c, &cfg.kernel).map_err(numerical("kernels::solve_observer_kernels"))?;
    let rc = controller_residual(c, &ctrl);
    let ro = observer_residual(c, &obs);
    let g = ctrl.grid;
    let dir = out_dir(cfg);

    let kpath = dir.join("controller_kernels.csv");
    let mut kf = CsvArtifact::create(&kpath, &["x", "xi", "k11", "k12", "k13", "L11"]).map_err(io_err(&kpath))?;
    let opath = dir.join("observer_kernels.csv");
    let mut of = CsvArtifact::create(&opath, &["x", "xi", "m11", "m21", "m31", "N11"]).map_err(io_err(&opath))?;
    for i in 0..g.n {
        for j in 0..=i {
            let (x, xi) = (g.coord(i), g.coord(j));
            kf.numbers(&[x, xi, ctrl.k[0].get(i, j), ctrl.k[1].get(i, j), ctrl.k[2].get(i, j), ctrl.l11.get(i, j)])
                .map_err(io_err(&kpath))?;
            of.numbers(&[x, xi, obs.m[0].get(i, j), obs.m[1].get(i, j), obs.m[2].get(i, j), obs.n11.get(i, j)])
                .map_err(io_err(&opath))?;
        }
    }
    kf.finish().map_err(io_err(&kpath))?;
    of.finish().map_err(io_err(&opath))?;

    let gpath = dir.join("observer_gains.csv");
    let gains = obs.gains(c.mu);
    let mut gf = CsvArtifact::create(&gpath, &["x", "p1", "p2", "p3", "p_minus"]).map_err(io_err(&gpath))?;
    for i in 0..g.n {
        gf.numbers(&[g.coord(i), gains.p_plus[0][i], gains.p_plus[1][i], gains.p_plus[2][i], gains.p_minus[i]])
            .map_err(io_err(&gpath))?;
    }
    gf.finish().map_err(io_err(&gpath))?;

    let rpath = dir.join("kernel_residuals.csv");
    let rows = [
        ("controller_k_pde", rc.k_pde),
        ("controller_l_pde", rc.l_pde),
        ("controller_diagonal", rc.diagonal),
        ("controller_base", rc.base),
        ("observer_m_pde", ro.m_pde),
        ("observer_n_pde", ro.n_pde),
        ("observer_diagonal", ro.diagonal),
        ("observer_top", ro.top),
    ];
    let mut rf = CsvArtifact::create(&rpath, &["quantity", "sup_residual"]).map_err(io_err(&rpath))?;
    for (name, v) in rows {
        rf.row([name.to_string(), num(v)]).map_err(io_err(&rpath))?;
    }
    rf.finish().map_err(io_err(&rpath))?;

    say(out, format_args!("grid         {} nodes per edge, h = {:.4} m", g.n, g.h))?;
    say(
        out,
        format_args!(
            "controller   {} iterations, last change {:.3e}, sup {:.4e}",
            ctrl.iterations,
            ctrl.change,
            ctrl.sup()
        ),
    )?;
    say(
        out,
        format_args!(
            "observer     {} iterations, last change {:.3e}, sup {:.4e}",
            obs.iterations,
            obs.change,
            obs.sup()
        ),
    )?;
    for (name, v) in rows {
        say(out, format_args!("residual     {name:<20} {v:.4e}"))?;
    }
    say(
        out,
        format_args!("wrote        {}, {}, {}, {}", kpath.display(), opath.display(), gpath.display(), rpath.display()),
    )
}

fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, lin) = analyze(cfg.rho_star, &cfg.params).map_err(numerical("model::analyze"))?;
    require_congested(lin.regime, cfg)?;
    let pipeline = Pipeline::build(&cfg.params, cfg.rho_star, &cfg.kernel).map_err(numerical("pipeline::build"))?;
    let traj = run_scenario(&pipeline, &cfg.sim).map_err(numerical("sim::run_scenario"))?;
    let dir = out_dir(cfg);

    let spath = dir.join("series.csv");
    let mut header = vec!["t", "supnorm", "l2norm", "U"];
    if traj.observer_error.is_some() {
        header.push("observer_error");
    }
    let mut sf = CsvArtifact::create(&spath, &header).map_err(io_err(&spath))?;
    for k in 0..traj.times.len() {
        let mut row = vec![traj.times[k], traj.sup_norm[k], traj.l2_norm[k], traj.control[k]];
        if let Some(e) = &traj.observer_error {
            row.push(e[k]);
        }
        sf.numbers(&row).map_err(io_err(&spath))?;
    }
    sf.finish().map_err(io_err(&spath))?;

    let snap_dir = dir.join("snapshots");
    for (s, f) in traj.snapshots.iter().enumerate() {
        let path = snap_dir.join(format!("snapshot_{s:04}.csv"));
        let mut af = CsvArtifact::create(&path, &["t", "x", "rho1", "v1", "rho2", "v2", "w1", "w2", "w3", "w4"])
            .map_err(io_err(&path))?;
        for k in 0..f.len() {
            af.numbers(&[
                f.time, f.x[k], f.rho1[k], f.v1[k], f.rho2[k], f.v2[k], f.w[0][k], f.w[1][k], f.w[2][k], f.w[3][k],
            ])
            .map_err(io_err(&path))?;
        }
        af.finish().map_err(io_err(&path))?;
    }

    let r = convergence_metrics(&traj, 0.05);
    say(
        out,
        format_args!(
            "scenario     {}  N = {}  dt = {:.4} s  steps = {}",
            scenario_name(traj.scenario),
            cfg.sim.n,
            traj.dt,
            traj.times.len() - 1
        ),
    )?;
    say(out, format_args!("t_F          {:.2} s  2 t_F = {:.2} s", r.t_f, r.t_f2))?;
    say(
        out,
        format_args!(
            "sup norm     initial {:.4e}  final {:.4e}  at 1.1 t_F {:.4}x  at 1.1 (2 t_F) {:.4}x",
            r.initial_sup, r.final_sup, r.ratio_at_t_f, r.ratio_at_t_f2
        ),
    )?;
    match r.time_to_threshold {
        Some(t) => say(out, format_args!("below 5%     from t = {t:.2} s"))?,
        None => say(out, format_args!("below 5%     not reached"))?,
    }
    if let Some(e) = &traj.observer_error {
        say(
            out,
            format_args!(
                "observer     error initial {:.4e}  at 1.1 t_F {:.4e}",
                e[0],
                traj.value_at(e, 1.1 * traj.t_f)
            ),
        )?;
    }
    say(
        out,
        format_args!("wrote        {} and {} snapshots in {}", spath.display(), traj.snapshots.len(), snap_dir.display()),
    )
}
