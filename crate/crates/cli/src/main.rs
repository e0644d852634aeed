mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sgrisk::config::{Counters, EngineConfig, PhaseTime, RunSummary};
use sgrisk::grid_file::{build_grid_tables, GridTables};
use sgrisk::pnl::{run_nested, run_sparse, RunOutput};
use sgrisk::real_world::scale_moments_by;
use sgrisk::risk::{avar, risk_table, var, wasserstein2, EmpiricalDistribution, RiskRow, REPORT_ALPHAS};
use sgrisk::{Error, Result};

/// Hedged balance-sheet loss distributions by nested Monte Carlo or sparse-grid surfaces.
#[derive(Parser, Debug)]
#[command(name = "sgrisk", version)]
struct Cli {
    /// JSON engine configuration.
    #[arg(long, short, env = "SGRISK_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Worker threads (all cores by default). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v debug, -vv trace). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that replace the corresponding config fields.
#[derive(clap::Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    outer_paths: Option<usize>,
    #[arg(long, global = true)]
    nested_paths: Option<usize>,
    #[arg(long, global = true)]
    rebalance_steps: Option<usize>,
    #[arg(long, global = true)]
    kappa: Option<u32>,
    #[arg(long, global = true)]
    grid_paths: Option<usize>,
    #[arg(long, global = true)]
    box_width: Option<f64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Price the liability on the sparse grid and store the surplus tables.
    BuildGrid {
        /// Target file (default: <output_dir>/grid.sgrt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the hedged PnL distribution.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Grid tables for the sparse mode (default: <output_dir>/grid.sgrt).
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Compare two PnL samples of equal size.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the sparse pipeline under rescaled real-world moments.
    Scenario {
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.95, 1.0, 1.05])]
        factors: Vec<f64>,
        /// Which target moments the factor multiplies.
        #[arg(long, value_enum, default_value_t = Scale::Both)]
        scale: Scale,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Mode {
    Nested,
    Sparse,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Scale {
    Both,
    Mean,
    Covariance,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["info", "debug", "trace"][cli.verbose.min(2) as usize];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("no configuration given (use --config or SGRISK_CONFIG)".into()))?;
    let mut c = EngineConfig::load(path)?;
    let o = &cli.overrides;
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.outer_paths {
        c.outer_paths = v;
    }
    if let Some(v) = o.nested_paths {
        c.nested_paths = v;
    }
    if let Some(v) = o.rebalance_steps {
        c.rebalance_steps = v;
    }
    if let Some(v) = o.kappa {
        c.grid.kappa = v;
    }
    if let Some(v) = o.grid_paths {
        c.grid.paths = v;
    }
    if let Some(v) = o.box_width {
        c.grid.box_width = v;
    }
    if let Some(v) = &o.output_dir {
        c.output_dir = v.clone();
    }
    c.validate()?;
    std::fs::create_dir_all(&c.output_dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", c.output_dir.display())))?;
    Ok(c)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Compare { a, b, out } => compare(a, b, out.as_deref()),
        Command::BuildGrid { out } => build_grid(&load_config(cli)?, out.as_deref()),
        Command::Run { mode, grid, bins } => run(&load_config(cli)?, *mode, grid.as_deref(), *bins),
        Command::Scenario { grid, factors, scale } => scenario(&load_config(cli)?, grid.as_deref(), factors, *scale),
    }
}

fn grid_path(c: &EngineConfig, given: Option<&Path>) -> PathBuf {
    given.map(Path::to_path_buf).unwrap_or_else(|| c.output_dir.join("grid.sgrt"))
}

struct Timer(Vec<PhaseTime>);

impl Timer {
    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{phase}: {seconds:.2}s");
        self.0.push(PhaseTime { phase: phase.to_string(), seconds });
        Ok(out)
    }
}

fn summary(command: &str, c: &EngineConfig, phases: Vec<PhaseTime>, counters: Counters) -> RunSummary {
    RunSummary {
        command: command.to_string(),
        config_hash: c.hash(),
        seed: c.seed,
        phases,
        counters,
        risk: Vec::new(),
        wasserstein: None,
        artifacts: Vec::new(),
    }
}

fn build_grid(c: &EngineConfig, out: Option<&Path>) -> Result<ExitCode> {
    let mut timer = Timer(Vec::new());
    let book = c.book()?;
    let spec = c.grid_spec()?;
    let (tables, inner) = timer.time("grid build", || build_grid_tables(&book, &spec))?;
    let path = grid_path(c, out);
    timer.time("write", || tables.write(&path))?;
    let mut s = summary(
        "build-grid",
        c,
        timer.0,
        Counters { inner_simulations: inner, ..Default::default() },
    );
    s.artifacts.push(path.clone());
    let sp = output::write_summary(&c.output_dir, "build_grid", &mut s)?;
    println!("grid tables: {} ({} nodes, {} inner simulations)", path.display(), tables.grid().len(), inner);
    println!("summary: {}", sp.display());
    Ok(ExitCode::SUCCESS)
}

fn print_risk(rows: &[RiskRow]) {
    println!("{:>8} {:>14} {:>14}", "alpha", "VaR", "AVaR");
    for r in rows {
        println!("{:>8} {:>14.6} {:>14.6}", r.alpha, r.var, r.avar);
    }
}

/// Writes the PnL sample, risk table and histogram of one run.
fn write_run(c: &EngineConfig, name: &str, out: &RunOutput, bins: usize, s: &mut RunSummary) -> Result<()> {
    let (hash, seed) = (c.hash(), c.seed);
    let dist = EmpiricalDistribution::new(out.losses.clone())?;
    s.risk = risk_table(&dist, &c.alphas, c.alpha_convention)?;
    let dir = &c.output_dir;
    let pnl = dir.join(format!("{name}_pnl.csv"));
    output::write_losses(&pnl, &out.losses, &hash, seed)?;
    let risk = dir.join(format!("{name}_risk.csv"));
    output::write_risk(&risk, &s.risk, &hash, seed)?;
    let hist = dir.join(format!("{name}_histogram.csv"));
    output::write_histogram(&hist, &out.losses, bins, &hash, seed)?;
    s.artifacts.extend([pnl, risk, hist]);
    Ok(())
}

fn run(c: &EngineConfig, mode: Mode, grid: Option<&Path>, bins: usize) -> Result<ExitCode> {
    let mut timer = Timer(Vec::new());
    let book = c.book()?;
    let paths = timer.time("outer paths", || c.outer_paths_for(&c.real_world))?;
    let (name, out) = match mode {
        Mode::Nested => ("nested", timer.time("nested run", || run_nested(&book, &paths, c.nested_paths, c.seed))?),
        Mode::Sparse => {
            let path = grid_path(c, grid);
            let tables = timer.time("read grid", || GridTables::read(&path))?;
            ("sparse", timer.time("sparse run", || run_sparse(&book, &tables, &paths))?)
        }
    };
    let counters = Counters {
        inner_simulations: out.inner_simulations,
        clamped_evaluations: out.clamped_evaluations,
        outer_paths: out.losses.len() as u64,
    };
    let mut s = summary(&format!("run --mode {name}"), c, timer.0, counters);
    write_run(c, name, &out, bins, &mut s)?;
    let sp = output::write_summary(&c.output_dir, name, &mut s)?;
    print_risk(&s.risk);
    println!("inner simulations: {}", out.inner_simulations);
    println!("summary: {}", sp.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompareRow {
    alpha: f64,
    var_a: f64,
    var_b: f64,
    var_diff: f64,
    var_rel: f64,
    avar_a: f64,
    avar_b: f64,
    avar_diff: f64,
    avar_rel: f64,
}

#[derive(Serialize)]
struct CompareReport {
    a: PathBuf,
    b: PathBuf,
    samples: usize,
    wasserstein2: f64,
    mean_a: f64,
    mean_b: f64,
    rows: Vec<CompareRow>,
}

/// Relative difference of `a` against `b`; zero when both vanish.
fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b) / b.abs()
    }
}

fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let da = EmpiricalDistribution::new(output::read_losses(a)?)?;
    let db = EmpiricalDistribution::new(output::read_losses(b)?)?;
    let w = wasserstein2(&da, &db)?;
    let mut rows = Vec::new();
    for alpha in REPORT_ALPHAS {
        let (va, vb) = (var(&da, alpha)?, var(&db, alpha)?);
        let (aa, ab) = (avar(&da, alpha)?, avar(&db, alpha)?);
        rows.push(CompareRow {
            alpha,
            var_a: va,
            var_b: vb,
            var_diff: va - vb,
            var_rel: relative(va, vb),
            avar_a: aa,
            avar_b: ab,
            avar_diff: aa - ab,
            avar_rel: relative(aa, ab),
        });
    }
    let report = CompareReport {
        a: a.to_path_buf(),
        b: b.to_path_buf(),
        samples: da.len(),
        wasserstein2: w,
        mean_a: da.mean(),
        mean_b: db.mean(),
        rows,
    };
    if let Some(p) = out {
        output::write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ScenarioRow {
    factor: f64,
    alpha: f64,
    var: f64,
    avar: f64,
}

#[derive(Serialize)]
struct ScenarioResult {
    factor: f64,
    mean_factor: f64,
    cov_factor: f64,
    risk: Vec<RiskRow>,
    inner_simulations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ScenarioSummary<'a> {
    #[serde(flatten)]
    summary: RunSummary,
    scale: Scale,
    scenarios: &'a [ScenarioResult],
}

fn scenario(c: &EngineConfig, grid: Option<&Path>, factors: &[f64], scale: Scale) -> Result<ExitCode> {
    let mut timer = Timer(Vec::new());
    let book = c.book()?;
    let path = grid_path(c, grid);
    let tables = timer.time("read grid", || GridTables::read(&path))?;
    tables.check_compatible(&book)?;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    let mut counters = Counters::default();
    let mut worst: Option<Error> = None;
    for &f in factors {
        let (mf, cf) = match scale {
            Scale::Both => (f, f),
            Scale::Mean => (f, 1.0),
            Scale::Covariance => (1.0, f),
        };
        let attempt = timer.time(&format!("scenario {f}"), || {
            let spec = scale_moments_by(&c.real_world, mf, cf)?;
            let paths = c.outer_paths_for(&spec)?;
            let out = run_sparse(&book, &tables, &paths)?;
            let risk = risk_table(&EmpiricalDistribution::new(out.losses.clone())?, &c.alphas, c.alpha_convention)?;
            Ok((out, risk))
        });
        match attempt {
            Ok((out, risk)) => {
                let pnl = c.output_dir.join(format!("scenario_{f}_pnl.csv"));
                output::write_losses(&pnl, &out.losses, &c.hash(), c.seed)?;
                artifacts.push(pnl);
                counters.inner_simulations += out.inner_simulations;
                counters.clamped_evaluations += out.clamped_evaluations;
                counters.outer_paths += out.losses.len() as u64;
                rows.extend(risk.iter().map(|r| ScenarioRow { factor: f, alpha: r.alpha, var: r.var, avar: r.avar }));
                results.push(ScenarioResult { factor: f, mean_factor: mf, cov_factor: cf, risk, inner_simulations: out.inner_simulations, error: None });
            }
            Err(e) => {
                log::error!("scenario factor {f}: {e}");
                results.push(ScenarioResult { factor: f, mean_factor: mf, cov_factor: cf, risk: Vec::new(), inner_simulations: 0, error: Some(e.to_string()) });
                if worst.as_ref().is_none_or(|w| !w.is_numerical()) {
                    worst = Some(e);
                }
            }
        }
    }
    let table = c.output_dir.join("scenario_risk.csv");
    output::write_table(&table, &rows, &c.hash(), c.seed)?;
    artifacts.push(table);
    let inner = counters.inner_simulations;
    let mut s = summary("scenario", c, timer.0, counters);
    s.artifacts = artifacts;
    let sp = c.output_dir.join("scenario_summary.json");
    s.artifacts.push(sp.clone());
    output::write_json(&sp, &ScenarioSummary { summary: s, scale, scenarios: &results })?;

    print!("{:>8}", "alpha");
    for r in &results {
        print!(" {:>12} {:>12}", format!("VaR x{}", r.factor), format!("AVaR x{}", r.factor));
    }
    println!();
    for (k, alpha) in c.alphas.iter().enumerate() {
        print!("{alpha:>8}");
        for r in &results {
            match r.risk.get(k) {
                Some(row) => print!(" {:>12.6} {:>12.6}", row.var, row.avar),
                None => print!(" {:>12} {:>12}", "-", "-"),
            }
        }
        println!();
    }
    println!("inner simulations: {inner}");
    println!("summary: {}", sp.display());
    Ok(worst.map(|e| exit_code(&e)).unwrap_or(ExitCode::SUCCESS))
}
