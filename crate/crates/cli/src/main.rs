use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trihom_cli::config::{NondimSection, RunConfig};
use trihom_cli::output::{self, fmt_f64};
use trihom_cli::pipeline::{self, Scope};
use trihom_cli::CliError;
use trihom_core::NodalGrid;

#[derive(Parser)]
#[command(name = "trihom", version, about = "Periodic homogenization of the cardiac bidomain model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Meso,
    Micro,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and dump label arrays and correctors.
    CellSolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "meso")]
        level: LevelArg,
        /// Relative residual target (overrides conductivity.tol).
        #[arg(long)]
        tol: Option<f64>,
        /// Output directory (default: output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the homogenized tensors and write them as CSV.
    Tensors {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: <output.dir>/tensors.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the homogenized bidomain model.
    MacroRun {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: <output.dir>/macro).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the resolved micro reference.
    MicroRun {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: <output.dir>/micro).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare micro membrane snapshots against macro snapshots.
    Validate {
        #[arg(long)]
        micro: PathBuf,
        #[arg(long = "macro")]
        macro_dir: PathBuf,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        /// Exit with status 4 if the RMS error exceeds this.
        #[arg(long)]
        max_error: Option<f64>,
    },
    /// Print the dimensionless scales for a set of physical parameters.
    Nondim {
        /// TOML file: either the bare parameters or a run config with [nondim].
        #[arg(long)]
        params: PathBuf,
    },
    /// Run every configured stage and write the artifact tree.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(s) = std::env::var("THREADS") else {
        return Ok(());
    };
    let n: usize = s
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("THREADS must be a positive integer, got `{s}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))
}

fn audit(issues: Vec<String>) -> Result<(), CliError> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(issues.join("; ")))
    }
}

fn cell_solve(config: &Path, level: LevelArg, tol: Option<f64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(t) = tol {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Config(format!("--tol must be in (0, 1), got {t}")));
        }
        cfg.conductivity.tol = t;
    }
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let g = pipeline::build_geometries(&cfg)?;
    pipeline::write_geometry(&dir.join("geometry"), &g)?;
    let scope = match level {
        LevelArg::Meso => Scope::Meso,
        LevelArg::Micro => Scope::Micro,
    };
    let passes = pipeline::cell_passes(&cfg, &g, &pipeline::solve_options(&cfg), scope)?;
    pipeline::write_correctors(&dir.join("correctors"), &passes)?;
    println!("level,direction,iterations,residual,load_defect");
    for p in &passes {
        for c in &p.correctors {
            println!(
                "{},{},{},{},{}",
                p.tensor.level.name(),
                c.direction,
                c.iterations,
                fmt_f64(c.residual),
                fmt_f64(p.compatibility[c.direction])
            );
        }
    }
    audit(pipeline::tensor_issues(&passes))
}

fn tensors(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let path = out.unwrap_or_else(|| cfg.output.dir.join("tensors.csv"));
    let g = pipeline::build_geometries(&cfg)?;
    let passes = pipeline::cell_passes(&cfg, &g, &pipeline::solve_options(&cfg), Scope::All)?;
    let text = output::tensors_csv(&passes);
    output::write_text(&path, &text)?;
    print!("{text}");
    audit(pipeline::tensor_issues(&passes))
}

fn macro_run(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.macro_.is_none() {
        return Err(CliError::Config("macro-run needs a [macro] section".into()));
    }
    let dir = out.unwrap_or_else(|| cfg.output.dir.join("macro"));
    let g = pipeline::build_geometries(&cfg)?;
    let passes = if pipeline::needs_cell_passes(&cfg) {
        pipeline::cell_passes(&cfg, &g, &pipeline::solve_options(&cfg), Scope::Meso)?
    } else {
        Vec::new()
    };
    let inputs = pipeline::macro_inputs(&cfg, &g, &passes)?;
    let o = pipeline::run_macro(&cfg, inputs)?;
    pipeline::write_macro(&dir, &o)?;
    let last = o.run.rows.last().expect("initial row");
    println!(
        "steps={} t={} v_max={} activated_fraction={} max_mean_u_e={}",
        last.step,
        fmt_f64(last.t),
        fmt_f64(last.v_max),
        fmt_f64(last.activated_fraction),
        fmt_f64(o.run.max_abs_mean_u_e)
    );
    let mut issues = pipeline::tensor_issues(&passes);
    if o.run.max_abs_mean_u_e > pipeline::MEAN_U_E_LIMIT {
        issues.push(format!("mean(u_e) reached {:e}", o.run.max_abs_mean_u_e));
    }
    audit(issues)
}

fn micro_run(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.micro.is_none() {
        return Err(CliError::Config("micro-run needs a [micro] section".into()));
    }
    let dir = out.unwrap_or_else(|| cfg.output.dir.join("micro"));
    let g = pipeline::build_geometries(&cfg)?;
    let o = pipeline::run_micro(&cfg, &g)?;
    pipeline::write_micro(&dir, &o)?;
    println!(
        "membrane_nodes={} snapshots={} max_iterations={} max_mean_u_e={} max_current_balance={}",
        o.trajectory.positions.len(),
        o.trajectory.snapshots.len(),
        o.max_iterations,
        fmt_f64(o.max_abs_mean_u_e),
        fmt_f64(o.max_current_balance)
    );
    let mut issues = Vec::new();
    if o.max_abs_mean_u_e > pipeline::MEAN_U_E_LIMIT {
        issues.push(format!("mean(u_e) reached {:e}", o.max_abs_mean_u_e));
    }
    if o.max_current_balance > pipeline::CURRENT_BALANCE_LIMIT {
        issues.push(format!("current balance reached {:e}", o.max_current_balance));
    }
    audit(issues)
}

fn validate(micro: &Path, macro_dir: &Path, out: &Path, max_error: Option<f64>) -> Result<(), CliError> {
    let traj = output::read_membrane_dir(micro)?;
    let (lengths, resolution, fields) = output::read_macro_dir(macro_dir)?;
    let grid = NodalGrid { lengths, resolution };
    let report = pipeline::compare(&traj, &grid, &fields)?;
    let text = output::report_csv(None, &report);
    output::write_text(out, &text)?;
    print!("{text}");
    match max_error {
        Some(m) if !(report.combined <= m) => {
            Err(CliError::Validation(format!("rms error {:e} exceeds {m:e}", report.combined)))
        }
        _ => Ok(()),
    }
}

fn nondim(params: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(params)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", params.display())))?;
    let section = match toml::from_str::<NondimSection>(&text) {
        Ok(s) => s,
        Err(bare) => match RunConfig::parse(&text) {
            Ok(RunConfig { nondim: Some(s), .. }) => s,
            Ok(_) => return Err(CliError::Config("config has no [nondim] section".into())),
            Err(_) => return Err(CliError::Config(bare.to_string())),
        },
    };
    let rows = pipeline::nondim_table(&section.params())?;
    print!("{}", pipeline::nondim_csv(&rows));
    Ok(())
}

fn run_pipeline(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let a = pipeline::run_pipeline(&cfg, &dir)?;
    for s in &a.stages {
        println!("stage {:<10} {:>9.3} s", s.name, s.seconds);
    }
    if let Some(r) = &a.validation {
        println!("validation rms error {}", fmt_f64(r.combined));
    }
    println!("artifacts in {}", dir.display());
    audit(a.issues)
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::CellSolve { config, level, tol, out } => cell_solve(&config, level, tol, out),
        Command::Tensors { config, out } => tensors(&config, out),
        Command::MacroRun { config, out } => macro_run(&config, out),
        Command::MicroRun { config, out } => micro_run(&config, out),
        Command::Validate { micro, macro_dir, out, max_error } => validate(&micro, &macro_dir, &out, max_error),
        Command::Nondim { params } => nondim(&params),
        Command::Pipeline { config, out } => run_pipeline(&config, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trihom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
