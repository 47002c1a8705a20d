//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O failure,
//! 4 overflow detected, 5 transform self-check failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    convergence_study, run_diagnostics, DiagnosticsReport, DiagnosticsRequest, ErrorRow,
    ErrorTable, McConfig, DEFAULT_CHUNK_SIZE,
};
use crate::brownian::{generate_increments, PathKey};
use crate::model::{ProblemDoc, SdeProblem};
use crate::schemes::{simulate_tamed_em, simulate_transformed_tamed_em};
use crate::transform::{transform_selfcheck, TransformG, TransformedCoefficients};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_OVERFLOW: i32 = 4;
pub const EXIT_SELFCHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "irrsde", version, about = "Tamed Euler-Maruyama studies for SDEs with discontinuous, superlinear drift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one simulated path as CSV (t, x[, z, g_of_x]).
    Simulate(RunArgs),
    /// Strong-error table over several step sizes and the fitted order.
    Converge(RunArgs),
    /// Moment, increment, occupation-time and crossing estimates.
    Diagnose(RunArgs),
    /// Build the discontinuity-removing transform and run its self-check.
    CheckTransform(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Problem and run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Comma-separated grid levels; level l uses base_steps * 2^l steps.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    #[arg(long)]
    pub ref_level: Option<u32>,
    /// Single grid level for simulate/diagnose.
    #[arg(long)]
    pub level: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, env = "IRRSDE_THREADS")]
    pub threads: Option<usize>,
    /// Also simulate the transformed equation (simulate only).
    #[arg(long)]
    pub with_transform: bool,
    /// Replace the Monte Carlo study by an exact power law (converge only).
    #[arg(long)]
    pub selftest: bool,
}

/// Configuration file: the problem document plus optional run parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub problem: ProblemDoc,
    pub levels: Option<Vec<u32>>,
    pub ref_level: Option<u32>,
    pub level: Option<u32>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub p: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    /// 0-based breakpoint indices for occupation estimates.
    pub occupation_breakpoints: Option<Vec<usize>>,
    pub crossing: Option<bool>,
    pub chunk_size: Option<usize>,
    pub base_steps: Option<usize>,
    pub path_index: Option<u64>,
    pub format: Option<Format>,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: SdeProblem,
    pub levels: Vec<u32>,
    pub ref_level: u32,
    pub level: u32,
    pub mc: McConfig,
    pub moment_orders: Vec<f64>,
    pub eps: Vec<f64>,
    pub occupation_breakpoints: Option<Vec<usize>>,
    pub crossing: Option<bool>,
    pub path_index: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub with_transform: bool,
    pub selftest: bool,
}

const DEFAULT_LEVELS: [u32; 7] = [4, 5, 6, 7, 8, 9, 10];
const DEFAULT_LEVEL: u32 = 6;
const DEFAULT_PATHS: usize = 1000;

/// Command failure, mapped to a process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

impl RunConfig {
    pub fn resolve(file: ConfigFile, args: &RunArgs) -> Result<Self, String> {
        let problem = file.problem.to_problem().map_err(|e| e.to_string())?;
        let levels = args
            .levels
            .clone()
            .or(file.levels)
            .unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
        if levels.is_empty() {
            return Err("levels must not be empty".into());
        }
        let max_level = *levels.iter().max().expect("nonempty");
        let ref_level = args.ref_level.or(file.ref_level).unwrap_or(max_level + 3);
        if ref_level <= max_level + 2 {
            return Err(format!(
                "ref_level {ref_level} must exceed the largest level {max_level} by at least 3"
            ));
        }
        let n_paths = args.paths.or(file.paths).unwrap_or(DEFAULT_PATHS);
        if n_paths == 0 {
            return Err("paths must be at least 1".into());
        }
        let chunk_size = file.chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE);
        let base_steps = file.base_steps.unwrap_or(1);
        if chunk_size == 0 || base_steps == 0 {
            return Err("chunk_size and base_steps must be at least 1".into());
        }
        let mc = McConfig::new(n_paths, args.seed.or(file.seed).unwrap_or(0))
            .with_chunk_size(chunk_size)
            .with_base_steps(base_steps);
        Ok(Self {
            problem,
            levels,
            ref_level,
            level: args.level.or(file.level).unwrap_or(DEFAULT_LEVEL),
            mc,
            moment_orders: file.p.unwrap_or_else(|| vec![2.0, 4.0]),
            eps: file.eps.unwrap_or_else(|| vec![0.1]),
            occupation_breakpoints: file.occupation_breakpoints,
            crossing: file.crossing,
            path_index: file.path_index.unwrap_or(0),
            out: args.out.clone(),
            format: args.format.or(file.format).unwrap_or(Format::Csv),
            with_transform: args.with_transform,
            selftest: args.selftest,
        })
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", args.config.display())))?;
    let file: ConfigFile = serde_json::from_str(&text).map_err(config_err)?;
    RunConfig::resolve(file, args).map_err(Failure::Config)
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_output(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, body)
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| Failure::Io(e.to_string())),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn run(cli: Cli) -> i32 {
    let (args, cmd): (&RunArgs, fn(&RunConfig) -> Result<i32, Failure>) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Converge(a) => (a, cmd_converge),
        Command::Diagnose(a) => (a, cmd_diagnose),
        Command::CheckTransform(a) => (a, cmd_check_transform),
    };
    let outcome = load_config(args).and_then(|config| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = args.threads {
            pool = pool.num_threads(n);
        }
        let pool = pool
            .build()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
        pool.install(|| cmd(&config))
    });
    match outcome {
        Ok(code) => code,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("irrsde: configuration error: {m}"),
                Failure::Io(m) => eprintln!("irrsde: I/O error: {m}"),
            }
            f.code()
        }
    }
}

pub fn cmd_simulate(config: &RunConfig) -> Result<i32, Failure> {
    let problem = &config.problem;
    let key = PathKey::new(config.mc.master_seed, config.path_index);
    let increments =
        generate_increments(key, config.level, config.mc.base_steps, problem.horizon()).map_err(config_err)?;
    let x = simulate_tamed_em(problem, &increments).map_err(config_err)?;
    let transformed = if config.with_transform {
        let g = TransformG::build(problem).map_err(config_err)?;
        let tc = TransformedCoefficients::new(problem, &g);
        let z = simulate_transformed_tamed_em(&tc, g.eval(problem.x0()), &increments).map_err(config_err)?;
        let gx: Vec<f64> = x.values.iter().map(|&v| g.eval(v)).collect();
        Some((z.values, gx))
    } else {
        None
    };
    let times: Vec<f64> = (0..x.values.len()).map(|j| j as f64 * x.delta).collect();
    let body = match config.format {
        Format::Csv => {
            let mut s = String::from(if transformed.is_some() { "t,x,z,g_of_x\n" } else { "t,x\n" });
            for (j, t) in times.iter().enumerate() {
                write!(s, "{},{}", fmt_f64(*t), fmt_f64(x.values[j])).unwrap();
                if let Some((z, gx)) = &transformed {
                    write!(s, ",{},{}", fmt_f64(z[j]), fmt_f64(gx[j])).unwrap();
                }
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let mut doc = json!({ "delta": x.delta, "overflowed": x.overflowed, "t": times, "x": x.values });
            if let Some((z, gx)) = &transformed {
                doc["z"] = json!(z);
                doc["g_of_x"] = json!(gx);
            }
            to_json(&doc)
        }
    };
    write_output(config.out.as_deref(), &body)?;
    Ok(EXIT_OK)
}

fn selftest_table(config: &RunConfig) -> Result<ErrorTable, Failure> {
    let mut levels = config.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let rows = levels
        .iter()
        .map(|&l| {
            let delta = config.mc.delta(config.problem.horizon(), l);
            ErrorRow {
                delta,
                error: delta.sqrt(),
                std_error: 0.0,
                n_paths: config.mc.n_paths,
                overflowed_paths: 0,
            }
        })
        .collect();
    ErrorTable::from_rows(rows).map_err(config_err)
}

pub fn error_table_csv(table: &ErrorTable) -> String {
    let mut s = String::from("delta,error,stderr,n_paths\n");
    for r in &table.rows {
        writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(r.delta),
            fmt_f64(r.error),
            fmt_f64(r.std_error),
            r.n_paths
        )
        .unwrap();
    }
    s
}

fn table_metadata(table: &ErrorTable, config: &RunConfig) -> serde_json::Value {
    json!({
        "slope": table.fitted_slope,
        "intercept": table.fitted_intercept,
        "r_squared": table.r_squared,
        "prefactor": table.prefactor(),
        "ref_level": config.ref_level,
        "seed": config.mc.master_seed,
        "n_paths": config.mc.n_paths,
        "overflowed_paths": table.rows.iter().map(|r| r.overflowed_paths).collect::<Vec<_>>(),
        "selftest": config.selftest,
    })
}

pub fn cmd_converge(config: &RunConfig) -> Result<i32, Failure> {
    let table = if config.selftest {
        selftest_table(config)?
    } else {
        convergence_study(&config.problem, &config.levels, config.ref_level, &config.mc)
            .map_err(config_err)?
    };
    let meta = table_metadata(&table, config);
    match config.format {
        Format::Csv => {
            write_output(config.out.as_deref(), &error_table_csv(&table))?;
            match &config.out {
                Some(path) => write_output(Some(&sidecar(path)), &to_json(&meta))?,
                None => eprint!("{}", to_json(&meta)),
            }
        }
        Format::Json => {
            let doc = json!({ "rows": table.rows, "metadata": meta });
            write_output(config.out.as_deref(), &to_json(&doc))?;
        }
    }
    Ok(if table.any_overflow() { EXIT_OVERFLOW } else { EXIT_OK })
}

pub fn diagnostics_csv(report: &DiagnosticsReport) -> String {
    let mut s = String::from("quantity,k,parameter,delta,estimate,stderr,n_paths\n");
    let d = fmt_f64(report.delta);
    let n = report.n_paths;
    for m in &report.moment_sup {
        writeln!(s, "moment_sup,,{},{d},{},{},{n}", fmt_f64(m.p), fmt_f64(m.estimate), fmt_f64(m.std_error)).unwrap();
    }
    for m in &report.increment {
        writeln!(s, "increment,,{},{d},{},{},{n}", fmt_f64(m.p), fmt_f64(m.estimate), fmt_f64(m.std_error)).unwrap();
    }
    for o in &report.occupation {
        writeln!(s, "occupation,{},{},{d},{},{},{n}", o.k, fmt_f64(o.eps), fmt_f64(o.estimate), fmt_f64(o.std_error)).unwrap();
    }
    if let Some(c) = &report.crossing {
        writeln!(s, "crossing,,,{d},{},{},{n}", fmt_f64(c.estimate), fmt_f64(c.std_error)).unwrap();
    }
    s
}

pub fn cmd_diagnose(config: &RunConfig) -> Result<i32, Failure> {
    let m = config.problem.num_breakpoints();
    let crossing = match config.crossing {
        Some(true) if m == 0 => {
            return Err(Failure::Config(
                "crossing statistic requested for a drift without breakpoints".into(),
            ))
        }
        Some(c) => c,
        None => m > 0,
    };
    let request = DiagnosticsRequest {
        level: config.level,
        moment_orders: config.moment_orders.clone(),
        occupation_radii: config.eps.clone(),
        breakpoints: config.occupation_breakpoints.clone(),
        crossing,
    };
    let report = run_diagnostics(&config.problem, &request, &config.mc).map_err(config_err)?;
    let body = match config.format {
        Format::Csv => diagnostics_csv(&report),
        Format::Json => to_json(&report),
    };
    write_output(config.out.as_deref(), &body)?;
    let overflow = report.moment_sup.iter().any(|m| m.overflow_fraction > 0.0);
    Ok(if overflow { EXIT_OVERFLOW } else { EXIT_OK })
}

pub fn cmd_check_transform(config: &RunConfig) -> Result<i32, Failure> {
    let g = TransformG::build(&config.problem).map_err(config_err)?;
    let report = transform_selfcheck(&config.problem, &g);
    write_output(config.out.as_deref(), &to_json(&report))?;
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_SELFCHECK })
}
