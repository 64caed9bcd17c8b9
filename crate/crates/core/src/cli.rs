//! Command-line interface: `density`, `decompose`, `bounds`, `scan`, and
//! `verify` subcommands. Exit code 0 means all gating checks pass, 1 a
//! violation, 2 a usage or input error.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bounds::FittedConstants;
use crate::density::GridConfig;
use crate::error::{Error, Result};
use crate::family::{materialize, parse_family_spec, FamilySpec};
use crate::functionals::distance_report;
use crate::lab::{
    self, calibrate, decomposition_checks, rows_to_csv, run_scan, verify_suite, ExperimentSpec,
};

#[derive(Parser)]
#[command(
    name = "entclt",
    about = "Density functionals, convolution decompositions, and rate checks \
             for sums of independent random variables",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Number of grid cells.
    #[arg(long, global = true, default_value_t = 1 << 14)]
    grid_points: usize,

    /// Half-width of the symmetric grid window.
    #[arg(long, global = true, default_value_t = 32.0)]
    grid_range: f64,

    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Reserved; all computations are deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fitted-constants file (JSON map).
    #[arg(long, global = true)]
    constants: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a density and report its functional panel.
    Density {
        /// Named standardized family (gaussian, uniform, exponential, ...).
        #[arg(long, conflicts_with = "spec")]
        family: Option<String>,
        /// JSON file with a family spec {"family": ..., "params": ...}.
        #[arg(long)]
        spec: Option<PathBuf>,
    },

    /// Quantile/median splits and the convolution decomposition.
    Decompose {
        /// JSON file: {"family": ...} or a full experiment spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        family: Option<String>,
        /// Number of summands.
        #[arg(long, default_value_t = 16)]
        n_summands: usize,
        /// Number of blocks.
        #[arg(long, default_value_t = 8)]
        blocks: usize,
        #[arg(long, default_value_t = 3)]
        m0: usize,
        /// Quantile level for the single-density split report.
        #[arg(long, default_value_t = 0.5)]
        kappa: f64,
        /// Directory for optional CSV dumps of the split parts.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },

    /// Evaluate the bound-check battery; optionally refit constants.
    Bounds {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        family: Option<String>,
        /// Refit the constants from the calibration families and write them
        /// to the constants file.
        #[arg(long)]
        fit: bool,
    },

    /// Sweep the summand count and emit one row per n.
    Scan {
        #[arg(long, conflicts_with = "spec")]
        family: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated summand counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![16, 32, 64, 128])]
        n: Vec<usize>,
    },

    /// Run the full verification battery from an experiment spec.
    Verify {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        family: Option<String>,
    },
}

pub fn main_with(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let grid = GridConfig::new(
        cli.global.grid_points,
        -cli.global.grid_range,
        cli.global.grid_range,
    );
    let constants = match &cli.global.constants {
        Some(path) if path.exists() => FittedConstants::load(path)?,
        _ => FittedConstants::defaults(),
    };

    match cli.command {
        Command::Density { family, spec } => {
            let fam = resolve_family(family.as_deref(), spec.as_deref().map(PathBuf::from))?;
            let p = materialize(&fam, grid)?;
            let rep = distance_report(&p)?;
            let m = p.moments()?;
            let payload = json!({
                "family": fam,
                "moments": m,
                "report": rep,
            });
            emit(&cli.global, &serde_json::to_string_pretty(&payload)?)?;
            Ok(0)
        }

        Command::Decompose { spec, family, n_summands, blocks, m0, kappa, dump_dir } => {
            let fam = resolve_family(family.as_deref(), spec)?;
            let split = crate::decomposition::quantile_split(&materialize(&fam, grid)?, kappa)?;
            let w = 1.0 / (n_summands as f64).sqrt();
            let summand = crate::family::materialize_scaled(&fam, w, grid)?;
            let summands = vec![summand; n_summands];
            let plan = crate::decomposition::repack(&vec![1.0 / n_summands as f64; n_summands], blocks)?;
            let block_dens =
                crate::decomposition::block_densities(&summands, &plan, grid.lo, grid.hi)?;
            let dec =
                crate::decomposition::convolution_decomposition(&block_dens, m0, grid.lo, grid.hi)?;
            let checks = decomposition_checks(&fam, n_summands, blocks, m0, grid, &constants)?;
            if let Some(dir) = dump_dir {
                fs::create_dir_all(&dir)?;
                dump_density(&dir.join("split_low.csv"), &split.p0)?;
                dump_density(&dir.join("split_high.csv"), &split.p1)?;
                dump_density(&dir.join("modified.csv"), &dec.modified)?;
            }
            let payload = json!({
                "kappa": kappa,
                "quantile_level": split.m_kappa,
                "split_mass_low": split.mass0,
                "blocks": plan,
                "eps": {
                    "fraction": dec.eps_fraction_string(),
                    "value": dec.eps,
                    "tail_bound": dec.eps_tail_bound(),
                },
                "checks": checks,
            });
            emit(&cli.global, &serde_json::to_string_pretty(&payload)?)?;
            let ok = checks.iter().filter(|c| c.fitted_constant.is_none()).all(|c| c.passed);
            Ok(if ok { 0 } else { 1 })
        }

        Command::Bounds { spec, family, fit } => {
            if fit {
                let families = calibration_families();
                let fitted = calibrate(&families, &[16, 32, 64, 128], grid)?;
                let path = cli
                    .global
                    .constants
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("constants.json"));
                fitted.save(&path)?;
                eprintln!("wrote fitted constants to {}", path.display());
                emit(&cli.global, &serde_json::to_string_pretty(&fitted)?)?;
                return Ok(0);
            }
            let exp = resolve_experiment(family.as_deref(), spec, vec![16, 32, 64])?;
            let report = verify_suite(&exp, &constants)?;
            emit(&cli.global, &serde_json::to_string_pretty(&report.checks)?)?;
            Ok(if report.all_parameter_free_passed { 0 } else { 1 })
        }

        Command::Scan { family, spec, n } => {
            let exp = resolve_experiment(family.as_deref(), spec, n)?;
            let rows = run_scan(&exp)?;
            match cli.global.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    rows_to_csv(&rows, &mut buf)?;
                    emit(&cli.global, std::str::from_utf8(&buf).unwrap())?;
                }
                Format::Json => emit(&cli.global, &serde_json::to_string_pretty(&rows)?)?,
            }
            Ok(0)
        }

        Command::Verify { spec, family } => {
            let exp = resolve_experiment(family.as_deref(), spec, vec![16, 32, 64])?;
            let report = verify_suite(&exp, &constants)?;
            emit(&cli.global, &serde_json::to_string_pretty(&report)?)?;
            Ok(if report.all_parameter_free_passed { 0 } else { 1 })
        }
    }
}

fn calibration_families() -> Vec<(&'static str, FamilySpec)> {
    vec![
        ("uniform", FamilySpec::uniform_std()),
        ("exponential", FamilySpec::exponential_std()),
    ]
}

fn resolve_family(name: Option<&str>, spec: Option<PathBuf>) -> Result<FamilySpec> {
    match (name, spec) {
        (Some(n), _) => FamilySpec::by_name(n),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            // allow either a bare family spec or an experiment spec holding one
            if v.get("family").is_some() {
                parse_family_spec(&v)
            } else if let Some(s) = v.pointer("/summands/iid/family") {
                parse_family_spec(s)
            } else {
                Err(Error::UnknownFamily("<spec file carries no family>".into()))
            }
        }
        (None, None) => Err(Error::UnknownFamily(
            "pass --family NAME or --spec FILE".into(),
        )),
    }
}

fn resolve_experiment(
    name: Option<&str>,
    spec: Option<PathBuf>,
    schedule: Vec<usize>,
) -> Result<ExperimentSpec> {
    match (name, spec) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if v.get("summands").is_some() {
                Ok(serde_json::from_value(v)?)
            } else {
                // bare family spec file
                let fam = parse_family_spec(&v)?;
                Ok(ExperimentSpec::iid(fam, schedule))
            }
        }
        (Some(n), None) => Ok(ExperimentSpec::iid(FamilySpec::by_name(n)?, schedule)),
        (None, None) => Err(Error::UnknownFamily(
            "pass --family NAME or --spec FILE".into(),
        )),
    }
}

fn dump_density(path: &PathBuf, p: &crate::density::GridDensity) -> Result<()> {
    let mut out = String::from("x,p\n");
    for (i, v) in p.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", p.x(i), v));
    }
    fs::write(path, out)?;
    Ok(())
}

fn emit(opts: &GlobalOpts, text: &str) -> Result<()> {
    match &opts.out {
        Some(path) => {
            fs::write(path, text.as_bytes())?;
            if !text.ends_with('\n') {
                // keep files newline-terminated
                fs::OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
            }
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

use std::io::Write as _;

pub use lab::VerifyReport;
