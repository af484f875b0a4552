use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpf_core::harness::config::{AssocMode, Oracle, ScenarioConfig, ScenarioKind};
use fpf_core::harness::output::fmt_f64;
use fpf_core::harness::plot::{render_svg, Table};
use fpf_core::harness::{
    coalescence_metric, compute_rmse, emit_outputs, run_batch, run_scenario, scenarios, RunRecord,
};
use fpf_core::{verify, Error, Result};

#[derive(Parser)]
#[command(name = "fpf", version, about = "Feedback particle filters with data association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write run.csv, config.echo.json and figure data.
    Run(RunArgs),
    /// Render a run.csv as an SVG line plot.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite.
    Verify,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON file or bundled name (pda-clutter, jpda-two-target, linear-1d).
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// sde, bayes or fixed.
    #[arg(long = "assoc-mode")]
    assoc_mode: Option<String>,
    /// linear, integral-1d or constant-approx.
    #[arg(long)]
    gain: Option<String>,
    /// Replaces the configured oracles; repeat or separate with commas.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    oracle: Vec<String>,
    /// Run k consecutive seeds starting at --seed, one subdirectory each.
    #[arg(long)]
    batch: Option<usize>,
}

fn resolve(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut cfg = scenarios::load(&args.scenario)?;
    cfg.seed = args.seed;
    if let Some(n) = args.particles {
        cfg.particles = n;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(m) = &args.assoc_mode {
        cfg.association = m.parse::<AssocMode>()?;
    }
    if let Some(g) = &args.gain {
        cfg.gain = g.parse()?;
    }
    if !args.oracle.is_empty() {
        cfg.oracles = args.oracle.iter().map(|o| o.parse::<Oracle>()).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One summary line per run: RMSE for single targets, the coalescence
/// metric for two.
fn summary(records: &[RunRecord]) -> Result<String> {
    let Some(first) = records.first() else {
        return Ok(String::new());
    };
    let two = first.config.kind == ScenarioKind::JpdaTwoTarget;
    let mut out = String::from(if two {
        "seed,min_distance,identity_correct\n"
    } else {
        "seed,rmse\n"
    });
    for r in records {
        if two {
            let c = coalescence_metric(r);
            let _ = writeln!(
                out,
                "{},{},{}",
                r.config.seed,
                fmt_f64(c.min_distance),
                c.identity_correct
            );
        } else {
            let t = r.config.horizon;
            let lo = if r.config.kind == ScenarioKind::PdaClutter {
                0.2f64.min(t)
            } else {
                0.0
            };
            let _ = writeln!(out, "{},{}", r.config.seed, fmt_f64(compute_rmse(r, (lo, t), 0)?));
        }
    }
    Ok(out)
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    match args.batch {
        None => {
            let rec = run_scenario(&cfg)?;
            for p in emit_outputs(&rec, &args.out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Some(k) => {
            if k == 0 {
                return Err(Error::Config("--batch must be at least 1".into()));
            }
            let recs = run_batch(&cfg, k)?;
            for r in &recs {
                emit_outputs(r, &args.out.join(format!("seed_{}", r.config.seed)))?;
            }
            let path = args.out.join("summary.csv");
            std::fs::write(&path, summary(&recs)?).map_err(|e| io(&path, e))?;
            log::info!("wrote {} runs and {}", recs.len(), path.display());
        }
    }
    Ok(())
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn plot(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| io(input, e))?;
    let svg = render_svg(&Table::parse(&text)?)?;
    std::fs::write(out, svg).map_err(|e| io(out, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Plot { input, out } => plot(input, out),
        Command::Verify => {
            let reports = verify::run_all();
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed) {
                Ok(())
            } else {
                return ExitCode::from(1);
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
