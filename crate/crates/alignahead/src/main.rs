use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alignahead::flow::trace_information_flow;
use alignahead::loss::Matching;
use alignahead::run::{
    execute_run, execute_sweep, load_config, Precision, RunError, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "alignahead",
    about = "Online cross-layer knowledge distillation for graph neural networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one configured experiment, once per seed.
    Run {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds (overrides the config's `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Float width: f32 or f64 (overrides the config's `precision`).
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Re-run one config while varying a single axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: depth, beta, lambda, students.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Print the symbolic cross-layer information-flow grid.
    Trace {
        /// Layers per student.
        #[arg(long)]
        depth: usize,
        /// Number of students.
        #[arg(long, default_value_t = 2)]
        students: usize,
        /// alignahead (cross-layer) or one-to-one.
        #[arg(long, default_value = "alignahead")]
        matching: String,
        /// Iterations to simulate.
        #[arg(long)]
        iters: usize,
        /// Also write the grid to <out>/trace.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_matching(s: &str) -> Result<Matching, RunError> {
    match s {
        "alignahead" | "look-ahead" => Ok(Matching::LookAhead),
        "one-to-one" | "identity" | "oc" => Ok(Matching::Identity),
        other => Err(RunError::Config(format!(
            "unknown matching {other:?}, expected alignahead or one-to-one"
        ))),
    }
}

fn resolve_out(from_cli: Option<PathBuf>, from_cfg: &Option<PathBuf>) -> Result<PathBuf, RunError> {
    from_cli
        .or_else(|| from_cfg.clone())
        .ok_or_else(|| RunError::Config("no output directory: set `out` or pass --out".into()))
}

fn real_main(cli: Cli) -> Result<(), RunError> {
    match cli.cmd {
        Cmd::Run { config, out, seeds, precision } => {
            let mut cfg = load_config(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(precision) = precision {
                cfg.precision = precision;
            }
            let out = resolve_out(out, &cfg.out)?;
            let summary = execute_run(&cfg, &out)?;
            println!("metric: {}", summary.metric);
            for s in &summary.per_seed {
                println!("seed {}: {:.4}", s.seed, s.headline);
            }
            println!("mean {:.4}, std {:.4}", summary.mean, summary.std);
            println!("artifacts in {}", out.display());
        }
        Cmd::Sweep { config, axis, values, out, seeds, precision } => {
            let mut cfg = load_config(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(precision) = precision {
                cfg.precision = precision;
            }
            let out = resolve_out(out, &cfg.out)?;
            let sweep = execute_sweep(&cfg, axis, &values, &out)?;
            println!("value,mean,std");
            for row in &sweep.rows {
                println!("{},{},{}", row.value, row.mean, row.std);
            }
            println!("artifacts in {}", out.display());
        }
        Cmd::Trace { depth, students, matching, iters, out } => {
            let matching = parse_matching(&matching)?;
            let trace = trace_information_flow(depth, students, matching, iters);
            let grid = trace.render();
            print!("{grid}");
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join("trace.txt"), grid)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
