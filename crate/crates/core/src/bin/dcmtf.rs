use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcmtf::cfrm::ChainStart;
use dcmtf::cli::{
    emit_report, evaluate_labels, exit_code, load_config, load_labels, run, run_sweep, write_plant, ChainSettings,
    ExperimentConfig, Method, RunReport,
};
use dcmtf::synth::PlantSpec;
use dcmtf::{Error, Result};

/// Clustering of entities linked by collections of relational matrices.
#[derive(Parser)]
#[command(name = "dcmtf", version)]
struct Cli {
    /// Worker threads for parallel trials and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config, TOML (`.toml`) or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (a directory for `sweep`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a planted dataset as CSV files plus a ready-to-run config.
    Synth {
        /// Plant spec (JSON or TOML); the four-entity default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run whatever method the config names.
    Run(RunArgs),
    TrainDcmtf(RunArgs),
    RunCfrm(RunArgs),
    /// Single-view spectral clustering baseline.
    Spectral(RunArgs),
    /// Score predicted labels against truth labels (one id per line).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster chains across matrices after fitting.
    Chains {
        #[command(flatten)]
        run: RunArgs,
        /// Start block as `matrix,row_cluster,col_cluster`; repeatable.
        /// Defaults to every matrix's strongest block.
        #[arg(long, value_parser = parse_start)]
        start: Vec<ChainStart>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Run the config's `sweep` section; writes one report per point and
    /// `summary.json` into `--out`.
    Sweep(RunArgs),
}

fn parse_start(s: &str) -> std::result::Result<ChainStart, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad start '{s}'")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [matrix, row_cluster, col_cluster] => Ok(ChainStart { matrix, row_cluster, col_cluster }),
        _ => Err(format!("start '{s}' needs matrix,row_cluster,col_cluster")),
    }
}

fn prepare(args: &RunArgs, method: Option<Method>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = method {
        cfg.method = m;
    }
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    Ok(cfg)
}

fn deliver(report: &RunReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => emit_report(report, p),
        None => {
            let text = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run_one(args: &RunArgs, method: Option<Method>) -> Result<()> {
    let cfg = prepare(args, method)?;
    let report = run(&cfg)?;
    deliver(&report, cfg.output.as_deref())
}

fn read_plant(path: &Path) -> Result<PlantSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|msg| Error::Config(format!("{}: {msg}", path.display())))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { config, seed, out } => {
            let mut spec = match &config {
                Some(p) => read_plant(p)?,
                None => PlantSpec::four_entity(0),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let cfg = write_plant(&spec, &out)?;
            println!("{}", cfg.display());
            Ok(())
        }
        Cmd::Run(a) => run_one(&a, None),
        Cmd::TrainDcmtf(a) => run_one(&a, Some(Method::Dcmtf)),
        Cmd::RunCfrm(a) => run_one(&a, Some(Method::Cfrm)),
        Cmd::Spectral(a) => run_one(&a, Some(Method::SpectralSingle)),
        Cmd::Evaluate { pred, truth, out } => {
            let (p, t) = (load_labels(&pred)?, load_labels(&truth)?);
            let metrics = evaluate_labels(&p, &t)?;
            let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Config(e.to_string()))? + "\n";
            match out {
                Some(o) => fs::write(&o, text).map_err(|e| Error::io(&o, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Cmd::Chains { run: a, start, max_len } => {
            let mut cfg = prepare(&a, None)?;
            cfg.chains = Some(ChainSettings { starts: start, max_len });
            let report = run(&cfg)?;
            deliver(&report, cfg.output.as_deref())
        }
        Cmd::Sweep(a) => {
            let cfg = prepare(&a, None)?;
            let dir = cfg
                .output
                .clone()
                .ok_or_else(|| Error::Config("sweep needs --out <dir> or `output` in the config".into()))?;
            let (_, summary) = run_sweep(&cfg, &dir)?;
            print!("{}", summary.table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already includes the wrapped causes.
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
