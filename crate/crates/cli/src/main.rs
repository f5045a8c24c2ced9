use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lockin_cli::{
    ingest, read_exposure, run_pipeline, write_artifacts, write_world, CliError, Overrides, Result, RunConfig, Scope,
};
use lockin_dgp::{generate_world, DgpConfig};

/// Mortgage lock-in exposure pipeline.
///
/// Exit codes: 0 success, 2 validation or config failure, 3 estimation
/// failure, 1 anything else. The output directory defaults to
/// $LOCKIN_OUT_DIR when neither --out nor `run.output_dir` is set.
#[derive(Debug, Parser)]
#[command(name = "lockin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the config and every input file; print row/column counts.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
        /// Also check an exposure file for the mpw = p_new - wop identity.
        #[arg(long)]
        exposure: Option<PathBuf>,
    },
    /// Build exposures (and the instrument, if configured).
    Wedge(RunArgs),
    /// Fit every configured model.
    Estimate(RunArgs),
    /// Fit the 2SLS models only.
    Iv(RunArgs),
    /// Run the permutation placebo.
    Placebo(RunArgs),
    /// Run the full pipeline and write summary.txt.
    #[command(alias = "run")]
    Report(RunArgs),
    /// Offset ratio e_bar * theta / |beta|.
    Offset {
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, default_value_t = lockin_core::DEFAULT_E_BAR)]
        e_bar: f64,
    },
    /// Synthetic worlds.
    Dgp {
        #[command(subcommand)]
        command: DgpCommand,
    },
}

#[derive(Debug, Subcommand)]
enum DgpCommand {
    /// Write a synthetic world as CSV inputs plus lockin.toml.
    Generate {
        #[arg(short, long)]
        out: PathBuf,
        /// TOML file of world parameters; unset keys keep their defaults.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides `run.output_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated top-K levels.
    #[arg(long, value_delimiter = ',')]
    top_k: Option<Vec<usize>>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    post_start: Option<i32>,
    #[arg(long)]
    reference_year: Option<i32>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.out.clone(),
            replications: self.replications,
            seed: self.seed,
            top_k: self.top_k.clone(),
            penalty: self.penalty,
            post_start: self.post_start,
            reference_year: self.reference_year,
        }
    }
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs, scope: Scope) -> Result<()> {
    let cfg = load(&args.config, &args.overrides())?;
    let tables = ingest(&cfg.inputs)?;
    for s in &tables.summaries {
        println!("{s}");
    }
    let out = run_pipeline(&cfg, &tables, scope)?;
    let files = out.files(scope, &cfg);
    let dir = cfg.output_dir();
    write_artifacts(&dir, &files)?;
    if scope == Scope::Report {
        print!("{}", out.summary_text(&cfg));
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { config, exposure } => {
            let cfg = load(&config, &Overrides::default())?;
            let tables = ingest(&cfg.inputs)?;
            for s in &tables.summaries {
                println!("{s}");
            }
            if let Some(p) = exposure {
                let (_, s) = read_exposure(&p)?;
                println!("{s}");
            }
            println!("ok");
            Ok(())
        }
        Command::Wedge(a) => run(&a, Scope::Wedge),
        Command::Estimate(a) => run(&a, Scope::Estimate),
        Command::Iv(a) => run(&a, Scope::Iv),
        Command::Placebo(a) => run(&a, Scope::Placebo),
        Command::Report(a) => run(&a, Scope::Report),
        Command::Offset { beta, theta, e_bar } => {
            let r = lockin_core::offset_ratio(beta, theta, e_bar).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{}", lockin_cli::format::sig10(r));
            Ok(())
        }
        Command::Dgp { command: DgpCommand::Generate { out, config, seed } } => {
            let mut dgp = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str::<DgpConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
                None => DgpConfig::default(),
            };
            if let Some(s) = seed {
                dgp.master_seed = s;
            }
            let world = generate_world(&dgp).map_err(|e| CliError::Config(e.to_string()))?;
            let names = write_world(&world, &out)?;
            println!("wrote {} to {}", names.join(", "), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
