use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sage_core::data::save_dataset;
use sage_core::datagen::{generate, save_truth, scenarios, ScenarioConfig};
use sage_core::eval::{run_ablation, AblationSpec};
use sage_core::pipeline::{output_dir, run, run_stage, PipelineConfig, RunManifest, Stage};
use sage_core::Error;

#[derive(Parser)]
#[command(
    name = "sage",
    version,
    about = "Harvest confident negatives from an unlabeled population"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace every seed in the config or scenario.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    S1,
    S2,
    S3,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its truth sidecar.
    Gen {
        /// Scenario config (JSON).
        #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
        scenario: Option<PathBuf>,
        /// Built-in scenario instead of a file.
        #[arg(long, value_enum)]
        builtin: Option<Builtin>,
        /// Population size for a built-in scenario.
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        /// Seed for a built-in scenario.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run every stage.
    Run,
    /// Run the ablation arms.
    Ablate {
        /// Ablation spec (JSON): scenario, evaluation seed, arms.
        #[arg(long)]
        arms: PathBuf,
    },
    /// Standardize, stratify and draw the sample.
    Stratify,
    /// Fit gates and calibrate thresholds on a stratified sample.
    Calibrate,
    /// Harvest and export the training set with calibrated gates.
    Harvest,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.global.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Usage(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { .. } => 2,
        e if e.is_validation() => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen {
            scenario,
            builtin,
            n,
            seed,
        } => {
            let mut sc = match (scenario, builtin) {
                (Some(path), _) => ScenarioConfig::load(path)?,
                (None, Some(b)) => {
                    let name = match b {
                        Builtin::S1 => "s1",
                        Builtin::S2 => "s2",
                        Builtin::S3 => "s3",
                    };
                    scenarios::by_name(name, *n, *seed).expect("built-in scenario")
                }
                (None, None) => return Err(Failure::Usage("pass --scenario or --builtin".into())),
            };
            if let Some(s) = g.seed_override {
                sc.seed = s;
            }
            let out = g
                .out
                .as_deref()
                .ok_or_else(|| Failure::Usage("gen needs --out".into()))?;
            cmd_gen(&sc, out)
        }
        Command::Run => {
            let (cfg, out) = pipeline_config(g)?;
            let m = run(&cfg, &out)?;
            report(&m, &out);
            Ok(())
        }
        Command::Stratify => stage(g, Stage::Stratify),
        Command::Calibrate => stage(g, Stage::Calibrate),
        Command::Harvest => stage(g, Stage::Harvest),
        Command::Ablate { arms } => {
            let (cfg, out) = pipeline_config(g)?;
            let mut spec = AblationSpec::load(arms)?;
            if let Some(s) = g.seed_override {
                spec.scenario.seed = s;
            }
            let results = run_ablation(&cfg, &spec)?;
            results.write(&out)?;
            print!("{}", results.results_csv());
            Ok(())
        }
    }
}

fn cmd_gen(sc: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    let g = generate(sc)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_dataset(&g.dataset, out.join("dataset.csv"))?;
    save_truth(&g.truth, out.join("truth.csv"))?;
    println!("wrote {} rows to {}", g.dataset.len(), out.display());
    Ok(())
}

fn pipeline_config(g: &Global) -> Result<(PipelineConfig, PathBuf), Failure> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = g.seed_override {
        cfg.override_seeds(s);
    }
    let out = output_dir(&cfg, g.out.as_deref())?;
    Ok((cfg, out))
}

fn stage(g: &Global, stage: Stage) -> Result<(), Failure> {
    let (cfg, out) = pipeline_config(g)?;
    let m = run_stage(&cfg, &out, stage)?;
    report(&m, &out);
    Ok(())
}

fn report(m: &RunManifest, out: &Path) {
    println!("config digest {}", m.config_digest);
    for s in &m.stages {
        println!("  {:<10} {:?}", s.stage, s.status);
    }
    if let Some(sum) = &m.summary {
        println!(
            "sampled {} harvested {} training rows {}",
            sum.sampled, sum.harvested, sum.training_rows
        );
        if let Some(c) = sum.test_contamination {
            println!("test contamination {c:.4} (max {})", sum.max_contamination);
        }
    }
    println!("artifacts in {}", out.display());
}
