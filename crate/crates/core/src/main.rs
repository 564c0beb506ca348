use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use autocurriculum::curriculum::Variant;
use autocurriculum::harness::experiments::world_for;
use autocurriculum::harness::sweep::run_sweep;
use autocurriculum::harness::{calibrate, run_point, ExperimentConfig, RunKind};
use autocurriculum::schedule::{build_weight_table, Ratio, Regime};

#[derive(Parser)]
#[command(name = "autocurriculum", version, about = "Verifier-guided autocurriculum simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run; defaults to the config's list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Directory for run records.
    #[arg(long, env = "AUTOCURRICULUM_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Prompts,
    Key,
}

#[derive(Subcommand)]
enum WorldCommand {
    /// Dump a world's prompts or teacher key as CSV.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "prompts")]
        table: Table,
        /// Only the first N prompts.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Print a weight table as CSV (j, r, beta, alpha, alpha_max).
    Weights {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "1/4")]
        err_star: Ratio,
        #[arg(long, default_value = "1/2")]
        threshold: Ratio,
    },
    #[command(subcommand)]
    World(WorldCommand),
    /// Supervised curriculum with plurality output.
    RunSft(RunArgs),
    /// Supervised curriculum over the stochastic class.
    RunSftStoch(RunArgs),
    /// RL curriculum.
    RunRl(RunArgs),
    /// Smallest i.i.d. NTP pool reaching the target accuracy.
    RunBaselineNtp(RunArgs),
    /// Plain RL fine-tuning on i.i.d. prompts.
    RunBaselineRlft(RunArgs),
    /// Calibrate the sample-size constant for a variant.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store the constant back into the config file.
        #[arg(long)]
        write: bool,
    },
    /// Run the config's sweep grid, appending rows to a CSV file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's curriculum variant.
        #[arg(long)]
        kind: Option<RunKind>,
        /// Defaults to `<out-dir>/sweep-<kind>.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, env = "AUTOCURRICULUM_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(args: &RunArgs, kind: RunKind) -> Result<()> {
    let config = load(&args.config)?;
    let seeds = if args.seeds.is_empty() {
        config.seeds.clone()
    } else {
        args.seeds.clone()
    };
    for seed in seeds {
        let record = run_point(&config, kind, seed)?;
        let path = record.write_to_dir(&args.out_dir)?;
        println!(
            "{kind} seed {seed}: acc {:.4}, {} teacher queries, {} reference generations -> {}",
            record.eval.acc,
            record.training_cost.cot_queries,
            record.training_cost.ref_generations,
            path.display()
        );
    }
    Ok(())
}

fn weights(k: usize, err_star: Ratio, threshold: Ratio) -> Result<()> {
    let table = build_weight_table(k, Regime { err_star, threshold })?;
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    out.write_record(["j", "r", "beta", "alpha", "alpha_max"])?;
    for j in 0..=k {
        for r in 0..=j {
            let (alpha, max) = if j < k {
                (table.alpha[j][r].to_string(), table.alpha_max[j].to_string())
            } else {
                (String::new(), String::new())
            };
            out.write_record([j.to_string(), r.to_string(), table.beta[j][r].to_string(), alpha, max])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn inspect(config: &Path, seed: u64, table: Table, limit: Option<usize>) -> Result<()> {
    let config = load(config)?;
    let world = world_for(&config, seed)?;
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    match table {
        Table::Key => {
            out.write_record(["coordinate", "teacher_bit", "depth_mass"])?;
            let key = world.teacher_model();
            for c in 0..world.dim() {
                out.write_record([c.to_string(), key.bit(c).to_string(), world.depth_mass()[c].to_string()])?;
            }
        }
        Table::Prompts => {
            out.write_record(["prompt", "rho", "depth", "teacher_answer", "covered"])?;
            let n = limit.unwrap_or(usize::MAX).min(world.prompt_count());
            for x in 0..n as u32 {
                out.write_record([
                    x.to_string(),
                    world.rho(x).to_string(),
                    world.depth(x).to_string(),
                    world.correct_answer(x).to_string(),
                    world.is_covered(x).to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Weights { k, err_star, threshold } => weights(k, err_star, threshold)?,
        Command::World(WorldCommand::Inspect {
            config,
            seed,
            table,
            limit,
        }) => inspect(&config, seed, table, limit)?,
        Command::RunSft(a) => run(&a, RunKind::DetSft)?,
        Command::RunSftStoch(a) => run(&a, RunKind::StochSft)?,
        Command::RunRl(a) => run(&a, RunKind::Rl)?,
        Command::RunBaselineNtp(a) => run(&a, RunKind::BaselineNtp)?,
        Command::RunBaselineRlft(a) => run(&a, RunKind::BaselineRlft)?,
        Command::Calibrate {
            config: path,
            variant,
            seed,
            write,
        } => {
            let mut config = load(&path)?;
            let variant = variant.unwrap_or(config.curriculum.variant);
            let report = calibrate(&config, variant, seed)?;
            println!(
                "{variant}: {} prompts reach error {} in {}/{} runs; n_prompt_constant = {}",
                report.prompts_required, report.target_error, report.successes, report.runs, report.n_prompt_constant
            );
            if write {
                config.budget.n_prompt_constant = report.n_prompt_constant;
                std::fs::write(&path, config.to_toml()?)?;
                println!("updated {}", path.display());
            }
        }
        Command::Sweep {
            config,
            kind,
            csv,
            out_dir,
        } => {
            let config = load(&config)?;
            let kind = kind.unwrap_or(config.curriculum.variant.into());
            let csv = csv.unwrap_or_else(|| out_dir.join(format!("sweep-{kind}.csv")));
            let summary = run_sweep(&config, kind, &csv)?;
            println!(
                "{}: {} rows written, {} already present",
                csv.display(),
                summary.written,
                summary.skipped
            );
        }
    }
    std::io::stdout().flush().ok();
    Ok(())
}
