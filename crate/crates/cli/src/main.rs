//! Command-line frontend: baseline simulations, agent training and
//! evaluation, convergence-bound sweeps, and the quick oracle self-test.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coexsim::harness::{
    bounds_sweep, run_plan, run_plan_with_checkpoint, save_checkpoint, selftest, summarize,
    train_agent, write_results, write_training_curve, BoundDefaults, BoundRegime, ExperimentMode,
    ExperimentPlan, Sweep,
};
use coexsim::scenario::{desk_scenario, load_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "coexsim",
    about = "Simulates URLLC / distributed-learning coexistence and trains the device-selection agent",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a baseline or evaluation mode across seeds and emit CSV results.
    Simulate(SimulateArgs),
    /// Train the device-selection agent and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint greedily across seeds.
    Evaluate(EvaluateArgs),
    /// Print convergence-bound calculator sweeps as CSV.
    Bounds(BoundsArgs),
    /// Run the built-in oracle checks; exits nonzero on any failure.
    Selftest,
    /// Print the built-in desk-scale scenario as JSON (a config template).
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SingleUrllc,
    MixedServ,
    Slicing,
    AgentEval,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Scenario file (JSON); the built-in desk scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed range `a..b` (half open) or a single seed.
    #[arg(long, default_value = "0..1")]
    seeds: String,
    /// Output directory for CSV results; stdout summary only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Selected devices per iteration (mixed-serv and slicing modes).
    #[arg(long)]
    m: Option<usize>,
    /// Simulated duration in seconds (single-urllc mode).
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Trained checkpoint (agent-eval mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Training seed; defaults to the scenario's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "0..1")]
    seeds: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// 1 = strongly convex, 2 = non-convex, 3 = federated proportionality.
    #[arg(long)]
    regime: u8,
    /// Sweep spec, e.g. `n=1:50:1` or `epsilon=0.05:0.5:0.05`.
    #[arg(long)]
    sweep: String,
    #[arg(long, default_value_t = 15.0)]
    n: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    w_a: f64,
    #[arg(long, default_value_t = 0.05)]
    z_a: f64,
    #[arg(long, default_value_t = 2.0)]
    base: f64,
    #[arg(long, default_value_t = 10.0)]
    w_b: f64,
    #[arg(long, default_value_t = 0.05)]
    z_b: f64,
    #[arg(long, default_value_t = 1.0)]
    local_epochs: f64,
    #[arg(long, default_value_t = 1.0)]
    g2: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 50.0)]
    device_count: f64,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().context("bad seed range start")?;
        let b: u64 = b.trim().parse().context("bad seed range end")?;
        if b <= a {
            bail!("seed range `{text}` is empty");
        }
        Ok((a..b).collect())
    } else {
        Ok(vec![text.trim().parse().context("bad seed")?])
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => load_scenario(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(desk_scenario(0)),
    }
}

fn print_summary(results: &coexsim::harness::ResultSet) {
    let summary = summarize(results);
    println!("iterations recorded: {}", results.iterations_recorded);
    println!("availability samples: {}", results.availability.len());
    if let Some([min, q1, med, q3, max]) = summary.delay_five_number {
        println!("training delay s: min {min:.4} q1 {q1:.4} median {med:.4} q3 {q3:.4} max {max:.4}");
    }
    if !summary.m_pmf.is_empty() {
        let pmf: Vec<String> =
            summary.m_pmf.iter().map(|(m, p)| format!("{m}:{p:.3}")).collect();
        println!("m PMF: {}", pmf.join(" "));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args.config)?;
            let seeds = parse_seeds(&args.seeds)?;
            let mode = match args.mode {
                Mode::SingleUrllc => ExperimentMode::SingleUrllc { duration_s: args.duration },
                Mode::MixedServ => ExperimentMode::MixedServ {
                    m: args.m.context("--m is required for mixed-serv")?,
                },
                Mode::Slicing => ExperimentMode::Slicing {
                    m: args.m.context("--m is required for slicing")?,
                },
                Mode::AgentEval => ExperimentMode::AgentEval,
            };
            let plan = ExperimentPlan { mode, seeds, out_dir: args.out.clone() };
            let results = match plan.mode {
                ExperimentMode::AgentEval => {
                    let ckpt = args.checkpoint.context("--checkpoint is required for agent-eval")?;
                    run_plan_with_checkpoint(&plan, &cfg, &ckpt)?
                }
                _ => run_plan(&plan, &cfg)?,
            };
            write_results(&plan, &cfg, &results)?;
            print_summary(&results);
            Ok(())
        }
        Command::Train(args) => {
            let cfg = load_config(&args.config)?;
            let seed = args.seed.unwrap_or(cfg.rng_seed);
            std::fs::create_dir_all(&args.out)?;
            let (learner, curve) = train_agent(&cfg, seed, args.episodes);
            save_checkpoint(&args.out.join("checkpoint.json"), &learner)?;
            write_training_curve(&args.out.join("training_curve.csv"), &curve)?;
            if let Some(last) = curve.last() {
                println!(
                    "trained {} episodes ({} iterations), last mean reward {:.4}, psi {:.4}",
                    curve.len(),
                    last.env_iterations,
                    last.mean_reward,
                    last.psi
                );
            }
            println!("checkpoint: {}", args.out.join("checkpoint.json").display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args.config)?;
            let plan = ExperimentPlan {
                mode: ExperimentMode::AgentEval,
                seeds: parse_seeds(&args.seeds)?,
                out_dir: args.out.clone(),
            };
            let results = run_plan_with_checkpoint(&plan, &cfg, &args.checkpoint)?;
            write_results(&plan, &cfg, &results)?;
            print_summary(&results);
            Ok(())
        }
        Command::Bounds(args) => {
            let regime = match args.regime {
                1 => BoundRegime::StronglyConvex,
                2 => BoundRegime::NonConvex,
                3 => BoundRegime::FlProportional,
                other => bail!("unknown regime {other}; expected 1, 2, or 3"),
            };
            let defaults = BoundDefaults {
                n: args.n,
                epsilon: args.epsilon,
                w_a: args.w_a,
                z_a: args.z_a,
                base: args.base,
                w_b: args.w_b,
                z_b: args.z_b,
                local_epochs: args.local_epochs,
                g2: args.g2,
                sigma2: args.sigma2,
                device_count: args.device_count,
            };
            let sweep = Sweep::parse(&args.sweep)?;
            println!("{},k_min", sweep.param);
            for (v, k) in bounds_sweep(regime, &defaults, &sweep)? {
                println!("{v},{k}");
            }
            Ok(())
        }
        Command::Selftest => {
            let mut failures = 0;
            for (name, result) in selftest() {
                match result {
                    Ok(()) => println!("PASS {name}"),
                    Err(msg) => {
                        failures += 1;
                        println!("FAIL {name}: {msg}");
                    }
                }
            }
            if failures > 0 {
                bail!("{failures} selftest check(s) failed");
            }
            println!("all selftest checks passed");
            Ok(())
        }
        Command::PrintConfig => {
            println!("{}", desk_scenario(0).to_json_pretty());
            Ok(())
        }
    }
}
