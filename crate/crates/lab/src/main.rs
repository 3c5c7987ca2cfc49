use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vform_lab::{ExperimentConfig, Lab, ResultsTable, Scale};

#[derive(Parser)]
#[command(name = "vform-lab", about = "Train and evaluate distributed V-formation controllers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file; keys it omits take preset values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use inputs produced under a different config.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Teacher trajectories and the training dataset.
    Generate {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the neural controller on the generated dataset.
    Train,
    /// Counterexample-guided retraining of the trained model.
    Cegkr,
    /// Neural, distributed and centralized controllers on shared initial states.
    Compare {
        /// A single flock size or a range such as `7..16`.
        #[arg(long)]
        agents: Option<String>,
    },
    /// Statistical model checking of the neural controller.
    Smc {
        #[arg(long)]
        agents: Option<String>,
    },
    /// Configurations on which symmetric distributed controllers fail.
    Scenario {
        /// Scenario names; all of them if omitted.
        names: Vec<String>,
    },
    /// The neural controller on wider initial-state boxes.
    Robustness,
    /// Print the effective configuration.
    Config,
}

fn parse_agents(spec: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("bad agent count `{spec}`; use N or LO..HI");
    match spec.split_once("..") {
        Some((lo, hi)) => {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            Ok((lo..=hi).collect())
        }
        None => Ok(vec![spec.trim().parse().map_err(|_| bad())?]),
    }
}

fn print_table(t: &ResultsTable) {
    print!("{}", t.to_text());
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    vform_lab::init_workers()?;
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.common.scale.unwrap_or(Scale::Desk)),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.common.out {
        cfg.out = out;
    }
    cfg.validate()?;
    let lab = Lab::new(cfg, cli.common.force);
    let agents = |a: &Option<String>| a.as_deref().map(parse_agents).transpose();
    match cli.command {
        Command::Generate { count } => {
            let s = lab.cmd_generate(count)?;
            println!(
                "{} teacher runs, {} kept, {} samples -> {}",
                s.trajectories,
                s.kept,
                s.samples,
                s.dataset.display()
            );
        }
        Command::Train => {
            let s = lab.cmd_train()?;
            let last = s.losses.last().unwrap();
            println!("trained on {} samples, final loss {:.6e} -> {}", s.samples, last.train, s.model.display());
        }
        Command::Cegkr => {
            let s = lab.cmd_cegkr()?;
            print!("{}", vform::cegkr::rounds_table(&s.reports));
            println!("best round {} -> {}", s.best_round, s.model.display());
        }
        Command::Compare { agents: a } => print_table(&lab.cmd_compare(agents(&a)?)?),
        Command::Smc { agents: a } => print_table(&lab.cmd_smc(agents(&a)?)?),
        Command::Scenario { names } => print_table(&lab.cmd_scenario((!names.is_empty()).then_some(names))?),
        Command::Robustness => print_table(&lab.cmd_robustness()?),
        Command::Config => print!("{}", lab.cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
