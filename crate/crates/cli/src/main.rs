use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seltest_core::harness::{
    self, to_csv, write_csv, ExperimentConfig, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION,
};
use seltest_core::Error;

#[derive(Parser)]
#[command(name = "seltest", version, about = "Selective-testing federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's `out`, then `out/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training rounds with cheat injection.
    RunRounds(Common),
    /// Time every pass and write one CSV per table.
    Bench(Common),
    /// Monte Carlo detection rates against the analytic ones.
    DetectSim(Common),
    /// Check the deposit theorem bounds and best responses over a grid.
    GameCheck(Common),
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(cmd: &Command) -> Result<i32, Error> {
    match cmd {
        Command::RunRounds(c) => {
            let (cfg, out) = load(c)?;
            let res = harness::run_rounds(&cfg)?;
            res.write(&out)?;
            let s = &res.summary;
            println!(
                "{} rounds, model version {}, {} endorsements, slashed {:?}",
                s.rounds, s.final_version, s.endorsements, s.slashed
            );
            if res.violation() {
                eprintln!("honest workers flagged: {:?}", s.false_alarms);
                return Ok(EXIT_VIOLATION);
            }
            Ok(EXIT_OK)
        }
        Command::Bench(c) => {
            let (cfg, out) = load(c)?;
            for t in harness::bench(&cfg)? {
                let name = format!("{}.csv", t.name);
                write_csv(&out, &name, &t.to_csv()?)?;
                println!("wrote {}", out.join(name).display());
            }
            Ok(EXIT_OK)
        }
        Command::DetectSim(c) => {
            let (cfg, out) = load(c)?;
            let rows = harness::detect_sim(&cfg)?;
            write_csv(&out, "detect.csv", &to_csv(&rows)?)?;
            let bad: Vec<_> = rows.iter().filter(|r| !r.within_exact() || !r.above_paper()).collect();
            for r in &bad {
                eprintln!(
                    "n={} p={} m={}: empirical {} vs exact {} (3 sigma {})",
                    r.n, r.p, r.m, r.empirical, r.prob_exact, r.bound
                );
            }
            println!("{} points, {} outside 3 sigma", rows.len(), bad.len());
            Ok(if bad.is_empty() { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::GameCheck(c) => {
            let (cfg, out) = load(c)?;
            let rows = harness::game_check(&cfg)?;
            write_csv(&out, "game.csv", &to_csv(&rows)?)?;
            for r in rows.iter().filter(|r| r.diagnostic.is_some()) {
                eprintln!(
                    "n={} p={} B={}: {}",
                    r.n,
                    r.p,
                    r.benefit,
                    r.diagnostic.as_deref().unwrap_or_default()
                );
            }
            let violations = rows.iter().filter(|r| r.violation()).count();
            println!("{} cells, {} violations", rows.len(), violations);
            Ok(if violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
