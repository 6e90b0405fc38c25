use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use secure_consensus::harness::{
    compare_runs, load_config, run_grid, run_scenario, HarnessError, Mode, RunReport, Table1,
};

#[derive(Parser)]
#[command(name = "secure-consensus", version, about = "Encrypted consensus scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and analyze its configured attacks.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario mode (plaintext or encrypted).
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for the CSV outputs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the neighbor-count by weight-knowledge privacy grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report per-round state divergence between two run directories.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
}

fn run(config: &Path, seed: Option<u64>, mode: Option<Mode>, out: Option<&Path>) -> Result<(), HarnessError> {
    let (mut cfg, _) = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    let report = run_scenario(&cfg, out)?;
    let labels: Vec<String> = (0..cfg.topology.agents).map(|i| cfg.label(i)).collect();
    print_run(&labels, &report);
    Ok(())
}

fn print_run(labels: &[String], report: &RunReport) {
    println!(
        "{} ({:?}, seed {}, {} rounds)",
        report.name, report.mode, report.seed, report.rounds
    );
    let v = &report.validation;
    print!(
        "  gains: binding eigenvalue {:.4}, slack {:.4}",
        v.binding_eigenvalue, v.gain_slack
    );
    match v.variation_margin {
        Some(m) => println!(", variation margin {m:.4}"),
        None => println!(),
    }
    match report.consensus_round {
        Some(k) => println!("  practical consensus from round {k}"),
        None => println!("  no practical consensus within the horizon"),
    }
    println!("  final max position gap {:.3e}", report.final_max_gap);
    for pair in &report.agreement {
        let k = pair.k_a.map_or("never".to_string(), |k| k.to_string());
        println!("  local agreement {}-{}: {k}", labels[pair.i], labels[pair.j]);
    }
    for a in &report.attacks {
        println!(
            "  attack {} -> {} ({:?} weights): final error p {:.3e}, v {:.3e}; best p {:.3e}",
            labels[a.attacker], labels[a.target], a.weights, a.final_err_p, a.final_err_v, a.min_err_p
        );
        if let (Some(s), Some(e)) = (&a.two_step, a.two_step_error) {
            println!("    two-step recovery ({}, {}) error {e:.3e}", s.p, s.v);
        }
        if let (Some(v0), Some(e)) = (a.reconstructed_v0, a.reconstruction_error) {
            println!("    velocity reconstruction {v0} error {e:.3e}");
        }
    }
    for f in &report.files {
        println!("  wrote {}", f.display());
    }
    println!("  mean step time {:.3} ms", report.mean_step_ms);
}

fn print_grid(table: &Table1) {
    println!("{:<5} {:<8} {:<28} {:>10} {:>12} {:>12}", "nbrs", "weights", "expected", "seeds", "metric", "threshold");
    for c in &table.cells {
        println!(
            "{:<5} {:<8} {:<28} {:>10} {:>12.3e} {:>12.3e}{}",
            c.neighbors,
            format!("{:?}", c.weights).to_lowercase(),
            c.expected.to_string(),
            format!("{}/{}", c.seeds_passed, c.seeds),
            c.metric,
            c.threshold,
            if c.reproduced { "" } else { "  NOT REPRODUCED" }
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, mode, out } => run(&config, seed, mode, out.as_deref()),
        Command::Grid { config, out } => load_config(&config)
            .and_then(|(cfg, _)| run_grid(&cfg, out.as_deref()))
            .map(|t| print_grid(&t)),
        Command::Compare { dir_a, dir_b } => compare_runs(&dir_a, &dir_b).map(|d| {
            for (k, x) in d.per_round.iter().enumerate() {
                println!("{k},{x:e}");
            }
            println!("max divergence {:e}", d.max);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
