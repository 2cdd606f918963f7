use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cosim_core::scenario::{load_scenario, run_scenario, RunOptions};

#[derive(Parser)]
#[command(name = "cosim", version, about = "Lockstep robot/network co-simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        window_ns: Option<u64>,
        #[arg(long)]
        duration_ns: Option<u64>,
        /// Directory for the CSV files and run_summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write SVG plots (needs --out).
        #[arg(long, requires = "out")]
        plots: bool,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(c) => {
                println!(
                    "{}: ok ({} agents, {} flows, {} windows)",
                    scenario.display(),
                    c.agents.len(),
                    c.flows.len(),
                    c.windows()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INVALID)
            }
        },
        Command::Run {
            scenario,
            seed,
            window_ns,
            duration_ns,
            out,
            plots,
        } => {
            let mut config = match load_scenario(&scenario) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(w) = window_ns {
                config.window_ns = w;
            }
            if let Some(d) = duration_ns {
                config.duration_ns = d;
            }
            let options = RunOptions { out_dir: out.clone(), plots };
            match run_scenario(&config, &options) {
                Ok(outcome) => {
                    let p = &outcome.phenomenology;
                    let n = &outcome.network;
                    println!(
                        "windows {}  released {}  corrupted {}  expired {}  wall {:.2?}",
                        n.windows, n.counters.released, n.counters.corrupted, n.counters.expired, outcome.wall
                    );
                    for (k, f) in outcome.flows.iter().enumerate() {
                        println!(
                            "flow {k}: delivered {} packets ({} bytes), {} retransmissions",
                            f.delivered, f.delivered_bytes, f.retransmissions
                        );
                    }
                    println!(
                        "LOS mean {:.2} Mb/s  troughs {}  deep NLOS {:.3} Mb/s  spearman {:.3}  delay mode/mean/p95 {:.1}/{:.1}/{:.1} ms",
                        p.los_mean_rate_bps * 1e-6,
                        p.nlos_troughs,
                        p.deep_nlos_mean_rate_bps * 1e-6,
                        p.rate_delay_spearman,
                        p.delay_mode_s * 1e3,
                        p.delay_mean_s * 1e3,
                        p.delay_p95_s * 1e3,
                    );
                    if let Some(dir) = out {
                        println!("wrote {}", dir.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(if e.is_runtime() { EXIT_RUNTIME } else { EXIT_INVALID })
                }
            }
        }
    }
}
