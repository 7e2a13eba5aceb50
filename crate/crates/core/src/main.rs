use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use xrelay::harness::{self, emit, plot_axes, svg_line_chart, Experiment, ExperimentConfig, HarnessError};
use xrelay::relay::ForwardingProtocol;

const EXIT_CONFIG: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser)]
#[command(name = "xrelay", version, about = "Cross-chain relay simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: forwarding_time, throughput, availability or collusion.
    Run {
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to these protocols (dandelion, clover, shortest_ping).
        #[arg(long, value_delimiter = ',')]
        protocol: Vec<String>,
        #[arg(long)]
        relays: Option<usize>,
        #[arg(long)]
        plot: bool,
    },
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let Command::Run { experiment, config, seed, out, protocol, relays, plot } = Cli::parse().command;
    let Some(exp) = Experiment::parse(&experiment) else {
        return config_error(format!("unknown experiment {experiment:?}"));
    };
    let mut cfg = match &config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(s) => match ExperimentConfig::from_json(&s) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            },
            Err(e) => return config_error(format!("{}: {e}", path.display())),
        },
        None => ExperimentConfig::default(),
    };
    if config.is_some() && cfg.experiment != exp {
        log::warn!("config names {:?}; running {:?}", cfg.experiment, exp);
    }
    cfg.experiment = exp;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = relays {
        cfg.n_relays = n;
    }
    if !protocol.is_empty() {
        let keep: Vec<ForwardingProtocol> =
            cfg.effective_protocols().into_iter().filter(|p| protocol.iter().any(|w| w == p.name())).collect();
        if keep.is_empty() {
            return config_error(format!("no protocol matches {protocol:?}"));
        }
        cfg.protocols = keep;
    }
    let Some(out) = out.or_else(|| cfg.out.clone()) else {
        return config_error("--out is required");
    };

    let started = Instant::now();
    let result = match harness::run(&cfg) {
        Ok(r) => r,
        Err(HarnessError::Io(e)) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        Err(e) => return config_error(e),
    };
    if let Err(e) = emit(&result, cfg.format, &out) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    if plot {
        let (x, y) = plot_axes(exp);
        if let Err(e) = std::fs::write(out.with_extension("svg"), svg_line_chart(&result, x, y)) {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    eprintln!(
        "{} rows -> {} (virtual {} ms, wall {:.1} s)",
        result.rows.len(),
        out.display(),
        result.metadata.virtual_ms,
        started.elapsed().as_secs_f64()
    );
    let mut ok = true;
    for c in &result.checks {
        eprintln!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}
