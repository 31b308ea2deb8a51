//! Command-line driver: `wpcn --experiment NAME [--config PATH] [--out DIR]`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wpcn::experiment::{exit_code, run_experiment, Config, EXPERIMENTS};
use wpcn::model::GridPreset;

#[derive(Parser, Debug)]
#[command(version, about = "Max-min throughput experiments for a two-device wireless powered network")]
struct Args {
    /// TOML configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: slot-division, approx-vs-exact, throughput-region,
    /// battery-sweep, distance-sweep, fair-point, slot-baseline, simulate.
    #[arg(long)]
    experiment: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, env = "WPCN_THREADS", default_value_t = 0)]
    threads: usize,
    /// Overrides the configured grid preset.
    #[arg(long)]
    grid_preset: Option<GridPreset>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let fail = |e: wpcn::Error| {
        eprintln!("error: {e}");
        ExitCode::from(exit_code(&e) as u8)
    };
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let mut config = match &args.config {
        Some(path) => match Config::from_path(path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        },
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(preset) = args.grid_preset {
        config.grid.preset = preset;
    }
    if !EXPERIMENTS.contains(&args.experiment.as_str()) {
        return fail(wpcn::Error::UnknownExperiment(args.experiment));
    }
    match run_experiment(&config, &args.experiment, &args.out) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            if summary.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: value iteration hit its iteration cap; outputs written but not converged");
                ExitCode::from(4)
            }
        }
        Err(e) => fail(e),
    }
}
