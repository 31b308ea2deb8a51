//! Loads a TOML configuration and runs one named experiment, the same way
//! the `wpcn` binary does.
//!
//! `cargo run --release --example run_config -- configs/default.toml slot-division out/`

use std::path::PathBuf;

use wpcn::experiment::{run_experiment, Config};

fn main() -> wpcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => Config::from_path(&PathBuf::from(path))?,
        None => Config::default(),
    };
    let name = args.next().unwrap_or_else(|| "slot-division".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/example".into()));

    let summary = run_experiment(&config, &name, &out)?;
    println!("{} finished, converged: {}", summary.experiment, summary.converged);
    for f in &summary.files {
        println!("  wrote {}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&summary.results).unwrap_or_default());
    Ok(())
}
