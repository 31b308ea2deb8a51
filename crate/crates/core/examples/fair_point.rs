//! Bisects on the weight until both devices get the same long-term
//! throughput, then prints the bisection trace.
//!
//! `cargo run --release --example fair_point`

use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::fairness::{find_fair_alpha, FairOptions};
use wpcn::model::{GridPreset, GridSpec, SystemParams};

fn main() -> wpcn::Result<()> {
    let params = SystemParams::default();
    let grid = GridSpec::preset(GridPreset::Default);
    let pmf = build_channel_pmf(&params, &grid, FadingModel::Rayleigh, true)?;

    let fair = find_fair_alpha(&pmf, &params, &grid, &FairOptions::default())?;
    println!("step  alpha     G1 (Mbps)  G2 (Mbps)");
    for row in &fair.trace {
        println!("{:>4}  {:.6}  {:>9.4}  {:>9.4}", row.step, row.alpha, row.g1_bps / 1e6, row.g2_bps / 1e6);
    }
    println!(
        "fair weight {:.4}, fair throughput {:.4} Mbps, time-shared: {}",
        fair.alpha,
        fair.fair_throughput() / 1e6,
        fair.mixture.is_some()
    );
    Ok(())
}
