//! Traces the achievable throughput pairs as the weight on device 1 moves
//! from 0 to 1, for two fading models.

use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::fairness::{throughput_region, Solver};
use wpcn::mdp::ViOptions;
use wpcn::model::{GridPreset, GridSpec, SystemParams};

fn main() -> wpcn::Result<()> {
    let params = SystemParams::default();
    let grid = GridSpec::preset(GridPreset::Coarse);
    let alphas: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();

    for (name, model) in [("rayleigh", FadingModel::Rayleigh), ("nakagami-5", FadingModel::Nakagami { m: 5.0 })] {
        let pmf = build_channel_pmf(&params, &grid, model, true)?;
        let region = throughput_region(&pmf, &params, &grid, &alphas, &Solver::Exact, &ViOptions::default())?;
        println!("{name}");
        for (alpha, t) in region {
            println!("  alpha {alpha:.1}: G1 {:.4} Mbps, G2 {:.4} Mbps", t.g1 / 1e6, t.g2 / 1e6);
        }
    }
    Ok(())
}
