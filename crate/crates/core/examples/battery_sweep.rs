//! Fair throughput as both batteries grow. Larger batteries get more
//! levels so the energy quantum stays fixed; a fixed level count would
//! make the quantum coarser and lose throughput to rounding.

use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::experiment::battery_sweep_params;
use wpcn::fairness::{find_fair_alpha, FairOptions};
use wpcn::model::{GridPreset, GridSpec, SystemParams};

fn main() -> wpcn::Result<()> {
    let base = SystemParams::default();
    let grid = GridSpec::preset(GridPreset::Coarse);
    let quantum = 0.05e-3;

    for b_max in [0.1e-3, 0.2e-3, 0.3e-3, 0.4e-3] {
        let params = battery_sweep_params(&base, b_max);
        let g = grid.with_max_quantum(&params, quantum);
        let pmf = build_channel_pmf(&params, &g, FadingModel::Rayleigh, true)?;
        let fair = find_fair_alpha(&pmf, &params, &g, &FairOptions::default())?;
        println!(
            "B_max {:.1} mJ, levels {:?}: {:.4} Mbps",
            b_max * 1e3,
            g.battery_levels,
            fair.fair_throughput() / 1e6
        );
    }
    Ok(())
}
