//! Runs the weighted-optimal policy slot by slot and checks the Monte
//! Carlo averages against the exact stationary evaluation.

use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::fairness::{solve_weighted, Solver};
use wpcn::mdp::ViOptions;
use wpcn::model::{GridPreset, GridSpec, SystemParams};
use wpcn::sim::{replicate, SimOptions};

fn main() -> wpcn::Result<()> {
    let params = SystemParams::default();
    let grid = GridSpec::preset(GridPreset::Coarse);
    let pmf = build_channel_pmf(&params, &grid, FadingModel::Rayleigh, true)?;
    let sol = solve_weighted(0.5, &pmf, &params, &grid, &Solver::Exact, &ViOptions::default(), None)?;
    let exact = sol.throughput();

    let opts = SimOptions { n_slots: 200_000, seed: 42, record_slots: 5, ..Default::default() };
    let runs = replicate(&sol.policy, &pmf, &params, &grid, &opts, 4)?;
    println!("exact:      G1 {:.4} Mbps, G2 {:.4} Mbps", exact.g1 / 1e6, exact.g2 / 1e6);
    for (k, r) in runs.iter().enumerate() {
        let z = [(r.throughput.g1 - exact.g1) / r.std_err[0], (r.throughput.g2 - exact.g2) / r.std_err[1]];
        println!(
            "seed {:>3}:   G1 {:.4} Mbps, G2 {:.4} Mbps, z = ({:+.2}, {:+.2})",
            opts.seed + k as u64,
            r.throughput.g1 / 1e6,
            r.throughput.g2 / 1e6,
            z[0],
            z[1]
        );
    }
    println!("first slots of seed {}:", opts.seed);
    for row in &runs[0].trajectory {
        println!(
            "  slot {} b=({}, {}) channel {} tau_AP {:.3} Q1 {:.2}",
            row.slot, row.b1, row.b2, row.channel, row.tau_ap, row.q1
        );
    }
    Ok(())
}
