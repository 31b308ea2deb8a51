//! Battery-aware scheduling against the per-slot baseline as device 2
//! moves away from the access point.

use wpcn::experiment::{sweep_point, Config};

fn main() -> wpcn::Result<()> {
    let mut config = Config::default();
    config.grid.preset = wpcn::model::GridPreset::Coarse;
    let base = config.params()?;
    let grid = config.grid()?;

    println!("d2 (m)  MDP (Mbps)  slot (Mbps)  approx (Mbps)  gain");
    for d2 in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let mut params = base;
        params.devices[0].distance = 2.0;
        params.devices[1].distance = d2;
        let p = sweep_point(&config, &params, &grid, d2)?;
        println!(
            "{d2:>6.1}  {:>10.4}  {:>11.4}  {:>13.4}  {:>+5.1}%",
            p.g_mdp / 1e6,
            p.g_slot / 1e6,
            p.g_approx / 1e6,
            100.0 * (p.g_mdp / p.g_slot - 1.0)
        );
    }
    Ok(())
}
