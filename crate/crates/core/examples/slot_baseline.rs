//! The per-slot scheduler that ignores battery dynamics: the optimal
//! allocation for one channel draw, its long-term average, and the
//! closed form that holds at low SNR.

use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::model::{GridPreset, GridSpec, SystemParams};
use wpcn::slot::{long_term_slot_reward, low_snr_reward, slot_policy_averages, solve_slot};

fn main() -> wpcn::Result<()> {
    let params = SystemParams::default();
    let g = [0, 1].map(|i| params.devices[i].mean_downlink_gain());
    let h = [0, 1].map(|i| params.devices[i].mean_uplink_gain());

    let s = solve_slot(g, h, &params)?;
    println!("mean channel: {:?}", s.status);
    println!("  tau_AP {:.4} s, tau {:.4} / {:.4} s", s.tau_ap, s.tau1, s.tau2);
    println!("  rho {:.3e} / {:.3e} W, Q {:.3} / {:.3} W", s.rho1, s.rho2, s.q1, s.q2);
    println!("  per-device throughput {:.4} Mbps", params.throughput_bps(s.reward) / 1e6);

    let grid = GridSpec::preset(GridPreset::Default);
    let pmf = build_channel_pmf(&params, &grid, FadingModel::Rayleigh, true)?;
    let avg = slot_policy_averages(&pmf, &params)?;
    println!(
        "rayleigh average: {:.4} Mbps, Q share {:.3} / {:.3}",
        long_term_slot_reward(&pmf, &params)? / 1e6,
        avg.q_frac[0],
        avg.q_frac[1]
    );

    // far-away devices with a loud receiver put every slot in the low-SNR regime
    let mut far = params;
    far.devices[0].distance = 8.0;
    far.devices[1].distance = 10.0;
    far.noise_power = 1e-4;
    let g = [0, 1].map(|i| far.devices[i].mean_downlink_gain());
    let h = [0, 1].map(|i| far.devices[i].mean_uplink_gain());
    let exact = solve_slot(g, h, &far)?.reward;
    let approx = low_snr_reward(g, h, &far);
    println!("low SNR: exact {exact:.4e}, closed form {approx:.4e}, ratio {:.5}", approx / exact);
    Ok(())
}
