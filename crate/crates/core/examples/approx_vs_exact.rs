//! Compares exact value iteration against the subset-evaluation variant
//! at the fair point, and checks the accumulated-error bound on a fixed
//! number of iterations.

use std::time::Instant;

use wpcn::approx::{approx_value_iteration, verify_bound, ApproxOptions, SubsetSchedule};
use wpcn::channel::{build_channel_pmf, FadingModel};
use wpcn::fairness::{find_fair_alpha, FairOptions, Solver};
use wpcn::mdp::{value_iteration, Normalization, ViOptions};
use wpcn::model::{GridPreset, GridSpec, SystemParams};

fn main() -> wpcn::Result<()> {
    let params = SystemParams::default();
    let grid = GridSpec::preset(GridPreset::Default);
    let pmf = build_channel_pmf(&params, &grid, FadingModel::Rayleigh, true)?;

    let approx = ApproxOptions::default();
    for (name, solver) in [("exact", Solver::Exact), ("approx", Solver::Approx(approx))] {
        let start = Instant::now();
        let fair = find_fair_alpha(&pmf, &params, &grid, &FairOptions { solver, ..Default::default() })?;
        println!(
            "{name:>6}: alpha {:.4}, fair throughput {:.4} Mbps in {:.1} s",
            fair.alpha,
            fair.fair_throughput() / 1e6,
            start.elapsed().as_secs_f64()
        );
    }

    // unnormalized iterates: the gap after n steps stays below the summed errors
    let n = 30;
    let opts = ApproxOptions {
        schedule: SubsetSchedule::Lattice { stride: 3 },
        tol: Some(0.0),
        max_iters: n,
        audit_fraction: 1.0,
        normalization: Normalization::None,
        ..Default::default()
    };
    let a = approx_value_iteration(0.5, &pmf, &params, &grid, &opts)?;
    let e = value_iteration(
        0.5,
        &pmf,
        &params,
        &grid,
        &ViOptions { tol: Some(0.0), max_iters: n, normalization: Normalization::None, ..Default::default() },
    )?;
    let eps = a.epsilon;
    println!(
        "after {n} iterations: gap {:.3e}, n * eps {:.3e}, bound holds: {}",
        e.value.sup_distance(&a.value)?,
        n as f64 * eps,
        verify_bound(&e.value, &a.value, n, eps)?
    );
    Ok(())
}
