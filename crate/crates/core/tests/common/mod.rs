//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use wpcn::action::solve_tau1;
use wpcn::channel::{build_channel_pmf, ChannelPmf, FadingModel};
use wpcn::model::{GridPreset, GridSpec, SystemParams};
use wpcn::slot::{SlotSolution, SlotStatus};

/// Tiny MDP instance for exhaustive checks.
#[derive(Debug, Clone)]
pub struct Tiny {
    pub params: SystemParams,
    pub grid: GridSpec,
    pub pmf: ChannelPmf,
    pub alpha: f64,
}

pub fn random_tiny<R: Rng>(rng: &mut R) -> Tiny {
    let mut params = SystemParams::default();
    params.devices[0].distance = rng.gen_range(1.0..3.0);
    params.devices[1].distance = rng.gen_range(1.0..5.0);
    params.q_max = rng.gen_range(0.5..3.0);
    for d in &mut params.devices {
        d.b_max = rng.gen_range(0.02e-3..0.2e-3);
    }
    let mut grid = GridSpec::preset(GridPreset::Coarse);
    grid.battery_levels = [rng.gen_range(1..=2), rng.gen_range(1..=2)];
    grid.fading_bins = rng.gen_range(1..=2);
    grid.tau_ap_points = 3;
    grid.q1_points = rng.gen_range(2..=3);
    let model = if grid.fading_bins == 1 {
        FadingModel::Deterministic
    } else {
        FadingModel::Rayleigh
    };
    let pmf = build_channel_pmf(&params, &grid, model, true).unwrap();
    Tiny {
        params,
        grid,
        pmf,
        alpha: rng.gen_range(0.1..0.9),
    }
}

/// `n` points evenly spread over `[lo, hi]`.
pub fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Options at one `(battery, channel)` decision point: the best weighted
/// reward reachable per distinct next battery state, without transfer
/// anchors. Options dominated by another with at least as much reward and
/// at least as much stored energy on both devices are dropped: more stored
/// energy never hurts, since every action available with less energy is
/// available with more and leads to a componentwise larger next state.
pub fn decision_options(t: &Tiny, b: [u32; 2], c: usize) -> Vec<([u32; 2], f64)> {
    let p = &t.params;
    let o = t.pmf.get(c);
    let quant = [t.grid.quantizer(p, 0), t.grid.quantizer(p, 1)];
    let taus = grid_points(0.0, p.slot, t.grid.tau_ap_points);
    let qs = grid_points(0.0, p.q_max, t.grid.q1_points);
    let mut best: BTreeMap<[u32; 2], f64> = BTreeMap::new();
    for e1 in 0..=b[0] {
        for e2 in 0..=b[1] {
            let energy = [quant[0].energy(e1), quant[1].energy(e2)];
            for &tau_ap in &taus {
                let Some(split) = solve_tau1(energy, tau_ap, o.h, t.alpha, p) else {
                    continue;
                };
                for &q1 in &qs {
                    let q = [q1, p.q_max - q1];
                    let next = [0, 1].map(|i| {
                        let e = [e1, e2][i];
                        let harvest = quant[i].harvest_quanta(p.eta * tau_ap * q[i] * o.g[i]);
                        (b[i] - e + harvest).min(quant[i].levels)
                    });
                    let slot = best.entry(next).or_insert(f64::NEG_INFINITY);
                    *slot = slot.max(split.objective);
                }
            }
        }
    }
    let all: Vec<([u32; 2], f64)> = best.into_iter().collect();
    all.iter()
        .filter(|(n, r)| {
            !all.iter().any(|(m, s)| {
                m != n && m[0] >= n[0] && m[1] >= n[1] && *s >= *r
            })
        })
        .copied()
        .collect()
}

/// Long-run average of `reward` under the chain `p` started from `start`:
/// the Cesaro limit, obtained as the limit of powers of the lazy chain
/// `(I + P) / 2` by repeated squaring. Rows are renormalized after each
/// squaring, otherwise rounding drift in the row sums doubles every step.
pub fn long_run_average(p: &[Vec<f64>], reward: &[f64], start: usize) -> f64 {
    let n = p.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * p[i][j] + if i == j { 0.5 } else { 0.0 }).collect())
        .collect();
    for _ in 0..48 {
        let mut sq = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let a = m[i][k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    sq[i][j] += a * m[k][j];
                }
            }
        }
        for row in &mut sq {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        m = sq;
    }
    (0..n).map(|j| m[start][j] * reward[j]).sum()
}

/// Largest long-run weighted reward over all stationary deterministic
/// policies, started from full batteries. `None` when the policy space
/// exceeds `cap`.
pub fn brute_force_gain(t: &Tiny, cap: u64) -> Option<(f64, u64)> {
    let levels = t.grid.battery_levels;
    let w = levels[1] as usize + 1;
    let n = (levels[0] as usize + 1) * w;
    let n_c = t.pmf.len();
    let points: Vec<([u32; 2], usize)> = (0..n)
        .flat_map(|s| (0..n_c).map(move |c| ([(s / w) as u32, (s % w) as u32], c)))
        .collect();
    let options: Vec<Vec<([u32; 2], f64)>> = points.iter().map(|&(b, c)| decision_options(t, b, c)).collect();
    let mut count: u64 = 1;
    for o in &options {
        count = count.checked_mul(o.len() as u64)?;
        if count > cap {
            return None;
        }
    }
    let start = n - 1;
    let mut pick = vec![0usize; points.len()];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut p = vec![vec![0.0; n]; n];
        let mut r = vec![0.0; n];
        for (k, &(b, c)) in points.iter().enumerate() {
            let s = b[0] as usize * w + b[1] as usize;
            let (next, reward) = options[k][pick[k]];
            let prob = t.pmf.get(c).prob;
            p[s][next[0] as usize * w + next[1] as usize] += prob;
            r[s] += prob * reward;
        }
        best = best.max(long_run_average(&p, &r, start));
        // odometer increment
        let mut k = 0;
        loop {
            if k == pick.len() {
                return Some((best, count));
            }
            pick[k] += 1;
            if pick[k] < options[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// Best per-slot max-min reward by grid search over `(tau_ap, Q1, rho1,
/// rho2)` with `n` points per axis and `zooms` rounds of local refinement.
/// For each point the durations are the largest equal-reward pair allowed
/// by the slot length, the harvested energy and the battery caps.
pub fn slot_grid_search(g: [f64; 2], h: [f64; 2], p: &SystemParams, n: usize, zooms: usize) -> f64 {
    let eval = |tau_ap: f64, q1: f64, rho: [f64; 2]| -> f64 {
        let q = [q1, p.q_max - q1];
        let r = [p.rate(rho[0], h[0]), p.rate(rho[1], h[1])];
        let caps = [0, 1].map(|i| p.harvested_energy(tau_ap, q[i], g[i]).min(p.devices[i].b_max) / rho[i] * r[i]);
        let time = (p.slot - tau_ap) / (1.0 / r[0] + 1.0 / r[1]);
        caps[0].min(caps[1]).min(time).max(0.0)
    };
    let d = p.devices;
    let mut lo = [0.0, 0.0, d[0].p_min, d[1].p_min];
    let mut hi = [p.slot, p.q_max, d[0].p_max, d[1].p_max];
    let mut best = (f64::NEG_INFINITY, lo);
    for _ in 0..=zooms {
        let axes: Vec<Vec<f64>> = (0..4).map(|k| grid_points(lo[k], hi[k], n)).collect();
        for &a in &axes[0] {
            for &b in &axes[1] {
                for &c in &axes[2] {
                    for &e in &axes[3] {
                        let v = eval(a, b, [c, e]);
                        if v > best.0 {
                            best = (v, [a, b, c, e]);
                        }
                    }
                }
            }
        }
        let full = [p.slot, p.q_max, d[0].p_max - d[0].p_min, d[1].p_max - d[1].p_min];
        let floor = [0.0, 0.0, d[0].p_min, d[1].p_min];
        let ceil = [p.slot, p.q_max, d[0].p_max, d[1].p_max];
        for k in 0..4 {
            let width = (hi[k] - lo[k]) / (n - 1) as f64 * 2.0;
            let width = width.min(full[k]);
            lo[k] = (best.1[k] - width).max(floor[k]);
            hi[k] = (best.1[k] + width).min(ceil[k]);
        }
    }
    best.0
}

/// Myopic optimum for a single channel outcome: the best immediate
/// weighted reward over quanta pairs `e <= b`, the `tau_ap` grid and a dense
/// grid of `tau1`, with powers recovered as `E_i / tau_i`. The reward of each
/// device grows with its duration, so at the optimum either the whole
/// window is used or a device sits at its minimum power; both are covered,
/// together with the durations where a power bound becomes active.
pub fn myopic_reward(b: [u32; 2], h: [f64; 2], alpha: f64, p: &SystemParams, grid: &GridSpec, n_tau: usize) -> f64 {
    let quant = [grid.quantizer(p, 0), grid.quantizer(p, 1)];
    let taus = grid_points(0.0, p.slot, grid.tau_ap_points);
    let d = p.devices;
    let weight = [alpha, 1.0 - alpha];
    let mut best = 0.0_f64;
    for e1 in 0..=b[0] {
        for e2 in 0..=b[1] {
            let en = [quant[0].energy(e1), quant[1].energy(e2)];
            for &tau_ap in &taus {
                let w = p.slot - tau_ap;
                let mut t1s = grid_points(0.0, w, n_tau + 1);
                t1s.extend([
                    en[0] / d[0].p_min,
                    en[0] / d[0].p_max,
                    w - en[1] / d[1].p_min,
                    w - en[1] / d[1].p_max,
                ]);
                for t1 in t1s.into_iter().filter(|t| (0.0..=w).contains(t)) {
                    // a device never runs below its minimum power
                    let tau = [t1.min(en[0] / d[0].p_min), (w - t1).min(en[1] / d[1].p_min)];
                    let mut val = 0.0;
                    let ok = (0..2).all(|i| {
                        if en[i] == 0.0 {
                            return true;
                        }
                        let rho = en[i] / tau[i];
                        val += weight[i] * tau[i] * p.rate(rho, h[i]);
                        tau[i] > 0.0 && rho <= d[i].p_max * (1.0 + 1e-12)
                    });
                    if ok {
                        best = best.max(val);
                    }
                }
            }
        }
    }
    best
}

/// First violated invariant of a slot-oriented solution, if any: durations
/// fill the slot, transfer powers sum to `Q_max`, both devices get the same
/// reward, each spends `min(harvested, capacity)` and powers stay in bounds.
pub fn slot_violation(s: &SlotSolution, g: [f64; 2], h: [f64; 2], p: &SystemParams, tol: f64) -> Option<String> {
    let t = p.slot;
    if (s.tau1 + s.tau2 + s.tau_ap - t).abs() > tol * t {
        return Some(format!("durations do not fill the slot: {s:?}"));
    }
    if (s.q1 + s.q2 - p.q_max).abs() > tol * p.q_max {
        return Some(format!("transfer powers do not sum to Q_max: {s:?}"));
    }
    if s.status == SlotStatus::Degenerate {
        return (s.reward != 0.0).then(|| format!("degenerate slot with reward: {s:?}"));
    }
    let r = [s.tau1 * p.rate(s.rho1, h[0]), s.tau2 * p.rate(s.rho2, h[1])];
    if (r[0] - r[1]).abs() > tol * r[0].max(r[1]) || (r[0] - s.reward).abs() > tol * s.reward {
        return Some(format!("unequal rewards {r:?} vs {}", s.reward));
    }
    for i in 0..2 {
        let d = &p.devices[i];
        let e = s.energy()[i];
        let c = p.harvested_energy(s.tau_ap, s.q()[i], g[i]);
        if (e - c.min(d.b_max)).abs() > tol * e {
            return Some(format!("device {}: spends {e} J, harvested {c} J, capacity {} J", i + 1, d.b_max));
        }
        let rho = s.rho()[i];
        if rho < d.p_min * (1.0 - tol) || rho > d.p_max * (1.0 + tol) {
            return Some(format!("device {}: power {rho} W out of bounds", i + 1));
        }
    }
    None
}

/// Random channel draw around the mean gains, spanning several decades.
pub fn random_channel<R: Rng>(p: &SystemParams, rng: &mut R) -> ([f64; 2], [f64; 2]) {
    let mut fade = || 10f64.powf(rng.gen_range(-2.0..1.0));
    let g = [p.devices[0].mean_downlink_gain() * fade(), p.devices[1].mean_downlink_gain() * fade()];
    let h = [p.devices[0].mean_uplink_gain() * fade(), p.devices[1].mean_uplink_gain() * fade()];
    (g, h)
}
