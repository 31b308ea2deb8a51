//! Monte Carlo simulation of scheduling policies, slot by slot.
//!
//! Random numbers come from ChaCha8 seeded with `seed_from_u64(seed)`.
//! Each slot draws exactly one value, the joint channel outcome index, from
//! that stream, so a trajectory is a pure function of the seed, the pmf and
//! the policy. Replications use consecutive seeds.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::action::Action;
use crate::channel::{ChannelOutcome, ChannelPmf};
use crate::error::{Error, Result};
use crate::mdp::{Policy, ThroughputPair};
use crate::model::{GridSpec, Quantizer, SystemParams};
use crate::slot::solve_slot;

/// Anything that picks a slot action from the battery state and the
/// channel realization.
pub trait SchedulingPolicy {
    fn decide(&self, b: [u32; 2], channel: usize, outcome: &ChannelOutcome) -> Action;
}

impl SchedulingPolicy for Policy {
    fn decide(&self, b: [u32; 2], channel: usize, _outcome: &ChannelOutcome) -> Action {
        self.get(b, channel).action
    }
}

impl<F> SchedulingPolicy for F
where
    F: Fn([u32; 2], usize, &ChannelOutcome) -> Action,
{
    fn decide(&self, b: [u32; 2], channel: usize, outcome: &ChannelOutcome) -> Action {
        self(b, channel, outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub n_slots: u64,
    pub seed: u64,
    /// Share of the slots discarded before averaging.
    pub burn_in: f64,
    /// Batches for the batch-means standard error.
    pub n_batches: usize,
    /// Slots recorded in the trajectory, counted from the first slot.
    pub record_slots: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            n_slots: 100_000,
            seed: 0,
            burn_in: 0.01,
            n_batches: 50,
            record_slots: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub slot: u64,
    pub b1: u32,
    pub b2: u32,
    pub channel: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub tau_ap: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub q1: f64,
    pub q2: f64,
    pub reward1: f64,
    pub reward2: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// Time-averaged throughput after burn-in, bits/s.
    pub throughput: ThroughputPair,
    /// Batch-means standard errors, bits/s (NaN with fewer than two batches).
    pub std_err: [f64; 2],
    /// Visits per battery state after burn-in, row-major in `(b1, b2)`.
    pub occupancy: Vec<u64>,
    pub averaged_slots: u64,
    pub trajectory: Vec<TrajectoryRow>,
}

struct BatchMeans {
    batch_len: u64,
    current: [f64; 2],
    filled: u64,
    means: Vec<[f64; 2]>,
    total: [f64; 2],
    count: u64,
}

impl BatchMeans {
    fn new(n: u64, batches: usize) -> Self {
        BatchMeans {
            batch_len: (n / batches.max(1) as u64).max(1),
            current: [0.0; 2],
            filled: 0,
            means: Vec::with_capacity(batches),
            total: [0.0; 2],
            count: 0,
        }
    }

    fn push(&mut self, r: [f64; 2]) {
        for i in 0..2 {
            self.current[i] += r[i];
            self.total[i] += r[i];
        }
        self.count += 1;
        self.filled += 1;
        if self.filled == self.batch_len {
            let n = self.batch_len as f64;
            self.means.push(self.current.map(|x| x / n));
            self.current = [0.0; 2];
            self.filled = 0;
        }
    }

    fn mean(&self) -> [f64; 2] {
        let n = self.count.max(1) as f64;
        self.total.map(|x| x / n)
    }

    fn std_err(&self) -> [f64; 2] {
        let k = self.means.len();
        if k < 2 {
            return [f64::NAN; 2];
        }
        [0, 1].map(|i| {
            let m = self.means.iter().map(|b| b[i]).sum::<f64>() / k as f64;
            let var = self.means.iter().map(|b| (b[i] - m).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        })
    }
}

/// Quanta matching `joules` exactly, or `None` if the energy is not a whole
/// number of quanta.
fn whole_quanta(joules: f64, q: &Quantizer) -> Option<u32> {
    let x = joules / q.quantum;
    let n = x.round();
    ((x - n).abs() <= 1e-6 && n >= 0.0).then_some(n as u32)
}

/// Runs `policy` for `options.n_slots` slots from full batteries.
pub fn simulate<P: SchedulingPolicy + ?Sized>(
    policy: &P,
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    options: &SimOptions,
) -> Result<SimResult> {
    if options.n_slots == 0 {
        return Err(Error::InvalidParameter("n_slots must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&options.burn_in) {
        return Err(Error::InvalidParameter("burn-in share must lie in [0, 1)".into()));
    }
    let levels = grid.battery_levels;
    let quant = [grid.quantizer(params, 0), grid.quantizer(params, 1)];
    let sampler = pmf.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let burn = (options.burn_in * options.n_slots as f64).floor() as u64;
    let mut stats = BatchMeans::new(options.n_slots - burn, options.n_batches);
    let width = levels[1] as usize + 1;
    let mut occupancy = vec![0u64; (levels[0] as usize + 1) * width];
    let mut trajectory = Vec::with_capacity(options.record_slots);
    let mut b = levels;

    for slot in 0..options.n_slots {
        let c = sampler.sample(&mut rng);
        let o = pmf.get(c);
        let a = policy.decide(b, c, o);
        let stored = [quant[0].energy(b[0]), quant[1].energy(b[1])];
        let infeasible = |reason: String| Error::InfeasibleAction {
            battery: b,
            channel: c,
            reason,
        };
        a.validate(stored, params).map_err(infeasible)?;
        let mut next = [0; 2];
        for i in 0..2 {
            let e = whole_quanta(a.energy(i), &quant[i])
                .ok_or_else(|| infeasible(format!("device {} spends {} J, not whole quanta", i + 1, a.energy(i))))?;
            let harvest = params.harvested_energy(a.tau_ap, a.q[i], o.g[i]);
            next[i] = quant[i]
                .step(b[i], e, harvest)
                .map_err(|_| infeasible(format!("device {} overdraws its battery", i + 1)))?;
        }
        debug_assert!(next[0] <= levels[0] && next[1] <= levels[1]);
        let r = a.device_rewards(o.h, params);
        if trajectory.len() < options.record_slots {
            trajectory.push(TrajectoryRow {
                slot,
                b1: b[0],
                b2: b[1],
                channel: c,
                tau1: a.tau[0],
                tau2: a.tau[1],
                tau_ap: a.tau_ap,
                rho1: a.rho[0],
                rho2: a.rho[1],
                q1: a.q[0],
                q2: a.q[1],
                reward1: r[0],
                reward2: r[1],
            });
        }
        if slot >= burn {
            stats.push(r);
            occupancy[b[0] as usize * width + b[1] as usize] += 1;
        }
        b = next;
    }
    let mean = stats.mean();
    Ok(SimResult {
        throughput: ThroughputPair {
            g1: params.throughput_bps(mean[0]),
            g2: params.throughput_bps(mean[1]),
        },
        std_err: stats.std_err().map(|s| params.throughput_bps(s)),
        occupancy,
        averaged_slots: stats.count,
        trajectory,
    })
}

/// Independent replications with seeds `seed, seed + 1, ...`, run in
/// parallel and returned in seed order.
pub fn replicate<P: SchedulingPolicy + Sync + ?Sized>(
    policy: &P,
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    options: &SimOptions,
    replications: usize,
) -> Result<Vec<SimResult>> {
    (0..replications as u64)
        .into_par_iter()
        .map(|k| {
            let opts = SimOptions {
                seed: options.seed.wrapping_add(k),
                ..*options
            };
            simulate(policy, pmf, params, grid, &opts)
        })
        .collect()
}

/// Monte Carlo estimate of the slot-oriented throughput. Batteries play no
/// role there, so only the channel is sampled.
pub fn simulate_slot_policy(pmf: &ChannelPmf, params: &SystemParams, options: &SimOptions) -> Result<SimResult> {
    if options.n_slots == 0 {
        return Err(Error::InvalidParameter("n_slots must be at least 1".into()));
    }
    let rewards: Vec<[f64; 2]> = pmf
        .outcomes()
        .iter()
        .map(|o| {
            let s = solve_slot(o.g, o.h, params)?;
            Ok([s.tau1 * params.rate(s.rho1, o.h[0]), s.tau2 * params.rate(s.rho2, o.h[1])])
        })
        .collect::<Result<_>>()?;
    let sampler = pmf.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut stats = BatchMeans::new(options.n_slots, options.n_batches);
    for _ in 0..options.n_slots {
        stats.push(rewards[sampler.sample(&mut rng)]);
    }
    let mean = stats.mean();
    Ok(SimResult {
        throughput: ThroughputPair {
            g1: params.throughput_bps(mean[0]),
            g2: params.throughput_bps(mean[1]),
        },
        std_err: stats.std_err().map(|s| params.throughput_bps(s)),
        occupancy: Vec::new(),
        averaged_slots: stats.count,
        trajectory: Vec::new(),
    })
}

/// Writes a recorded trajectory as CSV.
pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_channel_pmf, FadingModel};
    use crate::mdp::{evaluate_policy, value_iteration, ViOptions};
    use crate::model::GridPreset;

    fn small() -> (SystemParams, GridSpec) {
        let mut g = GridSpec::preset(GridPreset::Coarse);
        g.battery_levels = [4, 4];
        (SystemParams::default(), g)
    }

    #[test]
    fn silence_gives_exact_zero() {
        let (p, g) = small();
        let pmf = build_channel_pmf(&p, &g, FadingModel::Rayleigh, true).unwrap();
        let idle = |_: [u32; 2], _: usize, _: &ChannelOutcome| Action::idle(&p, 1.0);
        let r = simulate(&idle, &pmf, &p, &g, &SimOptions::default()).unwrap();
        assert_eq!(r.throughput, ThroughputPair { g1: 0.0, g2: 0.0 });
    }

    #[test]
    fn periodic_policy_hits_its_cycle_average() {
        // device 1 spends its whole battery whenever it is full, otherwise
        // the access point refills it one quantum per slot
        let (mut p, mut g) = small();
        g.battery_levels = [2, 2];
        let quantum = p.devices[0].b_max / 2.0;
        let gain = p.devices[0].mean_downlink_gain();
        p.q_max = quantum / (p.slot * p.eta * gain) * 1.0000001;
        let pmf = ChannelPmf::deterministic(&p);
        let rho = p.devices[0].p_max;
        let send = move |b: [u32; 2], _: usize, _: &ChannelOutcome| {
            if b[0] == 2 {
                let tau = 2.0 * quantum / rho;
                Action {
                    tau: [tau, 0.0],
                    tau_ap: 0.0,
                    rho: [rho, 0.0],
                    q: [p.q_max, 0.0],
                }
            } else {
                Action::idle(&p, p.q_max)
            }
        };
        let opts = SimOptions {
            n_slots: 3 * 1000,
            burn_in: 0.0,
            ..Default::default()
        };
        let r = simulate(&send, &pmf, &p, &g, &opts).unwrap();
        let per_cycle = 2.0 * quantum / rho * p.rate(rho, p.devices[0].mean_uplink_gain());
        let expect = p.throughput_bps(per_cycle / 3.0);
        assert!((r.throughput.g1 - expect).abs() <= 1e-9 * expect, "{} vs {expect}", r.throughput.g1);
    }

    #[test]
    fn same_seed_same_output() {
        let (p, g) = small();
        let pmf = build_channel_pmf(&p, &g, FadingModel::Rayleigh, true).unwrap();
        let vi = value_iteration(0.5, &pmf, &p, &g, &ViOptions::default()).unwrap();
        let opts = SimOptions {
            n_slots: 20_000,
            seed: 9,
            record_slots: 10,
            ..Default::default()
        };
        let a = simulate(&vi.policy, &pmf, &p, &g, &opts).unwrap();
        let b = simulate(&vi.policy, &pmf, &p, &g, &opts).unwrap();
        assert_eq!(a.throughput, b.throughput);
        assert_eq!(a.occupancy, b.occupancy);
        assert_eq!(a.trajectory, b.trajectory);
        let ev = evaluate_policy(&vi.policy, &pmf, &p, &g).unwrap();
        for i in 0..2 {
            let (m, s) = (a.throughput.as_array()[i], a.std_err[i]);
            assert!((m - ev.throughput.as_array()[i]).abs() <= 4.0 * s + 1e-6, "device {i}: {m} ± {s}");
        }
    }

    #[test]
    fn fractional_quanta_are_rejected() {
        let (p, g) = small();
        let pmf = ChannelPmf::deterministic(&p);
        let bad = |_: [u32; 2], _: usize, _: &ChannelOutcome| Action {
            tau: [0.001, 0.0],
            tau_ap: 0.4,
            rho: [p.devices[0].p_max * 0.77, 0.0],
            q: [1.0, 2.0],
        };
        match simulate(&bad, &pmf, &p, &g, &SimOptions::default()) {
            Err(Error::InfeasibleAction { battery, .. }) => assert_eq!(battery, [4, 4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slot_policy_monte_carlo_matches_average() {
        let (p, g) = small();
        let pmf = build_channel_pmf(&p, &g, FadingModel::Rayleigh, true).unwrap();
        let exact = crate::slot::long_term_slot_reward(&pmf, &p).unwrap();
        let r = simulate_slot_policy(&pmf, &p, &SimOptions::default()).unwrap();
        assert!((r.throughput.g1 - exact).abs() <= 4.0 * r.std_err[0]);
        assert!((r.throughput.g1 - r.throughput.g2).abs() <= 1e-6 * exact);
    }
}
