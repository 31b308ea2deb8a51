//! Slot-oriented baseline: every slot is optimized on its own and each
//! device spends exactly what it harvests in that slot (harvest then
//! transmit, no carry-over).
//!
//! With equal per-slot rewards `t = tau_i R_i`, the energy balance and the
//! power budget collapse to
//!
//! ```text
//! t <= T eta Q g1 g2 / (g2 phi_1(rho_1) + g1 phi_2(rho_2)),
//! phi_i(rho) = (eta Q g_i + rho) / R_i(rho),
//! ```
//!
//! and the battery caps to `t <= beta_i(rho_i) = B_i R_i(rho_i) / rho_i`.
//! `phi_i` is unimodal with its minimum at the root of
//! `(sigma^2/h + rho) ln(1 + h rho / sigma^2) = eta g Q + rho`, and
//! `beta_i` is decreasing, so for a target `t` the best powers are that root
//! clamped into `[P_min, min(P_max, beta_i^-1(t))]`. The optimal `t` is
//! found by root-finding on the resulting monotone feasibility margin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::channel::ChannelPmf;
use crate::error::{Error, Result};
use crate::mdp::SlotAverages;
use crate::model::{SystemParams, LOG_BASE};
use crate::roots::{brent, bracket_upward};

/// Which constraints shape a slot solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotStatus {
    /// Both powers sit at the stationary point of `phi_i`.
    Interior,
    /// A power bound or a battery cap moved at least one power.
    Boundary,
    /// A battery cap binds and the transfer energy is not the bottleneck:
    /// the capped device harvests more than it can store.
    Capped,
    /// A zero gain or no transfer power: nothing can be sent.
    Degenerate,
}

/// Optimal single-slot allocation. Invariants: the durations fill the slot,
/// the transfer powers sum to `Q_max`, both devices earn `reward`, and
/// device `i` spends `min(C_i, B_max_i)` (nothing in the degenerate case).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotSolution {
    pub tau1: f64,
    pub tau2: f64,
    pub tau_ap: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub q1: f64,
    pub q2: f64,
    /// Per-device per-slot reward `tau_i R_i`, seconds x bits/s/Hz.
    pub reward: f64,
    pub status: SlotStatus,
}

impl SlotSolution {
    fn degenerate(params: &SystemParams) -> Self {
        SlotSolution {
            tau1: 0.0,
            tau2: 0.0,
            tau_ap: params.slot,
            rho1: 0.0,
            rho2: 0.0,
            q1: 0.5 * params.q_max,
            q2: 0.5 * params.q_max,
            reward: 0.0,
            status: SlotStatus::Degenerate,
        }
    }

    pub fn tau(&self) -> [f64; 2] {
        [self.tau1, self.tau2]
    }

    pub fn rho(&self) -> [f64; 2] {
        [self.rho1, self.rho2]
    }

    pub fn q(&self) -> [f64; 2] {
        [self.q1, self.q2]
    }

    /// Energy spent by each device, joules.
    pub fn energy(&self) -> [f64; 2] {
        [self.tau1 * self.rho1, self.tau2 * self.rho2]
    }

    pub fn action(&self) -> Action {
        Action {
            tau: self.tau(),
            tau_ap: self.tau_ap,
            rho: self.rho(),
            q: self.q(),
        }
    }
}

/// `(1 + x) ln(1 + x) - x`, accurate for small `x`.
fn energy_curve(x: f64) -> f64 {
    if x < 1e-4 {
        x * x * (0.5 - x * (1.0 / 6.0 - x / 12.0))
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

/// Unconstrained minimizer of `(eta g Q_max + rho) / R(rho, h)`: the power
/// solving `(sigma^2/h + rho) ln(1 + h rho / sigma^2) = eta g Q_max + rho`.
pub fn stationary_power(g: f64, h: f64, params: &SystemParams) -> Result<f64> {
    if !(g > 0.0 && h > 0.0 && params.q_max > 0.0) {
        return Err(Error::InvalidParameter("stationary power needs positive gains and Q_max".into()));
    }
    // in x = h rho / sigma^2 the equation reads (1 + x) ln(1 + x) - x = r
    let c = params.noise_power / h;
    let r = params.eta * g * params.q_max / c;
    let f = |x: f64| energy_curve(x) - r;
    // energy_curve(x) <= x^2 / 2, so sqrt(2 r) lies below the root
    let hi = bracket_upward(f, (2.0 * r).sqrt().max(f64::MIN_POSITIVE), 2100)?;
    Ok(c * brent(f, 0.0, hi, 0.0, 300)?)
}

/// Residual of the stationarity equation relative to its right side.
pub fn stationary_residual(rho: f64, g: f64, h: f64, params: &SystemParams) -> f64 {
    let c = params.noise_power / h;
    let rhs = params.eta * g * params.q_max + rho;
    ((c + rho) * (h * rho / params.noise_power).ln_1p() - rhs) / rhs
}

struct Device {
    g: f64,
    h: f64,
    p_min: f64,
    p_max: f64,
    b_max: f64,
    rho0: f64,
}

impl Device {
    fn rate(&self, rho: f64, params: &SystemParams) -> f64 {
        params.rate(rho, self.h)
    }

    fn phi(&self, rho: f64, params: &SystemParams) -> f64 {
        (params.eta * self.g * params.q_max + rho) / self.rate(rho, params)
    }

    fn beta(&self, rho: f64, params: &SystemParams) -> f64 {
        self.b_max * self.rate(rho, params) / rho
    }

    /// Best power when the reward must reach `t`, or `None` if even
    /// `P_min` overdraws the battery.
    fn power_for(&self, t: f64, params: &SystemParams) -> Option<f64> {
        let cap = if self.beta(self.p_max, params) >= t {
            self.p_max
        } else if self.beta(self.p_min, params) < t {
            return None;
        } else {
            brent(|r| self.beta(r, params) - t, self.p_min, self.p_max, 0.0, 300).ok()?
        };
        Some(self.rho0.clamp(self.p_min, cap))
    }
}

/// Optimal single-slot max-min allocation for gains `g`, `h`.
pub fn solve_slot(g: [f64; 2], h: [f64; 2], params: &SystemParams) -> Result<SlotSolution> {
    if g.iter().chain(&h).any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("gains must be finite and non-negative: g={g:?} h={h:?}")));
    }
    if g.contains(&0.0) || h.contains(&0.0) || params.q_max == 0.0 {
        return Ok(SlotSolution::degenerate(params));
    }
    let dev: Vec<Device> = (0..2)
        .map(|i| {
            let d = &params.devices[i];
            Ok(Device {
                g: g[i],
                h: h[i],
                p_min: d.p_min,
                p_max: d.p_max,
                b_max: d.b_max,
                rho0: stationary_power(g[i], h[i], params)?,
            })
        })
        .collect::<Result<_>>()?;
    let a = params.slot * params.eta * params.q_max * g[0] * g[1];
    let s = |rho: [f64; 2]| g[1] * dev[0].phi(rho[0], params) + g[0] * dev[1].phi(rho[1], params);
    let powers = |t: f64| -> Option<[f64; 2]> { Some([dev[0].power_for(t, params)?, dev[1].power_for(t, params)?]) };

    let unclamped = [0, 1].map(|i| dev[i].rho0.clamp(dev[i].p_min, dev[i].p_max));
    let caps = [0, 1].map(|i| dev[i].beta(dev[i].p_min, params));
    let t_hi = (a / s(unclamped)).min(caps[0]).min(caps[1]);
    let margin = |t: f64| match powers(t) {
        Some(rho) => a / s(rho) - t,
        None => -t,
    };
    let t_star = if margin(t_hi) >= 0.0 {
        t_hi
    } else {
        brent(margin, 0.0, t_hi, 0.0, 300)?
    };
    let rho = powers(t_star).unwrap_or([dev[0].p_min, dev[1].p_min]);
    let rates = [0, 1].map(|i| dev[i].rate(rho[i], params));
    let betas = [0, 1].map(|i| dev[i].beta(rho[i], params));
    let t_energy = a / s(rho);
    let t = t_energy.min(betas[0]).min(betas[1]);

    let tau = [t / rates[0], t / rates[1]];
    let tau_ap = params.slot - tau[0] - tau[1];
    let needed = [0, 1].map(|i| tau[i] * rho[i] / (tau_ap * params.eta * g[i]));
    let total: f64 = needed.iter().sum();
    let capped = t < t_energy * (1.0 - 1e-12);
    let q = if !capped {
        needed.map(|n| n * params.q_max / total)
    } else {
        // devices held by their battery absorb the spare transfer power
        let held = [0, 1].map(|i| betas[i] <= t * (1.0 + 1e-12));
        let spare = params.q_max - total;
        let held_need: f64 = (0..2).filter(|&i| held[i]).map(|i| needed[i]).sum();
        [0, 1].map(|i| {
            if held[i] {
                needed[i] + spare * needed[i] / held_need
            } else {
                needed[i]
            }
        })
    };
    let status = if capped {
        SlotStatus::Capped
    } else if rho == [dev[0].rho0, dev[1].rho0] {
        SlotStatus::Interior
    } else {
        SlotStatus::Boundary
    };
    Ok(SlotSolution {
        tau1: tau[0],
        tau2: tau[1],
        tau_ap,
        rho1: rho[0],
        rho2: rho[1],
        q1: q[0],
        q2: q[1],
        reward: t,
        status,
    })
}

/// Closed-form slot solution for the low-SNR regime, where the rate is
/// linear in the power: `R_i ~ h_i rho_i / (sigma^2 ln 2)`. There
///
/// ```text
/// rho_i = sqrt(2 eta g_i Q_max sigma^2 / h_i),
/// Q_i   = g_{-i} h_{-i} Q_max / (g1 h1 + g2 h2),
/// ```
///
/// and the durations are reconstructed with the linear rate, so every
/// invariant holds exactly for that model. Power bounds and battery caps
/// are not applied.
pub fn solve_slot_low_snr(g: [f64; 2], h: [f64; 2], params: &SystemParams) -> SlotSolution {
    if g.iter().chain(&h).any(|x| !(*x > 0.0)) || params.q_max == 0.0 {
        return SlotSolution::degenerate(params);
    }
    let (eta, q_max, n0) = (params.eta, params.q_max, params.noise_power);
    let rho = [0, 1].map(|i| (2.0 * eta * g[i] * q_max * n0 / h[i]).sqrt());
    let gh = [g[0] * h[0], g[1] * h[1]];
    let q = [gh[1] * q_max / (gh[0] + gh[1]), gh[0] * q_max / (gh[0] + gh[1])];
    let reward = low_snr_reward(g, h, params);
    let lin = |i: usize| h[i] * rho[i] / (n0 * LOG_BASE.ln());
    let tau = [reward / lin(0), reward / lin(1)];
    SlotSolution {
        tau1: tau[0],
        tau2: tau[1],
        tau_ap: params.slot - tau[0] - tau[1],
        rho1: rho[0],
        rho2: rho[1],
        q1: q[0],
        q2: q[1],
        reward,
        status: SlotStatus::Interior,
    }
}

/// Low-SNR per-slot reward in bits/s/Hz x seconds:
/// `T eta Q g1 g2 h1 h2 / (sigma^2 ln 2 sum_i g_{-i} h_{-i} (1 + sqrt(eta Q g_i h_i / (2 sigma^2))))`.
pub fn low_snr_reward(g: [f64; 2], h: [f64; 2], params: &SystemParams) -> f64 {
    let (eta, q_max, n0) = (params.eta, params.q_max, params.noise_power);
    let term = |i: usize, j: usize| g[j] * h[j] * (1.0 + (eta * q_max * g[i] * h[i] / (2.0 * n0)).sqrt());
    params.slot * eta * q_max * g[0] * g[1] * h[0] * h[1] / (n0 * LOG_BASE.ln() * (term(0, 1) + term(1, 0)))
}

/// Long-term throughput of the slot-oriented policy, bits/s.
pub fn long_term_slot_reward(pmf: &ChannelPmf, params: &SystemParams) -> Result<f64> {
    let rewards: Vec<f64> = pmf
        .outcomes()
        .par_iter()
        .map(|o| solve_slot(o.g, o.h, params).map(|s| s.reward))
        .collect::<Result<_>>()?;
    let mean: f64 = pmf.outcomes().iter().zip(&rewards).map(|(o, r)| o.prob * r).sum();
    Ok(params.throughput_bps(mean))
}

/// Expected slot variables of the slot-oriented policy.
pub fn slot_policy_averages(pmf: &ChannelPmf, params: &SystemParams) -> Result<SlotAverages> {
    let sols: Vec<SlotSolution> = pmf
        .outcomes()
        .par_iter()
        .map(|o| solve_slot(o.g, o.h, params))
        .collect::<Result<_>>()?;
    let mut avg = SlotAverages::default();
    for (o, s) in pmf.outcomes().iter().zip(&sols) {
        for i in 0..2 {
            avg.rho[i] += o.prob * s.rho()[i];
            avg.tau[i] += o.prob * s.tau()[i];
            if params.q_max > 0.0 {
                avg.q_frac[i] += o.prob * s.q()[i] / params.q_max;
            }
        }
        avg.tau_ap += o.prob * s.tau_ap;
    }
    Ok(avg)
}
