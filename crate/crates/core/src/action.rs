//! Per-state maximization of `r_alpha + K(b')`.
//!
//! The seven slot variables `(tau1, tau2, tau_ap, rho1, rho2, Q1, Q2)` are
//! searched in reduced form `(tau_ap, Q1, e1, e2)`: `Q2 = Q_max - Q1`, the
//! consumed energy `E_i = e_i * quantum_i` fixes the battery transition, and
//! the uplink time split is a scalar problem with a unique optimum
//! ([`solve_tau1`]).
//!
//! Besides the `tau_ap` grid, every energy pair gets two extra `tau_ap`
//! candidates: `T - E1/P1max - E2/P2max` (both devices at full power, the
//! longest possible transfer phase) and `T - E1/P1min - E2/P2min` (both at
//! minimum power, the longest useful transmissions). Idle time is allowed, so
//! `tau1 + tau2 + tau_ap <= T`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelOutcome, ChannelPmf};
use crate::error::Result;
use crate::mdp::ValueFunction;
use crate::model::{linspace, GridSpec, Quantizer, SystemParams, LOG_BASE};
use crate::roots;

/// Relative tolerance used when re-checking action feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Full slot decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Uplink durations, seconds.
    pub tau: [f64; 2],
    /// Energy transfer duration, seconds.
    pub tau_ap: f64,
    /// Transmission powers, watts. Zero when the device stays silent.
    pub rho: [f64; 2],
    /// Transfer powers aimed at each device, watts.
    pub q: [f64; 2],
}

impl Action {
    /// Transfer only: `tau_ap = T`, `Q1 = q1`, nobody transmits.
    pub fn idle(params: &SystemParams, q1: f64) -> Self {
        Action {
            tau: [0.0; 2],
            tau_ap: params.slot,
            rho: [0.0; 2],
            q: [q1, params.q_max - q1],
        }
    }

    /// Energy spent by device `i`, joules.
    pub fn energy(&self, i: usize) -> f64 {
        self.tau[i] * self.rho[i]
    }

    /// Per-slot reward `tau_i R(rho_i, h_i)` of each device.
    pub fn device_rewards(&self, h: [f64; 2], params: &SystemParams) -> [f64; 2] {
        [0, 1].map(|i| {
            if self.tau[i] > 0.0 {
                self.tau[i] * params.rate(self.rho[i], h[i])
            } else {
                0.0
            }
        })
    }

    /// Checks every slot constraint against the stored energies (joules).
    pub fn validate(&self, stored: [f64; 2], params: &SystemParams) -> std::result::Result<(), String> {
        let tol = FEASIBILITY_TOL;
        let fields = [
            self.tau[0], self.tau[1], self.tau_ap, self.rho[0], self.rho[1], self.q[0], self.q[1],
        ];
        if fields.iter().any(|x| !x.is_finite() || *x < -tol * params.slot.max(params.q_max)) {
            return Err(format!("negative or non-finite field in {self:?}"));
        }
        let t = self.tau[0] + self.tau[1] + self.tau_ap;
        if t > params.slot * (1.0 + tol) {
            return Err(format!("durations sum to {t} s > T"));
        }
        let q = self.q[0] + self.q[1];
        if q > params.q_max * (1.0 + tol) + 1e-300 {
            return Err(format!("transfer powers sum to {q} W > Q_max"));
        }
        for i in 0..2 {
            let d = &params.devices[i];
            let e = self.energy(i);
            if e > stored[i] + tol * d.b_max {
                return Err(format!("device {} spends {e} J with {} J stored", i + 1, stored[i]));
            }
            if self.tau[i] > 0.0
                && (self.rho[i] < d.p_min * (1.0 - tol) || self.rho[i] > d.p_max * (1.0 + tol))
            {
                return Err(format!("device {} power {} W out of bounds", i + 1, self.rho[i]));
            }
        }
        Ok(())
    }
}

/// Reduced decision: transfer duration, power split and quanta consumed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedAction {
    pub tau_ap: f64,
    pub q1: f64,
    pub e: [u32; 2],
}

/// Optimal uplink durations for given energies and transfer duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkSplit {
    pub tau: [f64; 2],
    /// `alpha tau1 R1 + (1 - alpha) tau2 R2`.
    pub objective: f64,
    /// `tau_i R_i` per device.
    pub device: [f64; 2],
}

/// `phi(tau) = ln(1 + a/tau) - a/(tau + a)`, the marginal value of uplink
/// time for a device with `a = E h / sigma^2`. Positive and decreasing.
fn phi(tau: f64, a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if tau <= 0.0 {
        return f64::INFINITY;
    }
    let x = a / tau;
    if !x.is_finite() {
        return f64::INFINITY;
    }
    if x < 1e-4 {
        // ln(1+x) - x/(1+x), cancellation-free
        x * x * (0.5 - x * (2.0 / 3.0 - 0.75 * x))
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

/// Derivative (in nats) of the weighted uplink objective with respect to
/// `tau1` at the split `tau`, where `tau2 = T - tau_ap - tau1`.
pub fn split_derivative(tau: [f64; 2], energy: [f64; 2], h: [f64; 2], alpha: f64, params: &SystemParams) -> f64 {
    let a1 = energy[0] * h[0] / params.noise_power;
    let a2 = energy[1] * h[1] / params.noise_power;
    alpha * phi(tau[0], a1) - (1.0 - alpha) * phi(tau[1], a2)
}

/// [`split_derivative`] as a function of `tau1` alone.
pub fn tau1_derivative(
    tau1: f64,
    energy: [f64; 2],
    tau_ap: f64,
    h: [f64; 2],
    alpha: f64,
    params: &SystemParams,
) -> f64 {
    let w = params.slot - tau_ap;
    split_derivative([tau1, w - tau1], energy, h, alpha, params)
}

/// Root of the derivative for `tau1` in `[lo, hi]`, where it is positive at
/// `lo` and negative at `hi`. Whichever duration is shorter is solved for
/// directly, so both come out with full relative precision.
fn split_root(lo: f64, hi: f64, w: f64, energy: [f64; 2], h: [f64; 2], alpha: f64, params: &SystemParams) -> [f64; 2] {
    let mid = 0.5 * (lo + hi);
    let d = |tau: [f64; 2]| split_derivative(tau, energy, h, alpha, params);
    if d([mid, w - mid]) >= 0.0 {
        let u = roots::brent(|u| d([w - u, u]), w - hi, w - mid, 0.0, 400).unwrap_or(w - mid);
        [w - u, u]
    } else {
        let t = roots::brent(|t| d([t, w - t]), lo, mid, 0.0, 400).unwrap_or(mid);
        [t, w - t]
    }
}

/// Root of the derivative on `(0, T - tau_ap)`, ignoring power bounds, as
/// the pair `(tau1, tau2)`. Requires `E1, E2 > 0` and `0 < alpha < 1`.
pub fn tau1_unconstrained(
    energy: [f64; 2],
    tau_ap: f64,
    h: [f64; 2],
    alpha: f64,
    params: &SystemParams,
) -> Result<[f64; 2]> {
    let w = params.slot - tau_ap;
    let (lo, hi) = (w * 1e-15, w * (1.0 - 1e-15));
    let d = |t: f64| tau1_derivative(t, energy, tau_ap, h, alpha, params);
    if !(d(lo) > 0.0 && d(hi) < 0.0) {
        return Err(crate::Error::NoBracket {
            a: lo,
            b: hi,
            fa: d(lo),
            fb: d(hi),
        });
    }
    Ok(split_root(lo, hi, w, energy, h, alpha, params))
}

fn weighted(tau: [f64; 2], energy: [f64; 2], h: [f64; 2], alpha: f64, params: &SystemParams) -> UplinkSplit {
    let device = [0, 1].map(|i| {
        if tau[i] > 0.0 && energy[i] > 0.0 {
            tau[i] * params.rate(energy[i] / tau[i], h[i])
        } else {
            0.0
        }
    });
    UplinkSplit {
        tau,
        objective: alpha * device[0] + (1.0 - alpha) * device[1],
        device,
    }
}

/// Best uplink time split for consumed energies `energy` (joules) after a
/// transfer phase of `tau_ap`. Returns `None` when the energies cannot be
/// spent within the power bounds in the remaining time.
///
/// Each device's reward `tau R(E/tau)` grows with `tau`, so when both can
/// transmit at minimum power the split is immediate; otherwise the whole
/// remaining time is shared and the optimum is the root of the derivative,
/// clamped to the window allowed by the power bounds.
pub fn solve_tau1(
    energy: [f64; 2],
    tau_ap: f64,
    h: [f64; 2],
    alpha: f64,
    params: &SystemParams,
) -> Option<UplinkSplit> {
    let slack = 1e-12 * params.slot;
    let w = params.slot - tau_ap;
    if w < -slack {
        return None;
    }
    let w = w.max(0.0);
    let [d1, d2] = params.devices;
    let [e1, e2] = energy;
    let result = |tau| Some(weighted(tau, energy, h, alpha, params));

    match (e1 > 0.0, e2 > 0.0) {
        (false, false) => result([0.0, 0.0]),
        (true, false) | (false, true) => {
            let i = if e1 > 0.0 { 0 } else { 1 };
            let d = params.devices[i];
            if energy[i] / d.p_max > w + slack {
                return None;
            }
            let mut tau = [0.0; 2];
            tau[i] = (energy[i] / d.p_min).min(w).max(energy[i] / d.p_max);
            result(tau)
        }
        (true, true) => {
            if e1 / d1.p_max + e2 / d2.p_max > w + slack {
                return None;
            }
            if e1 / d1.p_min + e2 / d2.p_min <= w {
                return result([e1 / d1.p_min, e2 / d2.p_min]);
            }
            let lo = (e1 / d1.p_max).max(w - e2 / d2.p_min);
            let mut hi = (e1 / d1.p_min).min(w - e2 / d2.p_max);
            if lo > hi {
                if lo - hi > slack {
                    return None;
                }
                hi = lo;
            }
            let d = |t: f64| tau1_derivative(t, energy, tau_ap, h, alpha, params);
            if hi - lo <= slack || d(lo) <= 0.0 {
                result([lo, (w - lo).max(e2 / d2.p_max)])
            } else if d(hi) >= 0.0 {
                result([hi, (w - hi).max(e2 / d2.p_max)])
            } else {
                result(split_root(lo, hi, w, energy, h, alpha, params))
            }
        }
    }
}

/// Rebuilds the full action from a reduced one and its uplink split.
fn assemble(split: &UplinkSplit, energy: [f64; 2], tau_ap: f64, q1: f64, params: &SystemParams) -> Action {
    let [d1, d2] = params.devices;
    let bounds = [(d1.p_min, d1.p_max), (d2.p_min, d2.p_max)];
    let rho = [0, 1].map(|i| {
        if split.tau[i] > 0.0 {
            (energy[i] / split.tau[i]).clamp(bounds[i].0, bounds[i].1)
        } else {
            0.0
        }
    });
    let tau = [0, 1].map(|i| if split.tau[i] > 0.0 { energy[i] / rho[i] } else { 0.0 });
    Action {
        tau,
        tau_ap,
        rho,
        q: [q1, (params.q_max - q1).max(0.0)],
    }
}

/// Options of the action search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionOptions {
    /// Add the two per-energy `tau_ap` candidates to the grid.
    pub anchors: bool,
}

impl Default for ActionOptions {
    fn default() -> Self {
        ActionOptions { anchors: true }
    }
}

/// Result of one per-state maximization, in table coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub value: f64,
    /// Index of the `tau_ap` candidate: grid points first, then anchors.
    pub t: u16,
    pub q: u16,
    pub e: [u32; 2],
    pub next: [u32; 2],
}

impl Choice {
    const NONE: Choice = Choice {
        value: f64::NEG_INFINITY,
        t: 0,
        q: 0,
        e: [0, 0],
        next: [0, 0],
    };
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    tau_ap: f64,
    esum: u32,
    stored: u32,
}

/// Tie-breaking order: value, then longer transfer, then less energy
/// spent, then more energy stored.
#[inline]
fn improves(new: &Candidate, best: &Candidate) -> bool {
    if best.value == f64::NEG_INFINITY {
        return new.value > f64::NEG_INFINITY;
    }
    let tol = 1e-12 * best.value.abs().max(1.0);
    if new.value > best.value + tol {
        return true;
    }
    if new.value < best.value - tol {
        return false;
    }
    let ttol = 1e-12;
    if new.tau_ap > best.tau_ap + ttol {
        return true;
    }
    if new.tau_ap < best.tau_ap - ttol {
        return false;
    }
    if new.esum != best.esum {
        return new.esum < best.esum;
    }
    new.stored > best.stored
}

/// Best transfer power split for a residual battery `x` and a given harvest
/// table row: max over `q` of `K(min(L, x + harvest))`.
#[derive(Debug, Clone, Copy, Default)]
struct Transfer {
    value: f64,
    q: u16,
    next: [u16; 2],
}

/// Precomputed tables of the Bellman maximization for one weight `alpha`.
#[derive(Debug, Clone)]
pub struct Bellman<'a> {
    params: SystemParams,
    grid: GridSpec,
    pmf: &'a ChannelPmf,
    alpha: f64,
    options: ActionOptions,
    levels: [u32; 2],
    quantizers: [Quantizer; 2],
    tau_grid: Vec<f64>,
    q_grid: Vec<f64>,
    /// Per energy index: the two anchor transfer durations (NaN if invalid).
    anchor_tau: Vec<[f64; 2]>,
    /// `[c][t][e]` weighted reward, `-inf` when infeasible.
    reward: Vec<f64>,
    /// `[c][j][q]` harvested quanta for grid points.
    harvest: Vec<[u16; 2]>,
    /// `[c][e][k][q]` harvested quanta for anchors.
    anchor_harvest: Vec<[u16; 2]>,
}

impl<'a> Bellman<'a> {
    pub fn new(
        params: &SystemParams,
        grid: &GridSpec,
        pmf: &'a ChannelPmf,
        alpha: f64,
        options: ActionOptions,
    ) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(crate::Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let levels = grid.battery_levels;
        let quantizers = [grid.quantizer(params, 0), grid.quantizer(params, 1)];
        let tau_grid = linspace(0.0, params.slot, grid.tau_ap_points);
        let q_grid = linspace(0.0, params.q_max, grid.q1_points);
        let n_e = grid.n_states();
        let e_of = |idx: usize| -> [u32; 2] {
            let w = levels[1] as usize + 1;
            [(idx / w) as u32, (idx % w) as u32]
        };

        let anchor_tau: Vec<[f64; 2]> = (0..n_e)
            .map(|idx| {
                let e = e_of(idx);
                let en = [quantizers[0].energy(e[0]), quantizers[1].energy(e[1])];
                let [d1, d2] = params.devices;
                let mk = |t: f64| {
                    if t >= -1e-12 * params.slot {
                        t.max(0.0)
                    } else {
                        f64::NAN
                    }
                };
                [
                    mk(params.slot - en[0] / d1.p_max - en[1] / d2.p_max),
                    mk(params.slot - en[0] / d1.p_min - en[1] / d2.p_min),
                ]
            })
            .collect();

        let mut this = Bellman {
            params: *params,
            grid: *grid,
            pmf,
            alpha,
            options,
            levels,
            quantizers,
            tau_grid,
            q_grid,
            anchor_tau,
            reward: Vec::new(),
            harvest: Vec::new(),
            anchor_harvest: Vec::new(),
        };

        let n_c = pmf.len();
        let n_t = this.n_candidates();
        let n_j = this.tau_grid.len();
        let n_q = this.q_grid.len();

        this.harvest = (0..n_c * n_j * n_q)
            .map(|k| {
                let (c, j, q) = (k / (n_j * n_q), (k / n_q) % n_j, k % n_q);
                this.harvest_quanta(pmf.get(c), this.tau_grid[j], q)
            })
            .collect();
        if options.anchors {
            this.anchor_harvest = (0..n_c * n_e * 2 * n_q)
                .map(|k| {
                    let (c, e, a, q) = (k / (n_e * 2 * n_q), (k / (2 * n_q)) % n_e, (k / n_q) % 2, k % n_q);
                    let t = this.anchor_tau[e][a];
                    if t.is_nan() {
                        [0, 0]
                    } else {
                        this.harvest_quanta(pmf.get(c), t, q)
                    }
                })
                .collect();
        }

        let rewards: Vec<Vec<f64>> = (0..n_c)
            .into_par_iter()
            .map(|c| {
                let mut out = vec![f64::NEG_INFINITY; n_t * n_e];
                for t in 0..n_t {
                    for e in 0..n_e {
                        if let Some(s) = this.uplink(c, e_of(e), t) {
                            out[t * n_e + e] = s.objective;
                        }
                    }
                }
                out
            })
            .collect();
        this.reward = rewards.concat();
        Ok(this)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn pmf(&self) -> &ChannelPmf {
        self.pmf
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn levels(&self) -> [u32; 2] {
        self.levels
    }

    pub fn n_states(&self) -> usize {
        self.grid.n_states()
    }

    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    /// Number of `tau_ap` candidates per energy pair.
    pub fn n_candidates(&self) -> usize {
        self.tau_grid.len() + if self.options.anchors { 2 } else { 0 }
    }

    #[inline]
    pub fn state_index(&self, b: [u32; 2]) -> usize {
        b[0] as usize * (self.levels[1] as usize + 1) + b[1] as usize
    }

    #[inline]
    pub fn state_of(&self, idx: usize) -> [u32; 2] {
        let w = self.levels[1] as usize + 1;
        [(idx / w) as u32, (idx % w) as u32]
    }

    fn harvest_quanta(&self, o: &ChannelOutcome, tau_ap: f64, q: usize) -> [u16; 2] {
        let q1 = self.q_grid[q];
        let qs = [q1, (self.params.q_max - q1).max(0.0)];
        [0, 1].map(|i| {
            let joules = self.params.harvested_energy(tau_ap, qs[i], o.g[i]);
            self.quantizers[i].harvest_quanta(joules) as u16
        })
    }

    /// Transfer duration of candidate `t` for energy pair `e` (NaN if the
    /// anchor does not exist).
    #[inline]
    fn tau_ap_of(&self, e_idx: usize, t: usize) -> f64 {
        let n_j = self.tau_grid.len();
        if t < n_j {
            self.tau_grid[t]
        } else {
            self.anchor_tau[e_idx][t - n_j]
        }
    }

    fn energies(&self, e: [u32; 2]) -> [f64; 2] {
        [self.quantizers[0].energy(e[0]), self.quantizers[1].energy(e[1])]
    }

    /// Uplink split of candidate `t` for energy pair `e` in channel `c`.
    fn uplink(&self, c: usize, e: [u32; 2], t: usize) -> Option<UplinkSplit> {
        let e_idx = self.state_index(e);
        let tau_ap = self.tau_ap_of(e_idx, t);
        if tau_ap.is_nan() {
            return None;
        }
        let h = self.pmf.get(c).h;
        let energy = self.energies(e);
        let n_j = self.tau_grid.len();
        if t < n_j {
            return solve_tau1(energy, tau_ap, h, self.alpha, &self.params);
        }
        // anchors fix the powers at one of the bounds
        let [d1, d2] = self.params.devices;
        let tau = if t == n_j {
            [energy[0] / d1.p_max, energy[1] / d2.p_max]
        } else {
            [energy[0] / d1.p_min, energy[1] / d2.p_min]
        };
        Some(weighted(tau, energy, h, self.alpha, &self.params))
    }

    #[inline]
    fn reward_at(&self, c: usize, t: usize, e_idx: usize) -> f64 {
        self.reward[(c * self.n_candidates() + t) * self.n_states() + e_idx]
    }

    #[inline]
    fn harvest_at(&self, c: usize, e_idx: usize, t: usize, q: usize) -> [u16; 2] {
        let n_j = self.tau_grid.len();
        let n_q = self.q_grid.len();
        if t < n_j {
            self.harvest[(c * n_j + t) * n_q + q]
        } else {
            self.anchor_harvest[((c * self.n_states() + e_idx) * 2 + (t - n_j)) * n_q + q]
        }
    }

    #[inline]
    fn next_state(&self, x: [u32; 2], h: [u16; 2]) -> [u32; 2] {
        [
            (x[0] + h[0] as u32).min(self.levels[0]),
            (x[1] + h[1] as u32).min(self.levels[1]),
        ]
    }

    /// Best `q` for residual battery `x`, given the harvest row for `(c, e, t)`.
    #[inline]
    fn transfer(&self, k: &[f64], c: usize, e_idx: usize, t: usize, x: [u32; 2]) -> Transfer {
        let mut best = Transfer {
            value: f64::NEG_INFINITY,
            ..Default::default()
        };
        let mut best_sum = 0;
        for q in 0..self.q_grid.len() {
            let n = self.next_state(x, self.harvest_at(c, e_idx, t, q));
            let v = k[self.state_index(n)];
            let sum = n[0] + n[1];
            let tol = 1e-12 * best.value.abs().max(1.0);
            if best.value == f64::NEG_INFINITY || v > best.value + tol || (v >= best.value - tol && sum > best_sum) {
                best = Transfer {
                    value: v,
                    q: q as u16,
                    next: [n[0] as u16, n[1] as u16],
                };
                best_sum = sum;
            }
        }
        best
    }

    /// Grid part of the transfer table for one sweep: `[c][j][x]`.
    fn transfer_cache(&self, k: &[f64]) -> Vec<Transfer> {
        let n_s = self.n_states();
        let n_j = self.tau_grid.len();
        let mut cache = vec![Transfer::default(); self.pmf.len() * n_j * n_s];
        cache.par_chunks_mut(n_s).enumerate().for_each(|(cj, row)| {
            let (c, j) = (cj / n_j, cj % n_j);
            for (x, slot) in row.iter_mut().enumerate() {
                *slot = self.transfer(k, c, 0, j, self.state_of(x));
            }
        });
        cache
    }

    /// Maximization for state `b` in channel `c`; `w(c, e_idx, t, x)` gives
    /// the best transfer split.
    fn backup<W>(&self, b: [u32; 2], c: usize, w: W) -> Choice
    where
        W: Fn(usize, usize, usize, [u32; 2]) -> Transfer,
    {
        let mut best = Choice::NONE;
        let mut best_key = Candidate {
            value: f64::NEG_INFINITY,
            tau_ap: 0.0,
            esum: 0,
            stored: 0,
        };
        for t in 0..self.n_candidates() {
            for e1 in 0..=b[0] {
                for e2 in 0..=b[1] {
                    let e_idx = self.state_index([e1, e2]);
                    let r = self.reward_at(c, t, e_idx);
                    if r == f64::NEG_INFINITY {
                        continue;
                    }
                    let x = [b[0] - e1, b[1] - e2];
                    let tr = w(c, e_idx, t, x);
                    let key = Candidate {
                        value: r + tr.value,
                        tau_ap: self.tau_ap_of(e_idx, t),
                        esum: e1 + e2,
                        stored: tr.next[0] as u32 + tr.next[1] as u32,
                    };
                    if improves(&key, &best_key) {
                        best_key = key;
                        best = Choice {
                            value: key.value,
                            t: t as u16,
                            q: tr.q,
                            e: [e1, e2],
                            next: [tr.next[0] as u32, tr.next[1] as u32],
                        };
                    }
                }
            }
        }
        best
    }

    fn backup_cached(&self, b: [u32; 2], c: usize, k: &[f64], cache: &[Transfer]) -> Choice {
        let n_s = self.n_states();
        let n_j = self.tau_grid.len();
        self.backup(b, c, |c, e_idx, t, x| {
            if t < n_j {
                cache[(c * n_j + t) * n_s + self.state_index(x)]
            } else {
                self.transfer(k, c, e_idx, t, x)
            }
        })
    }

    /// Maximization for one `(b, c)` pair, computed from scratch.
    pub fn optimize_choice(&self, b: [u32; 2], c: usize, k: &ValueFunction) -> Choice {
        let kv = k.values();
        self.backup(b, c, |c, e_idx, t, x| self.transfer(kv, c, e_idx, t, x))
    }

    /// Best action and its value `r_alpha + K(b')` in state `b`, channel `c`.
    pub fn optimize_state(&self, b: [u32; 2], c: usize, k: &ValueFunction) -> (Action, f64) {
        let choice = self.optimize_choice(b, c, k);
        (self.action(c, &choice), choice.value)
    }

    /// Applies the Bellman operator on `states` (all states when `None`):
    /// returns `T(K)(b) = sum_c f_c max {r + K(b')}` per requested state and,
    /// if `choices` is given, the argmax per `(state, channel)` in row-major
    /// order.
    pub fn apply(&self, k: &ValueFunction, states: Option<&[usize]>, choices: Option<&mut Vec<Choice>>) -> Vec<f64> {
        assert_eq!(k.levels(), self.levels, "value function on a different battery grid");
        let kv = k.values();
        let cache = self.transfer_cache(kv);
        let all: Vec<usize>;
        let states = match states {
            Some(s) => s,
            None => {
                all = (0..self.n_states()).collect();
                &all
            }
        };
        let n_c = self.pmf.len();
        let per_state: Vec<(f64, Vec<Choice>)> = states
            .par_iter()
            .map(|&s| {
                let b = self.state_of(s);
                let mut total = 0.0;
                let mut picks = Vec::with_capacity(n_c);
                for c in 0..n_c {
                    let ch = self.backup_cached(b, c, kv, &cache);
                    total += self.pmf.get(c).prob * ch.value;
                    picks.push(ch);
                }
                (total, picks)
            })
            .collect();
        if let Some(out) = choices {
            out.clear();
            out.extend(per_state.iter().flat_map(|(_, p)| p.iter().copied()));
        }
        per_state.into_iter().map(|(v, _)| v).collect()
    }

    /// Full action of a table choice in channel `c`.
    pub fn action(&self, c: usize, choice: &Choice) -> Action {
        let t = choice.t as usize;
        let energy = self.energies(choice.e);
        let e_idx = self.state_index(choice.e);
        let tau_ap = self.tau_ap_of(e_idx, t);
        let split = self
            .uplink(c, choice.e, t)
            .expect("a chosen candidate is feasible");
        assemble(&split, energy, tau_ap, self.q_grid[choice.q as usize], &self.params)
    }

    /// Per-device rewards `tau_i R_i` of a table choice in channel `c`.
    pub fn device_rewards(&self, c: usize, choice: &Choice) -> [f64; 2] {
        self.uplink(c, choice.e, choice.t as usize)
            .map(|s| s.device)
            .unwrap_or([0.0; 2])
    }

    /// Maximization over the `tau_ap` grid only, restricting each `(tau_ap,
    /// Q1)` pair to a rectangle of energies. Returns the best choice and the
    /// best energy pair found per `(j, q)`, in `j`-major order. Anchor
    /// candidates are always searched in full.
    pub fn optimize_state_pruned(
        &self,
        b: [u32; 2],
        c: usize,
        k: &ValueFunction,
        hints: Option<(&[[u32; 2]], Orientation)>,
    ) -> (Choice, Vec<[u32; 2]>) {
        let kv = k.values();
        let n_j = self.tau_grid.len();
        let n_q = self.q_grid.len();
        let mut best = Choice::NONE;
        let mut best_key = Candidate {
            value: f64::NEG_INFINITY,
            tau_ap: 0.0,
            esum: 0,
            stored: 0,
        };
        let mut per_jq = Vec::with_capacity(n_j * n_q);
        let consider = |t: usize, q: usize, e: [u32; 2], best: &mut Choice, best_key: &mut Candidate| -> Option<Candidate> {
            let e_idx = self.state_index(e);
            let r = self.reward_at(c, t, e_idx);
            if r == f64::NEG_INFINITY {
                return None;
            }
            let n = self.next_state([b[0] - e[0], b[1] - e[1]], self.harvest_at(c, e_idx, t, q));
            let key = Candidate {
                value: r + kv[self.state_index(n)],
                tau_ap: self.tau_ap_of(e_idx, t),
                esum: e[0] + e[1],
                stored: n[0] + n[1],
            };
            if improves(&key, best_key) {
                *best_key = key;
                *best = Choice {
                    value: key.value,
                    t: t as u16,
                    q: q as u16,
                    e,
                    next: n,
                };
            }
            Some(key)
        };
        for j in 0..n_j {
            for q in 0..n_q {
                let rect = match hints {
                    Some((h, orientation)) => prune_bounds(h[j * n_q + q], b, orientation),
                    None => PruneRect::full(b),
                };
                let mut local = Candidate {
                    value: f64::NEG_INFINITY,
                    tau_ap: 0.0,
                    esum: 0,
                    stored: 0,
                };
                let mut local_e = [0, 0];
                for e1 in rect.e1.0..=rect.e1.1 {
                    for e2 in rect.e2.0..=rect.e2.1 {
                        if let Some(key) = consider(j, q, [e1, e2], &mut best, &mut best_key) {
                            if improves(&key, &local) {
                                local = key;
                                local_e = [e1, e2];
                            }
                        }
                    }
                }
                per_jq.push(local_e);
            }
        }
        for t in n_j..self.n_candidates() {
            for q in 0..n_q {
                for e1 in 0..=b[0] {
                    for e2 in 0..=b[1] {
                        consider(t, q, [e1, e2], &mut best, &mut best_key);
                    }
                }
            }
        }
        (best, per_jq)
    }

    /// Maximization over every channel of state `b`, reusing the optimum of
    /// a dominated channel to prune the energy search where one exists: a
    /// channel with the same downlink gains and one uplink gain no smaller
    /// and the other no larger.
    pub fn optimize_channels_pruned(&self, b: [u32; 2], k: &ValueFunction) -> Vec<Choice> {
        let n_c = self.pmf.len();
        let mut order: Vec<usize> = (0..n_c).collect();
        // visit channels by increasing h1, then decreasing h2
        order.sort_by(|&x, &y| {
            let (a, z) = (self.pmf.get(x), self.pmf.get(y));
            a.h[0].total_cmp(&z.h[0]).then(z.h[1].total_cmp(&a.h[1]))
        });
        let mut done: Vec<(usize, Vec<[u32; 2]>)> = Vec::new();
        let mut out = vec![Choice::NONE; n_c];
        for &c in &order {
            let o = self.pmf.get(c);
            let reference = done.iter().rev().find_map(|(r, hints)| {
                let p = self.pmf.get(*r);
                if p.g != o.g {
                    return None;
                }
                if o.h[0] >= p.h[0] && o.h[1] <= p.h[1] {
                    Some((hints.as_slice(), Orientation::FirstImproves))
                } else if o.h[0] <= p.h[0] && o.h[1] >= p.h[1] {
                    Some((hints.as_slice(), Orientation::SecondImproves))
                } else {
                    None
                }
            });
            let (choice, hints) = self.optimize_state_pruned(b, c, k, reference);
            out[c] = choice;
            done.push((c, hints));
        }
        out
    }

    /// Fast search for low-SNR channels: both devices transmit at maximum
    /// power and the transfer phase fills the rest of the slot, so only the
    /// energies and `Q1` are searched. The selection uses the linearized
    /// reward; the returned value uses the exact rate. Falls back to the full
    /// search when an uplink SNR at maximum power reaches `snr_threshold`.
    pub fn low_snr_fast_path(&self, b: [u32; 2], c: usize, k: &ValueFunction, snr_threshold: f64) -> FastPath {
        let o = self.pmf.get(c);
        let p = &self.params;
        let snr = [0, 1].map(|i| o.h[i] * p.devices[i].p_max / p.noise_power);
        if snr.iter().any(|&s| !(s < snr_threshold)) {
            let (action, value) = self.optimize_state(b, c, k);
            return FastPath {
                action,
                value,
                used: false,
            };
        }
        let kv = k.values();
        let scale = 1.0 / (p.noise_power * LOG_BASE.ln());
        let mut best: Option<(f64, u32, u32, [u32; 2], usize, [u32; 2])> = None;
        for e1 in 0..=b[0] {
            for e2 in 0..=b[1] {
                let e = [e1, e2];
                let e_idx = self.state_index(e);
                let tau_ap = self.anchor_tau[e_idx][0];
                if tau_ap.is_nan() {
                    continue;
                }
                let en = self.energies(e);
                let surrogate = (self.alpha * en[0] * o.h[0] + (1.0 - self.alpha) * en[1] * o.h[1]) * scale;
                for q in 0..self.q_grid.len() {
                    let n = self.next_state([b[0] - e1, b[1] - e2], self.harvest_quanta(o, tau_ap, q));
                    let v = surrogate + kv[self.state_index(n)];
                    let better = match best {
                        None => true,
                        Some((bv, besum, bstored, ..)) => {
                            let tol = 1e-12 * bv.abs().max(1.0);
                            v > bv + tol
                                || (v >= bv - tol
                                    && (e1 + e2 < besum || (e1 + e2 == besum && n[0] + n[1] > bstored)))
                        }
                    };
                    if better {
                        best = Some((v, e1 + e2, n[0] + n[1], e, q, n));
                    }
                }
            }
        }
        let (_, _, _, e, q, n) = best.expect("zero energies are always feasible");
        let en = self.energies(e);
        let tau_ap = self.anchor_tau[self.state_index(e)][0];
        let tau = [en[0] / p.devices[0].p_max, en[1] / p.devices[1].p_max];
        let split = weighted(tau, en, o.h, self.alpha, p);
        let action = assemble(&split, en, tau_ap, self.q_grid[q], p);
        FastPath {
            action,
            value: split.objective + kv[self.state_index(n)],
            used: true,
        }
    }
}

/// Outcome of [`Bellman::low_snr_fast_path`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastPath {
    pub action: Action,
    pub value: f64,
    /// False when the SNR check failed and the full search ran instead.
    pub used: bool,
}

/// Direction of the uplink change between a reference channel and the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `h1' >= h1` and `h2' <= h2`.
    FirstImproves,
    /// `h1' <= h1` and `h2' >= h2`.
    SecondImproves,
}

/// Inclusive energy ranges to search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneRect {
    pub e1: (u32, u32),
    pub e2: (u32, u32),
}

impl PruneRect {
    pub fn full(b: [u32; 2]) -> Self {
        PruneRect {
            e1: (0, b[0]),
            e2: (0, b[1]),
        }
    }
}

/// Energy search rectangle for a query channel given the optimal energies
/// `e_ref` of a reference channel: the device whose uplink improved spends
/// no less, the other no more.
pub fn prune_bounds(e_ref: [u32; 2], b: [u32; 2], orientation: Orientation) -> PruneRect {
    let e = [e_ref[0].min(b[0]), e_ref[1].min(b[1])];
    match orientation {
        Orientation::FirstImproves => PruneRect {
            e1: (e[0], b[0]),
            e2: (0, e[1]),
        },
        Orientation::SecondImproves => PruneRect {
            e1: (0, e[0]),
            e2: (e[1], b[1]),
        },
    }
}

/// Best action for a single channel realization `(g, h)`.
pub fn optimize_state(
    b: [u32; 2],
    g: [f64; 2],
    h: [f64; 2],
    alpha: f64,
    k: &ValueFunction,
    params: &SystemParams,
    grid: &GridSpec,
) -> Result<(Action, f64)> {
    let pmf = ChannelPmf::new(vec![ChannelOutcome { g, h, prob: 1.0 }])?;
    let bellman = Bellman::new(params, grid, &pmf, alpha, ActionOptions::default())?;
    Ok(bellman.optimize_state(b, 0, k))
}
