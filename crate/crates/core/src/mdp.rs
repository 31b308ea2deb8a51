//! Average-reward value iteration over battery states and exact evaluation
//! of the resulting stationary policies.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionOptions, Bellman, Choice};
use crate::channel::ChannelPmf;
use crate::error::{Error, Result};
use crate::model::{GridSpec, SystemParams};

/// Relative value function `K` over battery states `(b1, b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    levels: [u32; 2],
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(levels: [u32; 2]) -> Self {
        Self::from_fn(levels, |_| 0.0)
    }

    pub fn from_fn<F: FnMut([u32; 2]) -> f64>(levels: [u32; 2], mut f: F) -> Self {
        let mut values = Vec::with_capacity((levels[0] as usize + 1) * (levels[1] as usize + 1));
        for b1 in 0..=levels[0] {
            for b2 in 0..=levels[1] {
                values.push(f([b1, b2]));
            }
        }
        ValueFunction { levels, values }
    }

    pub fn from_values(levels: [u32; 2], values: Vec<f64>) -> Result<Self> {
        let n = (levels[0] as usize + 1) * (levels[1] as usize + 1);
        if values.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} values for a {}x{} battery grid",
                values.len(),
                levels[0] + 1,
                levels[1] + 1
            )));
        }
        Ok(ValueFunction { levels, values })
    }

    pub fn levels(&self) -> [u32; 2] {
        self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, b: [u32; 2]) -> usize {
        b[0] as usize * (self.levels[1] as usize + 1) + b[1] as usize
    }

    #[inline]
    pub fn get(&self, b: [u32; 2]) -> f64 {
        self.values[self.index(b)]
    }

    pub fn set(&mut self, b: [u32; 2], v: f64) {
        let i = self.index(b);
        self.values[i] = v;
    }

    /// `max_b |self_b - other_b|`.
    pub fn sup_distance(&self, other: &ValueFunction) -> Result<f64> {
        if self.levels != other.levels {
            return Err(Error::MismatchedStateSpace {
                left: self.levels,
                right: other.levels,
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Subtracts `K(0, 0)` from every entry.
    pub fn normalize(&mut self) {
        let anchor = self.values[0];
        for v in &mut self.values {
            *v -= anchor;
        }
    }

    /// One row per state: `b1, b2, K`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["b1_quanta", "b2_quanta", "K"])?;
        for b1 in 0..=self.levels[0] {
            for b2 in 0..=self.levels[1] {
                out.write_record([b1.to_string(), b2.to_string(), format!("{:.12e}", self.get([b1, b2]))])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Stored decision of a policy in one `(battery, channel)` state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    /// Quanta consumed.
    pub e: [u32; 2],
    /// Next battery state.
    pub next: [u32; 2],
    /// Per-slot reward `tau_i R_i` per device.
    pub reward: [f64; 2],
}

/// Deterministic stationary policy over `(b1, b2, channel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    levels: [u32; 2],
    n_channels: usize,
    decisions: Vec<Decision>,
}

impl Policy {
    /// Builds a policy from table choices in state-major order.
    pub fn from_choices(bellman: &Bellman<'_>, choices: &[Choice]) -> Self {
        let n_c = bellman.pmf().len();
        let decisions = choices
            .iter()
            .enumerate()
            .map(|(k, ch)| {
                let c = k % n_c;
                Decision {
                    action: bellman.action(c, ch),
                    e: ch.e,
                    next: ch.next,
                    reward: bellman.device_rewards(c, ch),
                }
            })
            .collect();
        Policy {
            levels: bellman.levels(),
            n_channels: n_c,
            decisions,
        }
    }

    pub fn from_decisions(levels: [u32; 2], n_channels: usize, decisions: Vec<Decision>) -> Result<Self> {
        let n = (levels[0] as usize + 1) * (levels[1] as usize + 1) * n_channels;
        if decisions.len() != n {
            return Err(Error::InvalidParameter(format!("policy needs {n} decisions, got {}", decisions.len())));
        }
        Ok(Policy {
            levels,
            n_channels,
            decisions,
        })
    }

    pub fn levels(&self) -> [u32; 2] {
        self.levels
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_states(&self) -> usize {
        (self.levels[0] as usize + 1) * (self.levels[1] as usize + 1)
    }

    #[inline]
    pub fn get(&self, b: [u32; 2], channel: usize) -> &Decision {
        let s = b[0] as usize * (self.levels[1] as usize + 1) + b[1] as usize;
        &self.decisions[s * self.n_channels + channel]
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    /// One row per `(b1, b2, channel)` with the full action.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "b1_quanta", "b2_quanta", "channel", "tau1_s", "tau2_s", "tau_ap_s", "rho1_w", "rho2_w", "q1_w",
            "q2_w", "e1_quanta", "e2_quanta", "next_b1", "next_b2",
        ])?;
        for b1 in 0..=self.levels[0] {
            for b2 in 0..=self.levels[1] {
                for c in 0..self.n_channels {
                    let d = self.get([b1, b2], c);
                    let a = &d.action;
                    let mut row = vec![b1.to_string(), b2.to_string(), c.to_string()];
                    row.extend(
                        [a.tau[0], a.tau[1], a.tau_ap, a.rho[0], a.rho[1], a.q[0], a.q[1]]
                            .iter()
                            .map(|x| format!("{x:.9e}")),
                    );
                    row.extend([d.e[0], d.e[1], d.next[0], d.next[1]].iter().map(|x| x.to_string()));
                    out.write_record(&row)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Long-term throughput of each device, bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThroughputPair {
    pub g1: f64,
    pub g2: f64,
}

impl ThroughputPair {
    pub fn min(&self) -> f64 {
        self.g1.min(self.g2)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.g1, self.g2]
    }
}

/// How iterates are anchored between sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Subtract `K(0, 0)` after every sweep.
    #[default]
    Relative,
    /// Plain iterates `K <- T(K)`, which grow linearly with the gain.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    /// Stop when `span(T(K) - K)` drops below this. `None` uses
    /// `1e-6 * params.reward_scale()`.
    pub tol: Option<f64>,
    pub max_iters: usize,
    pub normalization: Normalization,
    /// Step `K <- (1 - l) K + l T(K)`; values below 1 remove periodicity.
    pub relaxation: f64,
    pub action: ActionOptions,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            tol: None,
            max_iters: 5000,
            normalization: Normalization::Relative,
            relaxation: 1.0,
            action: ActionOptions::default(),
        }
    }
}

impl ViOptions {
    pub fn tolerance(&self, params: &SystemParams) -> f64 {
        self.tol.unwrap_or(1e-6 * params.reward_scale())
    }
}

#[derive(Debug, Clone)]
pub struct ViResult {
    pub value: ValueFunction,
    /// Greedy policy of the last sweep.
    pub policy: Policy,
    /// Number of sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// Midpoint of `T(K) - K` at the last sweep: the optimal per-slot
    /// weighted reward.
    pub gain: f64,
    /// `span(T(K) - K)` per sweep.
    pub spans: Vec<f64>,
}

/// `T(K)` on every battery state.
pub fn bellman_operator(bellman: &Bellman<'_>, k: &ValueFunction) -> ValueFunction {
    ValueFunction {
        levels: k.levels(),
        values: bellman.apply(k, None, None),
    }
}

/// Relative value iteration with prebuilt tables, optionally warm-started.
pub fn value_iteration_with(bellman: &Bellman<'_>, options: &ViOptions, init: Option<&ValueFunction>) -> Result<ViResult> {
    let params = bellman.params();
    if !(options.relaxation > 0.0 && options.relaxation <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation must lie in (0, 1], got {}",
            options.relaxation
        )));
    }
    let tol = options.tolerance(params);
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be non-negative, got {tol}")));
    }
    let mut k = match init {
        Some(v) => {
            if v.levels() != bellman.levels() {
                return Err(Error::MismatchedStateSpace {
                    left: v.levels(),
                    right: bellman.levels(),
                });
            }
            v.clone()
        }
        None => ValueFunction::zeros(bellman.levels()),
    };
    let mut choices = Vec::new();
    let mut spans = Vec::new();
    let mut gain = 0.0;
    let mut converged = false;
    let lambda = options.relaxation;
    for _ in 0..options.max_iters {
        let tk = bellman.apply(&k, None, Some(&mut choices));
        let (lo, hi) = tk
            .iter()
            .zip(k.values())
            .map(|(t, v)| t - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let span = hi - lo;
        spans.push(span);
        gain = 0.5 * (lo + hi);
        for (v, t) in k.values_mut().iter_mut().zip(&tk) {
            *v = (1.0 - lambda) * *v + lambda * t;
        }
        if options.normalization == Normalization::Relative {
            k.normalize();
        }
        if span < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "value iteration stopped after {} sweeps with span {:.3e} (tolerance {:.3e})",
            spans.len(),
            spans.last().copied().unwrap_or(f64::NAN),
            tol
        );
    }
    Ok(ViResult {
        policy: Policy::from_choices(bellman, &choices),
        value: k,
        iterations: spans.len(),
        converged,
        gain,
        spans,
    })
}

/// Optimal `alpha`-weighted policy by relative value iteration.
pub fn value_iteration(
    alpha: f64,
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    options: &ViOptions,
) -> Result<ViResult> {
    let bellman = Bellman::new(params, grid, pmf, alpha, options.action)?;
    value_iteration_with(&bellman, options, None)
}

/// Steady-state slot averages of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotAverages {
    /// Transmission power, zero in slots where the device is silent.
    pub rho: [f64; 2],
    /// `Q_i / Q_max`.
    pub q_frac: [f64; 2],
    pub tau: [f64; 2],
    pub tau_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub throughput: ThroughputPair,
    /// Per-slot reward `E[tau_i R_i]` per device.
    pub per_slot: [f64; 2],
    /// Long-run state occupation starting from full batteries.
    pub stationary: Vec<f64>,
    /// Number of closed classes in the induced chain.
    pub closed_classes: usize,
    /// More than one closed class: the averages depend on the start state.
    pub multichain: bool,
    pub averages: SlotAverages,
}

/// Transition matrix over battery states induced by `policy`, row-major.
pub fn transition_matrix(policy: &Policy, pmf: &ChannelPmf) -> DMatrix<f64> {
    let n = policy.n_states();
    let w = policy.levels()[1] as usize + 1;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let b = [(s / w) as u32, (s % w) as u32];
        for (c, o) in pmf.outcomes().iter().enumerate() {
            let nx = policy.get(b, c).next;
            p[(s, nx[0] as usize * w + nx[1] as usize)] += o.prob;
        }
    }
    p
}

/// Stationary distribution of the restriction of `p` to the closed class
/// `class`.
fn class_stationary(p: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let m = class.len();
    let mut a = DMatrix::zeros(m, m);
    for (i, &s) in class.iter().enumerate() {
        for (j, &t) in class.iter().enumerate() {
            // row j of (P^T - I)
            a[(j, i)] = p[(s, t)];
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotConverged("singular stationary system".into()))?;
    Ok(x.iter().copied().collect())
}

/// Long-run occupation from `start`, plus the closed classes of the chain.
pub fn long_run_distribution(p: &DMatrix<f64>, start: usize) -> Result<(Vec<f64>, usize)> {
    let n = p.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 4);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for s in 0..n {
        for t in 0..n {
            if p[(s, t)] > 0.0 {
                graph.add_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut class_of = vec![usize::MAX; n];
    for (k, scc) in sccs.iter().enumerate() {
        for v in scc {
            class_of[v.index()] = k;
        }
    }
    let closed: Vec<usize> = (0..sccs.len())
        .filter(|&k| {
            sccs[k]
                .iter()
                .all(|v| (0..n).all(|t| p[(v.index(), t)] == 0.0 || class_of[t] == k))
        })
        .collect();

    // states reachable from the start
    let mut reach = vec![false; n];
    let mut stack = vec![start];
    reach[start] = true;
    while let Some(s) = stack.pop() {
        for t in 0..n {
            if p[(s, t)] > 0.0 && !reach[t] {
                reach[t] = true;
                stack.push(t);
            }
        }
    }
    let reachable_closed: Vec<usize> = closed.iter().copied().filter(|&k| reach[sccs[k][0].index()]).collect();

    // absorption probabilities from the start into each reachable class
    let weights: Vec<f64> = if reachable_closed.len() == 1 {
        vec![1.0]
    } else if let Some(pos) = reachable_closed.iter().position(|&k| class_of[start] == k) {
        let mut w = vec![0.0; reachable_closed.len()];
        w[pos] = 1.0;
        w
    } else {
        let is_closed = |s: usize| reachable_closed.contains(&class_of[s]);
        let transient: Vec<usize> = (0..n).filter(|&s| reach[s] && !is_closed(s)).collect();
        let m = transient.len();
        let mut a = DMatrix::identity(m, m);
        for (i, &s) in transient.iter().enumerate() {
            for (j, &t) in transient.iter().enumerate() {
                a[(i, j)] -= p[(s, t)];
            }
        }
        let mut rhs = DMatrix::zeros(m, reachable_closed.len());
        for (i, &s) in transient.iter().enumerate() {
            for t in 0..n {
                if let Some(k) = reachable_closed.iter().position(|&k| class_of[t] == k) {
                    rhs[(i, k)] += p[(s, t)];
                }
            }
        }
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NotConverged("singular absorption system".into()))?;
        let row = transient.iter().position(|&s| s == start).expect("start is transient");
        (0..reachable_closed.len()).map(|k| x[(row, k)]).collect()
    };

    let mut pi = vec![0.0; n];
    for (&k, &w) in reachable_closed.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let class: Vec<usize> = sccs[k].iter().map(|v| v.index()).collect();
        let local = class_stationary(p, &class)?;
        for (&s, &x) in class.iter().zip(&local) {
            pi[s] += w * x;
        }
    }
    Ok((pi, closed.len()))
}

/// Exact long-term throughputs of `policy`, starting from full batteries.
pub fn evaluate_policy(policy: &Policy, pmf: &ChannelPmf, params: &SystemParams, grid: &GridSpec) -> Result<Evaluation> {
    if policy.levels() != grid.battery_levels || policy.n_channels() != pmf.len() {
        return Err(Error::MismatchedStateSpace {
            left: policy.levels(),
            right: grid.battery_levels,
        });
    }
    let p = transition_matrix(policy, pmf);
    let levels = policy.levels();
    let w = levels[1] as usize + 1;
    let start = levels[0] as usize * w + levels[1] as usize;
    let (pi, closed) = long_run_distribution(&p, start)?;
    if closed > 1 {
        log::info!("policy induces {closed} closed classes; averaging from full batteries");
    }

    let mut per_slot = [0.0; 2];
    let mut avg = SlotAverages::default();
    for (s, &weight) in pi.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let b = [(s / w) as u32, (s % w) as u32];
        for (c, o) in pmf.outcomes().iter().enumerate() {
            let d = policy.get(b, c);
            let f = weight * o.prob;
            let a = &d.action;
            for i in 0..2 {
                per_slot[i] += f * d.reward[i];
                avg.rho[i] += f * a.rho[i];
                avg.tau[i] += f * a.tau[i];
                if params.q_max > 0.0 {
                    avg.q_frac[i] += f * a.q[i] / params.q_max;
                }
            }
            avg.tau_ap += f * a.tau_ap;
        }
    }
    Ok(Evaluation {
        throughput: ThroughputPair {
            g1: params.throughput_bps(per_slot[0]),
            g2: params.throughput_bps(per_slot[1]),
        },
        per_slot,
        stationary: pi,
        closed_classes: closed,
        multichain: closed > 1,
        averages: avg,
    })
}
