//! Approximate value iteration: the Bellman operator is applied only on a
//! rectilinear subset of battery states and the rest of the value function
//! is filled in by bilinear interpolation.
//!
//! The interpolation error `epsilon` is tracked on the subset plus an audit
//! sample of the remaining states, so that the distance to exact value
//! iteration after `N` sweeps can be checked against `N * epsilon`.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ActionOptions, Bellman};
use crate::channel::ChannelPmf;
use crate::error::{Error, Result};
use crate::mdp::{Normalization, Policy, ValueFunction};
use crate::model::{GridSpec, SystemParams};

/// How the evaluated subset is chosen at each iteration. Every subset is a
/// product of rows and columns that include both ends, so the four corner
/// states are always evaluated and interpolation never extrapolates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubsetSchedule {
    /// Every state, every iteration (plain value iteration).
    Full,
    /// Every `stride`-th level per device, plus the full level.
    Lattice { stride: u32 },
    /// Random rows and columns covering about `fraction` of the states,
    /// redrawn each iteration.
    Random { fraction: f64 },
}

impl Default for SubsetSchedule {
    fn default() -> Self {
        SubsetSchedule::Lattice { stride: 2 }
    }
}

impl SubsetSchedule {
    /// Rows (device 1 levels) and columns (device 2 levels) of the subset.
    pub fn axes<R: Rng>(&self, levels: [u32; 2], rng: &mut R) -> [Vec<u32>; 2] {
        match *self {
            SubsetSchedule::Full => levels.map(|l| (0..=l).collect()),
            SubsetSchedule::Lattice { stride } => levels.map(|l| {
                let s = stride.max(1);
                let mut v: Vec<u32> = (0..=l).step_by(s as usize).collect();
                if *v.last().unwrap() != l {
                    v.push(l);
                }
                v
            }),
            SubsetSchedule::Random { fraction } => levels.map(|l| {
                let n = l as usize + 1;
                let want = ((fraction.clamp(0.0, 1.0).sqrt() * n as f64).round() as usize).clamp(2.min(n), n);
                let mut v = vec![0, l];
                if want > 2 && n > 2 {
                    v.extend(sample(rng, n - 2, want - 2).into_iter().map(|i| i as u32 + 1));
                }
                v.sort_unstable();
                v.dedup();
                v
            }),
        }
    }
}

/// Bilinear interpolation from the values on `axes[0] x axes[1]` (row-major
/// in `known`) to the whole battery grid.
pub fn interpolate(levels: [u32; 2], axes: &[Vec<u32>; 2], known: &[f64]) -> ValueFunction {
    let bracket = |axis: &[u32], x: u32| -> (usize, usize, f64) {
        let j = axis.partition_point(|&a| a < x);
        if axis[j] == x {
            (j, j, 0.0)
        } else {
            let (a, b) = (axis[j - 1], axis[j]);
            (j - 1, j, (x - a) as f64 / (b - a) as f64)
        }
    };
    let nc = axes[1].len();
    ValueFunction::from_fn(levels, |b| {
        let (i0, i1, u) = bracket(&axes[0], b[0]);
        let (j0, j1, v) = bracket(&axes[1], b[1]);
        let k = |i: usize, j: usize| known[i * nc + j];
        (1.0 - u) * ((1.0 - v) * k(i0, j0) + v * k(i0, j1)) + u * ((1.0 - v) * k(i1, j0) + v * k(i1, j1))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxOptions {
    pub schedule: SubsetSchedule,
    /// Stop when the span of successive iterates drops below this; `None`
    /// uses `1e-6 * params.reward_scale()`. Zero runs exactly `max_iters`.
    pub tol: Option<f64>,
    pub max_iters: usize,
    /// Share of the states outside the subset audited for `epsilon`.
    pub audit_fraction: f64,
    pub seed: u64,
    pub normalization: Normalization,
    pub action: ActionOptions,
    /// Keep every iterate in the result.
    pub record_iterates: bool,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        ApproxOptions {
            schedule: SubsetSchedule::default(),
            tol: None,
            max_iters: 5000,
            audit_fraction: 0.1,
            seed: 0,
            normalization: Normalization::Relative,
            action: ActionOptions::default(),
            record_iterates: false,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxTraceRow {
    pub k: usize,
    pub subset_size: usize,
    pub epsilon_estimate: f64,
    pub span: f64,
}

#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub value: ValueFunction,
    /// Greedy policy of a final full sweep.
    pub policy: Policy,
    /// Largest interpolation error seen on evaluated states.
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gain: f64,
    pub trace: Vec<ApproxTraceRow>,
    /// `K~(0), K~(1), ...` when requested.
    pub iterates: Vec<ValueFunction>,
}

/// Approximate value iteration with prebuilt tables.
pub fn approx_value_iteration_with(
    bellman: &Bellman<'_>,
    options: &ApproxOptions,
    init: Option<&ValueFunction>,
) -> Result<ApproxResult> {
    let params = bellman.params();
    let levels = bellman.levels();
    let tol = options.tol.unwrap_or(1e-6 * params.reward_scale());
    if !(0.0..=1.0).contains(&options.audit_fraction) {
        return Err(Error::InvalidParameter("audit fraction must lie in [0, 1]".into()));
    }
    let mut k = match init {
        Some(v) if v.levels() != levels => {
            return Err(Error::MismatchedStateSpace {
                left: v.levels(),
                right: levels,
            })
        }
        Some(v) => v.clone(),
        None => ValueFunction::zeros(levels),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut iterates = Vec::new();
    if options.record_iterates {
        iterates.push(k.clone());
    }
    let mut trace = Vec::new();
    let mut epsilon: f64 = 0.0;
    let mut gain = 0.0;
    let mut converged = false;
    let width = levels[1] as usize + 1;

    for it in 0..options.max_iters {
        let axes = options.schedule.axes(levels, &mut rng);
        let mut in_subset = vec![false; bellman.n_states()];
        let mut states = Vec::with_capacity(axes[0].len() * axes[1].len());
        for &r in &axes[0] {
            for &c in &axes[1] {
                let s = r as usize * width + c as usize;
                in_subset[s] = true;
                states.push(s);
            }
        }
        let n_subset = states.len();
        let outside: Vec<usize> = (0..bellman.n_states()).filter(|&s| !in_subset[s]).collect();
        if options.audit_fraction >= 1.0 {
            states.extend(&outside);
        } else if options.audit_fraction > 0.0 && !outside.is_empty() {
            let m = ((options.audit_fraction * outside.len() as f64).round() as usize).max(1);
            states.extend(sample(&mut rng, outside.len(), m).into_iter().map(|i| outside[i]));
        }

        let tv = bellman.apply(&k, Some(&states), None);
        let next = interpolate(levels, &axes, &tv[..n_subset]);
        let eps_k = states[n_subset..]
            .iter()
            .zip(&tv[n_subset..])
            .map(|(&s, &t)| (next.values()[s] - t).abs())
            .fold(0.0, f64::max);
        epsilon = epsilon.max(eps_k);

        let (lo, hi) = next
            .values()
            .iter()
            .zip(k.values())
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let span = hi - lo;
        gain = 0.5 * (lo + hi);
        trace.push(ApproxTraceRow {
            k: it + 1,
            subset_size: n_subset,
            epsilon_estimate: eps_k,
            span,
        });
        k = next;
        if options.normalization == Normalization::Relative {
            k.normalize();
        }
        if options.record_iterates {
            iterates.push(k.clone());
        }
        if span < tol {
            converged = true;
            break;
        }
    }
    if !converged && tol > 0.0 {
        log::warn!("approximate value iteration stopped after {} iterations", trace.len());
    }
    let mut choices = Vec::new();
    bellman.apply(&k, None, Some(&mut choices));
    Ok(ApproxResult {
        policy: Policy::from_choices(bellman, &choices),
        value: k,
        epsilon,
        iterations: trace.len(),
        converged,
        gain,
        trace,
        iterates,
    })
}

/// Approximate value iteration for weight `alpha`.
pub fn approx_value_iteration(
    alpha: f64,
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    options: &ApproxOptions,
) -> Result<ApproxResult> {
    let bellman = Bellman::new(params, grid, pmf, alpha, options.action)?;
    approx_value_iteration_with(&bellman, options, None)
}

/// Whether `max_b |exact_b - approx_b| <= n * epsilon`, up to rounding.
pub fn verify_bound(exact: &ValueFunction, approx: &ValueFunction, n: usize, epsilon: f64) -> Result<bool> {
    let d = exact.sup_distance(approx)?;
    let scale = exact
        .values()
        .iter()
        .chain(approx.values())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    Ok(d <= n as f64 * epsilon + 1e-12 * scale)
}

/// Writes the per-iteration trace as CSV.
pub fn write_trace<W: Write>(trace: &[ApproxTraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
