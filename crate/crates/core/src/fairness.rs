//! Bisection on the weight `alpha` until both devices get the same
//! long-term throughput, and the throughput region traced by `alpha`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::Bellman;
use crate::approx::{approx_value_iteration_with, ApproxOptions};
use crate::channel::ChannelPmf;
use crate::error::{Error, Result};
use crate::mdp::{evaluate_policy, value_iteration_with, Evaluation, Policy, ThroughputPair, ValueFunction, ViOptions};
use crate::model::{GridSpec, SystemParams};

/// Which solver produces the `alpha`-optimal policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Solver {
    Exact,
    Approx(ApproxOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairOptions {
    /// Stop when `|G1 - G2| <= epsilon * max(G1, G2)`.
    pub epsilon: f64,
    pub max_bisect: usize,
    /// Stop bisecting once the bracket is this narrow and time-share.
    pub alpha_tol: f64,
    pub solver: Solver,
    pub vi: ViOptions,
}

impl Default for FairOptions {
    fn default() -> Self {
        FairOptions {
            epsilon: 1e-3,
            max_bisect: 30,
            alpha_tol: 1e-4,
            solver: Solver::Exact,
            vi: ViOptions::default(),
        }
    }
}

/// Policy solved at one weight, with its exact evaluation.
#[derive(Debug, Clone)]
pub struct WeightedSolution {
    pub alpha: f64,
    pub policy: Policy,
    pub value: ValueFunction,
    pub evaluation: Evaluation,
    pub iterations: usize,
    pub converged: bool,
}

impl WeightedSolution {
    pub fn throughput(&self) -> ThroughputPair {
        self.evaluation.throughput
    }
}

/// Time-sharing between the two bracketing policies: `lambda` of the time
/// with `low`, the rest with `high`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub lambda: f64,
    pub low: WeightedSolution,
    pub high: WeightedSolution,
}

/// One row of the bisection trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub alpha: f64,
    #[serde(rename = "G1_bps")]
    pub g1_bps: f64,
    #[serde(rename = "G2_bps")]
    pub g2_bps: f64,
}

#[derive(Debug, Clone)]
pub struct FairResult {
    /// Fair weight; the midpoint of the final bracket when time-sharing.
    pub alpha: f64,
    /// Deterministic policy at `alpha`, or the better-balanced bracket end.
    pub solution: WeightedSolution,
    /// Equal-throughput mixture when no single weight balanced the devices.
    pub mixture: Option<Mixture>,
    pub throughput: ThroughputPair,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl FairResult {
    /// Fair throughput `min(G1, G2)`, bits/s.
    pub fn fair_throughput(&self) -> f64 {
        self.throughput.min()
    }
}

/// Solves and evaluates the `alpha`-weighted problem, warm-started from
/// `init` when given.
pub fn solve_weighted(
    alpha: f64,
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    solver: &Solver,
    vi: &ViOptions,
    init: Option<&ValueFunction>,
) -> Result<WeightedSolution> {
    let bellman = Bellman::new(params, grid, pmf, alpha, vi.action)?;
    let (policy, value, iterations, converged) = match solver {
        Solver::Exact => {
            let r = value_iteration_with(&bellman, vi, init)?;
            (r.policy, r.value, r.iterations, r.converged)
        }
        Solver::Approx(opts) => {
            let r = approx_value_iteration_with(&bellman, opts, init)?;
            (r.policy, r.value, r.iterations, r.converged)
        }
    };
    let evaluation = evaluate_policy(&policy, pmf, params, grid)?;
    Ok(WeightedSolution {
        alpha,
        policy,
        value,
        evaluation,
        iterations,
        converged,
    })
}

fn balanced(t: &ThroughputPair, epsilon: f64) -> bool {
    (t.g1 - t.g2).abs() <= epsilon * t.g1.max(t.g2)
}

/// Bisection for the weight that equalizes the two throughputs. When the
/// discrete policies jump across equality, the final bracket's two
/// policies are time-shared so that both devices get the same average.
pub fn find_fair_alpha(
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    options: &FairOptions,
) -> Result<FairResult> {
    if !(options.epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let solve = |alpha: f64, init: Option<&ValueFunction>| {
        solve_weighted(alpha, pmf, params, grid, &options.solver, &options.vi, init)
    };
    let mut trace = Vec::new();
    let record = |s: &WeightedSolution, trace: &mut Vec<TraceRow>| {
        let t = s.throughput();
        trace.push(TraceRow {
            step: trace.len(),
            alpha: s.alpha,
            g1_bps: t.g1,
            g2_bps: t.g2,
        });
    };

    let mut lo = solve(0.0, None)?;
    record(&lo, &mut trace);
    // the two extremes favour opposite devices, so a warm start would only
    // slow the second one down
    let mut hi = solve(1.0, None)?;
    record(&hi, &mut trace);
    let mut all_converged = lo.converged && hi.converged;

    let finish = |s: WeightedSolution, trace: Vec<TraceRow>, converged: bool| FairResult {
        alpha: s.alpha,
        throughput: s.throughput(),
        solution: s,
        mixture: None,
        converged,
        trace,
    };

    // the bracket needs G1 <= G2 at the low end and G1 >= G2 at the high end
    if lo.throughput().g1 > lo.throughput().g2 {
        log::warn!("device 1 ahead even at alpha = 0");
        return Ok(finish(lo, trace, all_converged));
    }
    if hi.throughput().g1 < hi.throughput().g2 {
        log::warn!("device 2 ahead even at alpha = 1");
        return Ok(finish(hi, trace, all_converged));
    }
    for s in [&lo, &hi] {
        if balanced(&s.throughput(), options.epsilon) {
            let s = s.clone();
            return Ok(finish(s, trace, all_converged));
        }
    }

    for _ in 0..options.max_bisect {
        if hi.alpha - lo.alpha <= options.alpha_tol {
            break;
        }
        let mid = 0.5 * (lo.alpha + hi.alpha);
        let warm = if lo.evaluation.throughput.min() >= hi.evaluation.throughput.min() {
            &lo.value
        } else {
            &hi.value
        };
        let s = solve(mid, Some(warm))?;
        record(&s, &mut trace);
        all_converged &= s.converged;
        let t = s.throughput();
        if balanced(&t, options.epsilon) {
            return Ok(finish(s, trace, all_converged));
        }
        if t.g1 > t.g2 {
            hi = s;
        } else {
            lo = s;
        }
    }

    // time-share the bracket ends: lambda d_lo + (1 - lambda) d_hi = 0 with
    // d = G1 - G2, d_lo < 0 < d_hi
    let (tl, th) = (lo.throughput(), hi.throughput());
    let (dl, dh) = (tl.g1 - tl.g2, th.g1 - th.g2);
    let lambda = dh / (dh - dl);
    let mixed = ThroughputPair {
        g1: lambda * tl.g1 + (1.0 - lambda) * th.g1,
        g2: lambda * tl.g2 + (1.0 - lambda) * th.g2,
    };
    let alpha = 0.5 * (lo.alpha + hi.alpha);
    let closer = if dl.abs() <= dh.abs() { lo.clone() } else { hi.clone() };
    Ok(FairResult {
        alpha,
        solution: closer,
        mixture: Some(Mixture {
            lambda,
            low: lo,
            high: hi,
        }),
        throughput: mixed,
        converged: all_converged,
        trace,
    })
}

/// Optimal throughput pair for every weight in `alphas`, solved in order
/// with warm starts for the interior weights.
pub fn throughput_region(
    pmf: &ChannelPmf,
    params: &SystemParams,
    grid: &GridSpec,
    alphas: &[f64],
    solver: &Solver,
    vi: &ViOptions,
) -> Result<Vec<(f64, ThroughputPair)>> {
    if alphas.is_empty() {
        return Err(Error::InvalidParameter("empty alpha list".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidParameter(format!("alpha {a} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(alphas.len());
    let mut warm: Option<ValueFunction> = None;
    for &alpha in alphas {
        // the extremes ignore one device and start cold
        let init = if alpha == 0.0 || alpha == 1.0 { None } else { warm.as_ref() };
        let s = solve_weighted(alpha, pmf, params, grid, solver, vi, init)?;
        out.push((alpha, s.throughput()));
        warm = Some(s.value);
    }
    Ok(out)
}

/// Writes the bisection trace as CSV.
pub fn write_trace<W: Write>(trace: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `(alpha, G1_bps, G2_bps)` rows.
pub fn write_region<W: Write>(region: &[(f64, ThroughputPair)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha", "G1_bps", "G2_bps"])?;
    for (a, t) in region {
        out.write_record([format!("{a}"), format!("{:.6}", t.g1), format!("{:.6}", t.g2)])?;
    }
    out.flush()?;
    Ok(())
}
