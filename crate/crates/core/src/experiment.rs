//! Experiment driver behind the `wpcn` binary: TOML configuration, the named
//! experiments, their CSV outputs and a JSON run manifest.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::approx::{ApproxOptions, SubsetSchedule};
use crate::channel::{build_channel_pmf, ChannelPmf, FadingModel};
use crate::error::{Error, Result};
use crate::fairness::{find_fair_alpha, solve_weighted, throughput_region, write_region, write_trace, FairOptions, Solver};
use crate::mdp::{SlotAverages, ViOptions};
use crate::model::{noise_power_from_density, DeviceParams, GridPreset, GridSpec, Rounding, SystemParams};
use crate::sim::{replicate, write_trajectory, SimOptions};
use crate::slot::{long_term_slot_reward, slot_policy_averages, solve_slot};

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 8] = [
    "slot-division",
    "approx-vs-exact",
    "throughput-region",
    "battery-sweep",
    "distance-sweep",
    "fair-point",
    "slot-baseline",
    "simulate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub slot: f64,
    pub q_max: f64,
    pub eta: f64,
    pub noise_dbm_per_hz: f64,
    pub bandwidth: f64,
    pub fading: FadingModel,
    /// Same fading on a device's uplink and downlink.
    pub reciprocity: bool,
}

impl Default for SystemSection {
    fn default() -> Self {
        let p = SystemParams::default();
        SystemSection {
            slot: p.slot,
            q_max: p.q_max,
            eta: p.eta,
            noise_dbm_per_hz: -155.0,
            bandwidth: p.bandwidth,
            fading: FadingModel::Rayleigh,
            reciprocity: true,
        }
    }
}

/// Per-device overrides; unset fields keep the reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub distance: Option<f64>,
    pub h0: Option<f64>,
    pub g0: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub b_max: Option<f64>,
}

impl DeviceSection {
    fn apply(&self, d: &mut DeviceParams) {
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut d.distance, self.distance);
        set(&mut d.h0, self.h0);
        set(&mut d.g0, self.g0);
        set(&mut d.gamma, self.gamma);
        set(&mut d.delta, self.delta);
        set(&mut d.p_min, self.p_min);
        set(&mut d.p_max, self.p_max);
        set(&mut d.b_max, self.b_max);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub preset: GridPreset,
    pub battery_levels: Option<[u32; 2]>,
    pub fading_bins: Option<usize>,
    pub tau_ap_points: Option<usize>,
    pub q1_points: Option<usize>,
    pub rounding: Rounding,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            preset: GridPreset::Default,
            battery_levels: None,
            fading_bins: None,
            tau_ap_points: None,
            q1_points: None,
            rounding: Rounding::Floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub max_bisect: usize,
    pub alpha_tol: f64,
    /// Span tolerance, per-slot reward units; unset scales with the rates.
    pub vi_tol: Option<f64>,
    pub max_iters: usize,
    pub relaxation: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let f = FairOptions::default();
        let v = ViOptions::default();
        SolverSection {
            epsilon: f.epsilon,
            max_bisect: f.max_bisect,
            alpha_tol: f.alpha_tol,
            vi_tol: v.tol,
            max_iters: v.max_iters,
            relaxation: v.relaxation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSection {
    pub schedule: SubsetSchedule,
    pub audit_fraction: f64,
}

impl Default for ApproxSection {
    fn default() -> Self {
        let a = ApproxOptions::default();
        ApproxSection {
            schedule: a.schedule,
            audit_fraction: a.audit_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub alphas: Vec<f64>,
    /// One curve per fading model.
    pub fading: Vec<FadingModel>,
}

impl Default for RegionSection {
    fn default() -> Self {
        RegionSection {
            alphas: (0..=20).map(|k| k as f64 / 20.0).collect(),
            fading: vec![FadingModel::Rayleigh, FadingModel::Nakagami { m: 5.0 }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySweepSection {
    /// Battery capacities applied to both devices, joules.
    pub b_max: Vec<f64>,
    /// Largest energy quantum, joules: battery level counts grow with the
    /// capacity past this. Unset keeps the configured counts.
    pub max_quantum: Option<f64>,
}

impl Default for BatterySweepSection {
    fn default() -> Self {
        BatterySweepSection {
            b_max: vec![1e-4, 2e-4, 3e-4, 4e-4, 5e-4, 6e-4, 7e-4, 8e-4, 9e-4, 1e-3],
            max_quantum: Some(0.05e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerPreset {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSweepSection {
    pub d1: f64,
    pub d2: Vec<f64>,
    /// One curve per power range, applied to both devices.
    pub powers: Vec<PowerPreset>,
}

impl Default for DistanceSweepSection {
    fn default() -> Self {
        DistanceSweepSection {
            d1: 2.0,
            d2: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            powers: vec![
                PowerPreset {
                    name: "high-power".into(),
                    p_min: 1e-3,
                    p_max: 10e-3,
                },
                PowerPreset {
                    name: "low-power".into(),
                    p_min: 1e-5,
                    p_max: 0.5e-3,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxVsExactSection {
    pub d1: Vec<f64>,
    /// One curve per battery capacity, joules.
    pub b_max: Vec<f64>,
}

impl Default for ApproxVsExactSection {
    fn default() -> Self {
        ApproxVsExactSection {
            d1: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            b_max: vec![0.1e-3, 0.15e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_slots: u64,
    pub replications: usize,
    /// Weight of the simulated policy; unset uses the fair weight.
    pub alpha: Option<f64>,
    pub trajectory_slots: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n_slots: 1_000_000,
            replications: 4,
            alpha: None,
            trajectory_slots: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotDivisionSection {
    /// Weight of the unbalanced scenario.
    pub alpha: f64,
}

impl Default for SlotDivisionSection {
    fn default() -> Self {
        SlotDivisionSection { alpha: 0.5 }
    }
}

/// Whole configuration file. Every section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub system: SystemSection,
    pub device1: DeviceSection,
    pub device2: DeviceSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub approx: ApproxSection,
    pub region: RegionSection,
    pub battery_sweep: BatterySweepSection,
    pub distance_sweep: DistanceSweepSection,
    pub approx_vs_exact: ApproxVsExactSection,
    pub simulate: SimulateSection,
    pub slot_division: SlotDivisionSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn params(&self) -> Result<SystemParams> {
        let s = &self.system;
        let mut p = SystemParams {
            slot: s.slot,
            q_max: s.q_max,
            eta: s.eta,
            noise_power: noise_power_from_density(s.noise_dbm_per_hz, s.bandwidth),
            bandwidth: s.bandwidth,
            ..SystemParams::default()
        };
        self.device1.apply(&mut p.devices[0]);
        self.device2.apply(&mut p.devices[1]);
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let s = &self.grid;
        let mut g = GridSpec::preset(s.preset);
        if let Some(v) = s.battery_levels {
            g.battery_levels = v;
        }
        if let Some(v) = s.fading_bins {
            g.fading_bins = v;
        }
        if let Some(v) = s.tau_ap_points {
            g.tau_ap_points = v;
        }
        if let Some(v) = s.q1_points {
            g.q1_points = v;
        }
        g.rounding = s.rounding;
        g.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(g)
    }

    pub fn vi_options(&self) -> ViOptions {
        ViOptions {
            tol: self.solver.vi_tol,
            max_iters: self.solver.max_iters,
            relaxation: self.solver.relaxation,
            ..ViOptions::default()
        }
    }

    pub fn approx_options(&self) -> ApproxOptions {
        ApproxOptions {
            schedule: self.approx.schedule,
            tol: self.solver.vi_tol,
            max_iters: self.solver.max_iters,
            audit_fraction: self.approx.audit_fraction,
            seed: self.seed,
            ..ApproxOptions::default()
        }
    }

    pub fn fair_options(&self, solver: Solver) -> FairOptions {
        FairOptions {
            epsilon: self.solver.epsilon,
            max_bisect: self.solver.max_bisect,
            alpha_tol: self.solver.alpha_tol,
            solver,
            vi: self.vi_options(),
        }
    }
}

/// Process exit status for an error: 2 configuration or usage, 3 unknown
/// experiment, 4 non-convergence, 5 unwritable output, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::UnsupportedFading(_) => 2,
        Error::UnknownExperiment(_) => 3,
        Error::NotConverged(_) => 4,
        Error::Io(_) | Error::Csv(_) => 5,
        _ => 1,
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment: String,
    pub files: Vec<PathBuf>,
    /// Experiment-specific results, also stored in the manifest.
    pub results: Value,
    /// Every value iteration reached its tolerance.
    pub converged: bool,
}

struct Run<'a> {
    out: &'a Path,
    files: Vec<PathBuf>,
    converged: bool,
}

impl Run<'_> {
    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }
}

/// One sweep point: exact and approximate fair throughputs plus the
/// slot-oriented baseline, bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x_value: f64,
    #[serde(rename = "G_mdp_bps")]
    pub g_mdp: f64,
    #[serde(rename = "G_slot_bps")]
    pub g_slot: f64,
    #[serde(rename = "G_approx_bps")]
    pub g_approx: f64,
    #[serde(skip)]
    pub converged: bool,
}

/// Evaluates one sweep point.
pub fn sweep_point(config: &Config, params: &SystemParams, grid: &GridSpec, x_value: f64) -> Result<SweepPoint> {
    params.validate()?;
    let pmf = build_channel_pmf(params, grid, config.system.fading, config.system.reciprocity)?;
    let exact = find_fair_alpha(&pmf, params, grid, &config.fair_options(Solver::Exact))?;
    let approx = find_fair_alpha(&pmf, params, grid, &config.fair_options(Solver::Approx(config.approx_options())))?;
    Ok(SweepPoint {
        x_value,
        g_mdp: exact.fair_throughput(),
        g_slot: long_term_slot_reward(&pmf, params)?,
        g_approx: approx.fair_throughput(),
        converged: exact.converged && approx.converged,
    })
}

fn sweep<F>(config: &Config, grid: &GridSpec, xs: &[f64], run: &mut Run<'_>, file: &str, mut set: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(f64) -> Result<SystemParams>,
{
    sweep_with_grids(config, xs, run, file, |x| Ok((set(x)?, *grid)))
}

fn sweep_with_grids<F>(config: &Config, xs: &[f64], run: &mut Run<'_>, file: &str, mut set: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(f64) -> Result<(SystemParams, GridSpec)>,
{
    if xs.is_empty() {
        return Err(Error::Config(format!("empty sweep for {file}")));
    }
    let setups: Vec<(SystemParams, GridSpec)> = xs.iter().map(|&x| set(x)).collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = xs
        .par_iter()
        .zip(&setups)
        .map(|(&x, (p, g))| sweep_point(config, p, g, x))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(run.create(file)?);
    for p in &points {
        w.serialize(p)?;
        run.converged &= p.converged;
    }
    w.flush()?;
    Ok(points)
}

/// Both batteries set to `b_max` joules.
pub fn battery_sweep_params(params: &SystemParams, b_max: f64) -> SystemParams {
    let mut p = *params;
    p.devices[0].b_max = b_max;
    p.devices[1].b_max = b_max;
    p
}

fn pmf_for(config: &Config, params: &SystemParams, grid: &GridSpec) -> Result<ChannelPmf> {
    build_channel_pmf(params, grid, config.system.fading, config.system.reciprocity)
}

fn averages_rows(w: &mut csv::Writer<BufWriter<File>>, scenario: &str, avg: &SlotAverages, g: [f64; 2]) -> Result<()> {
    for i in 0..2 {
        let dev = (i + 1).to_string();
        w.write_record([format!("{scenario}/rho_w"), dev.clone(), format!("{:.9e}", avg.rho[i])])?;
        w.write_record([format!("{scenario}/q_frac"), dev.clone(), format!("{:.9}", avg.q_frac[i])])?;
        w.write_record([format!("{scenario}/tau_s"), dev.clone(), format!("{:.9}", avg.tau[i])])?;
        w.write_record([format!("{scenario}/G_bps"), dev, format!("{:.6}", g[i])])?;
    }
    w.write_record([format!("{scenario}/tau_s"), "ap".into(), format!("{:.9}", avg.tau_ap)])?;
    Ok(())
}

fn dir_name(x: f64, unit: &str) -> String {
    format!("{unit}_{x}")
}

fn run_named(config: &Config, name: &str, run: &mut Run<'_>) -> Result<Value> {
    let params = config.params()?;
    let grid = config.grid()?;
    match name {
        "fair-point" => {
            let pmf = pmf_for(config, &params, &grid)?;
            let r = find_fair_alpha(&pmf, &params, &grid, &config.fair_options(Solver::Exact))?;
            run.converged &= r.converged;
            write_trace(&r.trace, run.create("fair.csv")?)?;
            let avg = r.solution.evaluation.averages;
            Ok(json!({
                "alpha_bar": r.alpha,
                "fair_throughput_bps": r.fair_throughput(),
                "G1_bps": r.throughput.g1,
                "G2_bps": r.throughput.g2,
                "time_sharing_lambda": r.mixture.as_ref().map(|m| m.lambda),
                "q_frac": avg.q_frac,
                "bisection_steps": r.trace.len(),
            }))
        }
        "slot-division" => {
            let pmf = pmf_for(config, &params, &grid)?;
            let fair = find_fair_alpha(&pmf, &params, &grid, &config.fair_options(Solver::Exact))?;
            let alpha = config.slot_division.alpha;
            let unbalanced = solve_weighted(alpha, &pmf, &params, &grid, &Solver::Exact, &config.vi_options(), None)?;
            run.converged &= fair.converged && unbalanced.converged;
            let slot_avg = slot_policy_averages(&pmf, &params)?;
            let g_slot = long_term_slot_reward(&pmf, &params)?;
            let mut w = csv::Writer::from_writer(run.create("slotdiv.csv")?);
            w.write_record(["quantity", "device", "value"])?;
            let fair_avg = fair.solution.evaluation.averages;
            averages_rows(&mut w, "fair", &fair_avg, fair.solution.throughput().as_array())?;
            averages_rows(&mut w, "unbalanced", &unbalanced.evaluation.averages, unbalanced.throughput().as_array())?;
            averages_rows(&mut w, "slot", &slot_avg, [g_slot; 2])?;
            w.flush()?;
            Ok(json!({
                "alpha_bar": fair.alpha,
                "unbalanced_alpha": alpha,
                "unbalanced_G_bps": unbalanced.throughput().as_array(),
                "unbalanced_q_frac": unbalanced.evaluation.averages.q_frac,
            }))
        }
        "throughput-region" => {
            let region_cfg = &config.region;
            if region_cfg.alphas.is_empty() {
                return Err(Error::Config("throughput-region needs a non-empty alpha list".into()));
            }
            if region_cfg.fading.is_empty() {
                return Err(Error::Config("throughput-region needs at least one fading model".into()));
            }
            let curves: Vec<_> = region_cfg
                .fading
                .par_iter()
                .map(|&model| {
                    let pmf = build_channel_pmf(&params, &grid, model, config.system.reciprocity)?;
                    let region =
                        throughput_region(&pmf, &params, &grid, &region_cfg.alphas, &Solver::Exact, &config.vi_options())?;
                    let fair = find_fair_alpha(&pmf, &params, &grid, &config.fair_options(Solver::Exact))?;
                    Ok((model, region, fair.fair_throughput(), fair.converged))
                })
                .collect::<Result<_>>()?;
            let mut fair = serde_json::Map::new();
            for (model, region, g, conv) in curves {
                write_region(&region, run.create(&format!("{model}/region.csv"))?)?;
                run.converged &= conv;
                fair.insert(model.to_string(), json!(g));
            }
            Ok(json!({ "fair_throughput_bps": fair }))
        }
        "battery-sweep" => {
            let s = &config.battery_sweep;
            if s.max_quantum.is_some_and(|q| !(q > 0.0)) {
                return Err(Error::Config("battery_sweep.max_quantum must be positive".into()));
            }
            let pts = sweep_with_grids(config, &s.b_max, run, "sweep.csv", |b| {
                let p = battery_sweep_params(&params, b);
                let g = s.max_quantum.map_or(grid, |q| grid.with_max_quantum(&p, q));
                Ok((p, g))
            })?;
            Ok(json!({ "x": "b_max_j", "points": pts }))
        }
        "distance-sweep" => {
            let s = &config.distance_sweep;
            if s.powers.is_empty() {
                return Err(Error::Config("distance-sweep needs at least one power preset".into()));
            }
            let mut out = serde_json::Map::new();
            for preset in &s.powers {
                let pts = sweep(config, &grid, &s.d2, run, &format!("{}/sweep.csv", preset.name), |d2| {
                    let mut p = params;
                    p.devices[0].distance = s.d1;
                    p.devices[1].distance = d2;
                    for d in &mut p.devices {
                        d.p_min = preset.p_min;
                        d.p_max = preset.p_max;
                    }
                    Ok(p)
                })?;
                out.insert(preset.name.clone(), json!(pts));
            }
            Ok(json!({ "x": "d2_m", "d1_m": s.d1, "curves": out }))
        }
        "approx-vs-exact" => {
            let s = &config.approx_vs_exact;
            if s.b_max.is_empty() {
                return Err(Error::Config("approx-vs-exact needs at least one battery size".into()));
            }
            let mut out = serde_json::Map::new();
            for &b in &s.b_max {
                let dir = dir_name(b * 1e3, "bmax_mj");
                let pts = sweep(config, &grid, &s.d1, run, &format!("{dir}/sweep.csv"), |d1| {
                    let mut p = params;
                    p.devices[0].distance = d1;
                    p.devices[0].b_max = b;
                    p.devices[1].b_max = b;
                    Ok(p)
                })?;
                out.insert(dir, json!(pts));
            }
            Ok(json!({ "x": "d1_m", "curves": out }))
        }
        "slot-baseline" => {
            let pmf = pmf_for(config, &params, &grid)?;
            let mut w = csv::Writer::from_writer(run.create("slot.csv")?);
            w.write_record([
                "outcome", "prob", "g1", "g2", "h1", "h2", "tau1_s", "tau2_s", "tau_ap_s", "rho1_w", "rho2_w", "q1_w",
                "q2_w", "reward_s_bphz", "status",
            ])?;
            for (k, o) in pmf.outcomes().iter().enumerate() {
                let s = solve_slot(o.g, o.h, &params)?;
                let mut rec = vec![k.to_string()];
                rec.extend(
                    [o.prob, o.g[0], o.g[1], o.h[0], o.h[1], s.tau1, s.tau2, s.tau_ap, s.rho1, s.rho2, s.q1, s.q2, s.reward]
                        .iter()
                        .map(|v| format!("{v:e}")),
                );
                rec.push(format!("{:?}", s.status).to_lowercase());
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(json!({ "G_slot_bps": long_term_slot_reward(&pmf, &params)? }))
        }
        "simulate" => {
            let s = &config.simulate;
            let pmf = pmf_for(config, &params, &grid)?;
            let sol = match s.alpha {
                Some(a) => solve_weighted(a, &pmf, &params, &grid, &Solver::Exact, &config.vi_options(), None)?,
                None => find_fair_alpha(&pmf, &params, &grid, &config.fair_options(Solver::Exact))?.solution,
            };
            run.converged &= sol.converged;
            let opts = SimOptions {
                n_slots: s.n_slots,
                seed: config.seed,
                record_slots: s.trajectory_slots,
                ..SimOptions::default()
            };
            let reps = replicate(&sol.policy, &pmf, &params, &grid, &opts, s.replications.max(1))?;
            let mut w = csv::Writer::from_writer(run.create("sim.csv")?);
            w.write_record(["seed", "G1_bps", "G2_bps", "se1_bps", "se2_bps"])?;
            for (k, r) in reps.iter().enumerate() {
                w.write_record([
                    (config.seed + k as u64).to_string(),
                    format!("{:.6}", r.throughput.g1),
                    format!("{:.6}", r.throughput.g2),
                    format!("{:.6}", r.std_err[0]),
                    format!("{:.6}", r.std_err[1]),
                ])?;
            }
            w.flush()?;
            if s.trajectory_slots > 0 {
                write_trajectory(&reps[0].trajectory, run.create("trajectory.csv")?)?;
            }
            Ok(json!({
                "alpha": sol.alpha,
                "analytic_G_bps": sol.throughput().as_array(),
                "simulated_G_bps": reps.iter().map(|r| r.throughput.as_array()).collect::<Vec<_>>(),
            }))
        }
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

/// Runs experiment `name` and writes its CSV files and `manifest.json`
/// under `out`. A run whose value iterations hit their iteration cap still
/// writes everything; the summary reports `converged = false`.
pub fn run_experiment(config: &Config, name: &str, out: &Path) -> Result<RunSummary> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::UnknownExperiment(name.to_string()));
    }
    let params = config.params()?;
    let grid = config.grid()?;
    fs::create_dir_all(out)?;
    let started = Instant::now();
    let mut run = Run {
        out,
        files: Vec::new(),
        converged: true,
    };
    let results = run_named(config, name, &mut run)?;
    let manifest = json!({
        "experiment": name,
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "config": config,
        "resolved_params": params,
        "resolved_grid": grid,
        "results": results,
        "converged": run.converged,
        "files": run.files.iter().map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string()).collect::<Vec<_>>(),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))? + "\n")?;
    run.files.push(path);
    Ok(RunSummary {
        experiment: name.to_string(),
        files: run.files,
        results,
        converged: run.converged,
    })
}
