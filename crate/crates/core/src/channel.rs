//! Fading models and the discrete joint channel distribution `f(g, h)`.
//!
//! Each link gain is `mean_gain * fading`, with a unit-mean fading power.
//! Continuous fading is discretized into equal-probability bins whose
//! representative value is the conditional mean inside the bin, so the
//! discrete distribution keeps the unit mean exactly.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::model::{GridSpec, SystemParams};
use crate::roots;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FadingModel {
    /// Exponentially distributed power gain with unit mean.
    Rayleigh,
    /// Nakagami-m amplitude, i.e. `Gamma(m, 1/m)` power gain.
    Nakagami { m: f64 },
    /// No fading.
    Deterministic,
}

impl FadingModel {
    fn gamma_shape(&self) -> Option<f64> {
        match *self {
            FadingModel::Rayleigh => Some(1.0),
            FadingModel::Nakagami { m } => Some(m),
            FadingModel::Deterministic => None,
        }
    }
}

impl std::fmt::Display for FadingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FadingModel::Rayleigh => write!(f, "rayleigh"),
            FadingModel::Nakagami { m } => write!(f, "nakagami-{m}"),
            FadingModel::Deterministic => write!(f, "deterministic"),
        }
    }
}

/// Discretizes the fading power into `n_bins` equiprobable bins, returning
/// `(conditional mean, probability)` per bin in increasing order.
pub fn discretize_fading(model: FadingModel, n_bins: usize) -> Result<Vec<(f64, f64)>> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("need at least one fading bin".into()));
    }
    let Some(m) = model.gamma_shape() else {
        return Ok(vec![(1.0, 1.0)]);
    };
    if !(m >= 0.5) || !m.is_finite() {
        return Err(Error::UnsupportedFading(format!(
            "Nakagami parameter must be >= 0.5, got {m}"
        )));
    }
    let power = Gamma::new(m, m).map_err(|e| Error::UnsupportedFading(e.to_string()))?;
    // E[X; X < x] = mean * F_{m+1}(x) for a gamma variable
    let tilted = Gamma::new(m + 1.0, m).map_err(|e| Error::UnsupportedFading(e.to_string()))?;

    let n = n_bins as f64;
    let mut edges = Vec::with_capacity(n_bins + 1);
    edges.push(0.0);
    for k in 1..n_bins {
        edges.push(quantile(&power, k as f64 / n)?);
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut lower = 0.0;
    for k in 0..n_bins {
        let upper = if k + 1 == n_bins { 1.0 } else { tilted.cdf(edges[k + 1]) };
        bins.push(((upper - lower) * n, 1.0 / n));
        lower = upper;
    }
    Ok(bins)
}

fn quantile(dist: &Gamma, p: f64) -> Result<f64> {
    let hi = roots::bracket_upward(|x| dist.cdf(x) - p, 1.0, 64)?;
    roots::brent(|x| dist.cdf(x) - p, 0.0, hi, 1e-14, 200)
}

/// One joint channel realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    /// Downlink (energy transfer) gains.
    pub g: [f64; 2],
    /// Uplink (data) gains.
    pub h: [f64; 2],
    pub prob: f64,
}

/// Discrete joint distribution of `(g1, g2, h1, h2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPmf {
    outcomes: Vec<ChannelOutcome>,
}

impl ChannelPmf {
    pub fn new(outcomes: Vec<ChannelOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidPmf("no outcomes".into()));
        }
        let mut total = 0.0;
        for o in &outcomes {
            if o.g.iter().chain(o.h.iter()).any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidPmf(format!("negative or non-finite gain in {o:?}")));
            }
            if !(o.prob >= 0.0) {
                return Err(Error::InvalidPmf(format!("negative probability in {o:?}")));
            }
            total += o.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
        }
        Ok(ChannelPmf { outcomes })
    }

    /// A single outcome with the average gains of `params`.
    pub fn deterministic(params: &SystemParams) -> Self {
        let [d1, d2] = params.devices;
        ChannelPmf {
            outcomes: vec![ChannelOutcome {
                g: [d1.mean_downlink_gain(), d2.mean_downlink_gain()],
                h: [d1.mean_uplink_gain(), d2.mean_uplink_gain()],
                prob: 1.0,
            }],
        }
    }

    pub fn outcomes(&self) -> &[ChannelOutcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn get(&self, index: usize) -> &ChannelOutcome {
        &self.outcomes[index]
    }

    /// Sampler over outcome indices.
    pub fn sampler(&self) -> ChannelSampler {
        ChannelSampler {
            index: WeightedIndex::new(self.outcomes.iter().map(|o| o.prob))
                .expect("validated pmf has positive total weight"),
        }
    }

    /// Expectation of `f` over the outcomes.
    pub fn expect<F: FnMut(&ChannelOutcome) -> f64>(&self, mut f: F) -> f64 {
        self.outcomes.iter().map(|o| o.prob * f(o)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ChannelSampler {
    index: WeightedIndex<f64>,
}

impl ChannelSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

/// Builds `f(g, h)` from the path loss in `params` and a fading model shared
/// by all links. Fading is independent across devices. With `reciprocity`
/// each device sees the same fading on uplink and downlink.
pub fn build_channel_pmf(
    params: &SystemParams,
    grid: &GridSpec,
    model: FadingModel,
    reciprocity: bool,
) -> Result<ChannelPmf> {
    let bins = discretize_fading(model, grid.fading_bins)?;
    let [d1, d2] = params.devices;

    // per device: list of (g, h, prob)
    let per_device = |d: &crate::model::DeviceParams| -> Vec<(f64, f64, f64)> {
        let (gm, hm) = (d.mean_downlink_gain(), d.mean_uplink_gain());
        if reciprocity {
            bins.iter().map(|&(v, p)| (gm * v, hm * v, p)).collect()
        } else {
            let mut out = Vec::with_capacity(bins.len() * bins.len());
            for &(vg, pg) in &bins {
                for &(vh, ph) in &bins {
                    out.push((gm * vg, hm * vh, pg * ph));
                }
            }
            out
        }
    };
    let first = per_device(&d1);
    let second = per_device(&d2);

    let mut outcomes = Vec::with_capacity(first.len() * second.len());
    for &(g1, h1, p1) in &first {
        for &(g2, h2, p2) in &second {
            outcomes.push(ChannelOutcome {
                g: [g1, g2],
                h: [h1, h2],
                prob: p1 * p2,
            });
        }
    }
    // renormalize away rounding in the bin probabilities
    let total: f64 = outcomes.iter().map(|o| o.prob).sum();
    for o in &mut outcomes {
        o.prob /= total;
    }
    ChannelPmf::new(outcomes)
}
