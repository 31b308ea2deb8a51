//! Physical constants of the two-device network and the primitive formulas
//! built on them: uplink rate, harvested energy and the quantized battery
//! update.
//!
//! Units are SI throughout: seconds, watts, joules, hertz. Gains are linear
//! power gains (path loss and fading folded in).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base of the logarithm in the rate formula. Rates are in bits/s/Hz and
/// become bits/s once multiplied by the bandwidth. Switching to
/// `std::f64::consts::E` reproduces natural-log (nats) bookkeeping.
pub const LOG_BASE: f64 = 2.0;

/// Slack applied before rounding harvested energy to quanta, so that an
/// exact multiple of the quantum computed in floating point is not lost to
/// a one-ulp error.
const QUANTA_SLACK: f64 = 1e-9;

/// Per-device physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Distance to the access point, meters.
    pub distance: f64,
    /// Uplink power gain at the 1 m reference distance.
    pub h0: f64,
    /// Downlink power gain at the 1 m reference distance.
    pub g0: f64,
    /// Uplink path-loss exponent.
    pub gamma: f64,
    /// Downlink path-loss exponent.
    pub delta: f64,
    /// Minimum transmission power when transmitting, watts.
    pub p_min: f64,
    /// Maximum transmission power, watts.
    pub p_max: f64,
    /// Battery capacity, joules.
    pub b_max: f64,
}

impl DeviceParams {
    /// Average uplink gain `h0 * d^-gamma`.
    pub fn mean_uplink_gain(&self) -> f64 {
        self.h0 * self.distance.powf(-self.gamma)
    }

    /// Average downlink gain `g0 * d^-delta`.
    pub fn mean_downlink_gain(&self) -> f64 {
        self.g0 * self.distance.powf(-self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Slot duration `T`, seconds.
    pub slot: f64,
    /// Maximum power the access point can radiate for energy transfer, watts.
    pub q_max: f64,
    /// RF-to-DC conversion efficiency.
    pub eta: f64,
    /// Receiver noise power over the whole band, watts.
    pub noise_power: f64,
    /// Bandwidth, Hz. Only used to convert spectral efficiency to bits/s.
    pub bandwidth: f64,
    pub devices: [DeviceParams; 2],
}

/// Converts a noise spectral density in dBm/Hz over `bandwidth` Hz to watts.
pub fn noise_power_from_density(dbm_per_hz: f64, bandwidth: f64) -> f64 {
    let dbm = dbm_per_hz + 10.0 * bandwidth.log10();
    10f64.powf(dbm / 10.0) * 1e-3
}

impl Default for SystemParams {
    /// The reference scenario: D1 at 1 m, D2 at 3 m, 1–10 mW transmit
    /// powers, 0.1 mJ batteries and reciprocal path loss.
    fn default() -> Self {
        let bandwidth = 1e6;
        let device = |distance| DeviceParams {
            distance,
            h0: 1.25e-3,
            g0: 1.25e-3,
            gamma: 2.0,
            delta: 2.0,
            p_min: 1e-3,
            p_max: 10e-3,
            b_max: 0.1e-3,
        };
        SystemParams {
            slot: 0.5,
            q_max: 3.0,
            eta: 0.8,
            noise_power: noise_power_from_density(-155.0, bandwidth),
            bandwidth,
            devices: [device(1.0), device(3.0)],
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.slot > 0.0) {
            return bad(format!("slot duration must be positive, got {}", self.slot));
        }
        // q_max = 0 is allowed: it models a network with no energy supply.
        if !(self.q_max >= 0.0) || !self.q_max.is_finite() {
            return bad(format!("q_max must be finite and non-negative, got {}", self.q_max));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.noise_power > 0.0) {
            return bad(format!("noise power must be positive, got {}", self.noise_power));
        }
        if !(self.bandwidth > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        for (i, d) in self.devices.iter().enumerate() {
            let n = i + 1;
            if !(d.distance > 0.0) {
                return bad(format!("device {n}: distance must be positive"));
            }
            if !(d.p_min > 0.0 && d.p_min <= d.p_max) {
                return bad(format!("device {n}: need 0 < p_min <= p_max"));
            }
            if !(d.b_max > 0.0) {
                return bad(format!("device {n}: battery capacity must be positive"));
            }
            if !(d.h0 >= 0.0 && d.g0 >= 0.0) {
                return bad(format!("device {n}: reference gains must be non-negative"));
            }
        }
        Ok(())
    }

    /// Spectral efficiency `log(1 + h rho / sigma^2)` in bits/s/Hz.
    #[inline]
    pub fn rate(&self, rho: f64, h: f64) -> f64 {
        (h * rho / self.noise_power).ln_1p() / LOG_BASE.ln()
    }

    /// Energy stored after `tau_ap` seconds of transfer at power `q` over a
    /// downlink of gain `g`.
    #[inline]
    pub fn harvested_energy(&self, tau_ap: f64, q: f64, g: f64) -> f64 {
        tau_ap * self.eta * q * g
    }

    /// Converts a per-slot reward (seconds × bits/s/Hz) into a throughput in
    /// bits/s.
    #[inline]
    pub fn throughput_bps(&self, per_slot: f64) -> f64 {
        per_slot * self.bandwidth / self.slot
    }

    /// Upper estimate of the per-slot reward of a single device, used to
    /// scale convergence tolerances.
    pub fn reward_scale(&self) -> f64 {
        self.devices
            .iter()
            .map(|d| self.slot * self.rate(d.p_max, d.mean_uplink_gain()))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE)
    }
}

/// Rounding rule when harvested energy is converted into whole quanta.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Lower bound on the achievable performance.
    #[default]
    Floor,
    /// Upper bound on the achievable performance.
    Ceil,
}

/// Discretization of batteries, fading and the action search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of energy quanta a full battery holds, per device.
    pub battery_levels: [u32; 2],
    /// Equal-probability fading bins per link.
    pub fading_bins: usize,
    /// Points of the `tau_ap` grid on `[0, T]`, endpoints included.
    pub tau_ap_points: usize,
    /// Points of the `Q1` grid on `[0, Q_max]`, endpoints included.
    pub q1_points: usize,
    #[serde(default)]
    pub rounding: Rounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    Coarse,
    Default,
    Fine,
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(GridPreset::Coarse),
            "default" => Ok(GridPreset::Default),
            "fine" => Ok(GridPreset::Fine),
            other => Err(Error::Config(format!("unknown grid preset `{other}`"))),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::preset(GridPreset::Default)
    }
}

impl GridSpec {
    pub fn preset(preset: GridPreset) -> Self {
        let (levels, bins, tau, q) = match preset {
            GridPreset::Coarse => (6, 3, 11, 11),
            GridPreset::Default => (10, 4, 21, 21),
            GridPreset::Fine => (16, 6, 41, 41),
        };
        GridSpec {
            battery_levels: [levels, levels],
            fading_bins: bins,
            tau_ap_points: tau,
            q1_points: q,
            rounding: Rounding::Floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.battery_levels.iter().any(|&l| l < 1) {
            return Err(Error::InvalidParameter("battery levels must be >= 1".into()));
        }
        if self.fading_bins < 1 {
            return Err(Error::InvalidParameter("fading bins must be >= 1".into()));
        }
        if self.tau_ap_points < 2 || self.q1_points < 2 {
            return Err(Error::InvalidParameter(
                "action grids need at least their two endpoints".into(),
            ));
        }
        Ok(())
    }

    /// Copy with enough levels that no quantum exceeds `max_quantum` joules.
    /// Larger batteries need finer counts, otherwise the floor on harvested
    /// energy discards more the bigger the battery.
    pub fn with_max_quantum(&self, params: &SystemParams, max_quantum: f64) -> Self {
        let mut g = *self;
        for (l, d) in g.battery_levels.iter_mut().zip(&params.devices) {
            *l = (*l).max((d.b_max / max_quantum * (1.0 - 1e-12)).ceil() as u32);
        }
        g
    }

    /// Number of battery states `(b1_max + 1) * (b2_max + 1)`.
    pub fn n_states(&self) -> usize {
        (self.battery_levels[0] as usize + 1) * (self.battery_levels[1] as usize + 1)
    }

    pub fn quantizer(&self, params: &SystemParams, device: usize) -> Quantizer {
        Quantizer::new(
            self.battery_levels[device],
            params.devices[device].b_max,
            self.rounding,
        )
    }
}

/// Energy <-> quanta conversion for one battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub levels: u32,
    /// Joules per quantum.
    pub quantum: f64,
    pub rounding: Rounding,
}

impl Quantizer {
    pub fn new(levels: u32, capacity: f64, rounding: Rounding) -> Self {
        Quantizer {
            levels,
            quantum: capacity / levels as f64,
            rounding,
        }
    }

    /// Harvested quanta before clipping at capacity.
    #[inline]
    pub fn harvest_quanta(&self, joules: f64) -> u32 {
        let x = joules / self.quantum;
        let q = match self.rounding {
            Rounding::Floor => (x + QUANTA_SLACK).floor(),
            Rounding::Ceil => (x - QUANTA_SLACK).ceil(),
        };
        // Anything past a full battery is clipped anyway.
        q.clamp(0.0, self.levels as f64) as u32
    }

    #[inline]
    pub fn energy(&self, quanta: u32) -> f64 {
        quanta as f64 * self.quantum
    }

    /// `min(b_max, b - e + c)` in quanta, with `c` the rounded harvest.
    pub fn step(&self, b: u32, e: u32, harvest: f64) -> std::result::Result<u32, (u32, u32)> {
        if e > b || b > self.levels {
            return Err((b, e));
        }
        Ok((b - e + self.harvest_quanta(harvest)).min(self.levels))
    }
}

/// Quantized battery update of device `device`.
pub fn battery_step(
    b: u32,
    e: u32,
    harvest: f64,
    grid: &GridSpec,
    params: &SystemParams,
    device: usize,
) -> Result<u32> {
    grid.quantizer(params, device)
        .step(b, e, harvest)
        .map_err(|(stored, consumed)| Error::EnergyCausality {
            device: device + 1,
            stored,
            consumed,
        })
}

/// `n` evenly spaced points on `[lo, hi]`, both endpoints included exactly.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn noise_from_density_matches_reference() {
        let n = noise_power_from_density(-155.0, 1e6);
        assert!((n - 3.1623e-13).abs() / 3.1623e-13 < 1e-4);
    }

    #[test]
    fn rate_examples() {
        let p = params();
        assert_eq!(p.rate(0.0, 1.25e-3), 0.0);
        assert_eq!(p.rate(0.01, 0.0), 0.0);
        // log2(1 + 3.9528e7) = 25.2363888..., mpmath at 50 digits
        let r = p.rate(0.01, 1.25e-3);
        assert!((r - 25.236_388_843).abs() < 1e-8, "{r}");
    }

    #[test]
    fn harvested_energy_examples() {
        let p = params();
        assert_eq!(p.harvested_energy(0.5, 0.0, 1.25e-3), 0.0);
        assert!((p.harvested_energy(0.5, 3.0, 1.25e-3) - 1.5e-3).abs() < 1e-15);
        let unit = SystemParams { eta: 1.0, ..p };
        assert_eq!(unit.harvested_energy(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn battery_step_examples() {
        let p = params();
        let mut g = GridSpec::default();
        let cap = p.devices[0].b_max;
        g.battery_levels = [5, 5];
        assert_eq!(battery_step(5, 5, 0.0, &g, &p, 0).unwrap(), 0);
        assert_eq!(battery_step(5, 0, cap, &g, &p, 0).unwrap(), 5);
        g.battery_levels = [10, 10];
        assert_eq!(battery_step(3, 2, 0.35 * cap, &g, &p, 0).unwrap(), 4);
        assert!(matches!(
            battery_step(2, 3, 0.0, &g, &p, 1),
            Err(Error::EnergyCausality { device: 2, stored: 2, consumed: 3 })
        ));
    }

    #[test]
    fn ceil_rounding_gives_upper_bound() {
        let q = Quantizer::new(10, 1.0, Rounding::Ceil);
        assert_eq!(q.harvest_quanta(0.35), 4);
        assert_eq!(q.harvest_quanta(0.3), 3);
        let f = Quantizer::new(10, 1.0, Rounding::Floor);
        assert_eq!(f.harvest_quanta(0.3), 3);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = params();
        p.eta = 1.5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.devices[1].p_min = 1.0;
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }

    #[test]
    fn linspace_hits_endpoints() {
        let v = linspace(0.0, 0.5, 21);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[20], 0.5);
        assert!((v[10] - 0.25).abs() < 1e-15);
    }
}
