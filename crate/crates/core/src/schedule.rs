//! Noise schedules.
//!
//! Training uses a discrete variance-preserving table `ᾱ_1 > … > ᾱ_T`; the
//! Heun sampler walks a continuous σ grid. The two meet through
//! `ᾱ = 1 / (1 + σ²)`: a VP latent `x_t = √ᾱ x₀ + √(1-ᾱ) ε` equals
//! `√ᾱ (x₀ + σ ε)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const SIGMOID_START: f64 = -3.0;
const SIGMOID_END: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Sigmoid,
}

impl ScheduleKind {
    /// Unclamped ᾱ(u) for `u ∈ [0, 1]`.
    fn raw(self, u: f64) -> f64 {
        match self {
            ScheduleKind::Cosine => {
                let s = COSINE_OFFSET;
                let f = |v: f64| ((v + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                f(u) / f(0.0)
            }
            ScheduleKind::Sigmoid => {
                let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
                let (b, e) = (SIGMOID_START, SIGMOID_END);
                let v_start = sig(-b);
                let v_end = sig(-e);
                (sig(-(u * (e - b) + b)) - v_end) / (v_start - v_end)
            }
        }
    }
}

/// Lower/upper clamp at `u`. Both bounds decrease slightly with `u` so the
/// clamped table stays strictly decreasing.
fn clamp_bounds(u: f64) -> (f64, f64) {
    (1e-5 * (1.0 - 0.9 * u), 1.0 - 1e-5 * (1.0 + u))
}

/// Discrete VP schedule; `alpha_bar[t-1]` holds ᾱ_t for `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::param("schedule", format!("T must be >= 2, got {steps}")));
        }
        let alpha_bar = (1..=steps)
            .map(|t| Self::continuous(kind, t as f64 / steps as f64))
            .collect();
        Ok(Self {
            kind,
            steps,
            alpha_bar,
        })
    }

    /// Clamped ᾱ(u) for continuous `u ∈ [0, 1]`.
    pub fn continuous(kind: ScheduleKind, u: f64) -> f64 {
        let (lo, hi) = clamp_bounds(u);
        kind.raw(u).clamp(lo, hi)
    }

    pub fn alpha_bar_at(&self, u: f64) -> f64 {
        Self::continuous(self.kind, u)
    }

    /// ᾱ_t with the convention ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Per-step β_t = 1 - ᾱ_t / ᾱ_{t-1}.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar(t) / self.alpha_bar(t - 1)
    }

    /// Noise level of step `t` in the σ parameterisation.
    pub fn sigma(&self, t: usize) -> f64 {
        alpha_bar_to_sigma(self.alpha_bar(t))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serialises")
    }
}

/// Karras-style σ grid: `n_steps` decreasing levels followed by a final 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SigmaGrid {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_steps: usize,
    pub sigmas: Vec<f64>,
}

impl SigmaGrid {
    pub fn build(sigma_min: f64, sigma_max: f64, rho: f64, n_steps: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::param(
                "schedule",
                format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"),
            ));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("schedule", format!("rho must be positive, got {rho}")));
        }
        if n_steps < 2 {
            return Err(Error::param("schedule", format!("n_steps must be >= 2, got {n_steps}")));
        }
        let lo = sigma_min.powf(1.0 / rho);
        let hi = sigma_max.powf(1.0 / rho);
        let last = (n_steps - 1) as f64;
        let mut sigmas: Vec<f64> = (0..n_steps)
            .map(|i| (hi + i as f64 / last * (lo - hi)).powf(rho))
            .collect();
        // pin the endpoints exactly; powf round-trips are not exact
        sigmas[0] = sigma_max;
        sigmas[n_steps - 1] = sigma_min;
        sigmas.push(0.0);
        Ok(Self {
            sigma_min,
            sigma_max,
            rho,
            n_steps,
            sigmas,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serialises")
    }
}

/// Variance-preserving coefficients of a σ level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VpCoefficients {
    pub alpha_bar: f64,
    /// √ᾱ, the factor mapping `x₀ + σ ε` to the VP latent.
    pub scale: f64,
    /// √(1-ᾱ), computed without cancellation.
    pub noise_scale: f64,
}

impl VpCoefficients {
    /// σ recovered as `√(1-ᾱ) / √ᾱ`.
    pub fn sigma(&self) -> f64 {
        self.noise_scale / self.scale
    }
}

pub fn sigma_to_alpha_bar(sigma: f64) -> VpCoefficients {
    debug_assert!(sigma >= 0.0);
    if sigma.is_infinite() {
        return VpCoefficients {
            alpha_bar: 0.0,
            scale: 0.0,
            noise_scale: 1.0,
        };
    }
    let norm = (1.0 + sigma * sigma).sqrt();
    VpCoefficients {
        alpha_bar: 1.0 / (1.0 + sigma * sigma),
        scale: 1.0 / norm,
        noise_scale: sigma / norm,
    }
}

/// `σ = √((1-ᾱ)/ᾱ)`. Loses relative precision when ᾱ is within a few ulps
/// of 1; prefer [`VpCoefficients::sigma`] when both scales are at hand.
pub fn alpha_bar_to_sigma(alpha_bar: f64) -> f64 {
    ((1.0 - alpha_bar) / alpha_bar).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_t4_golden() {
        // independent evaluation of the closed form (tests/fixtures/reference_plans.py)
        let golden = [0.8470121613269047, 0.49384359044063775, 0.1442721023857358, 1e-06];
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 4).unwrap();
        for (a, g) in s.alpha_bar.iter().zip(golden) {
            assert!((a - g).abs() <= 1e-15 * g.max(1e-300) + 1e-18, "{a} vs {g}");
        }
    }

    #[test]
    fn sigmoid_t4_golden() {
        let golden = [0.850853547929667, 0.4999999999999999, 0.14914645207033284, 1e-06];
        let s = NoiseSchedule::build(ScheduleKind::Sigmoid, 4).unwrap();
        for (a, g) in s.alpha_bar.iter().zip(golden) {
            assert!((a - g).abs() <= 1e-14 * g, "{a} vs {g}");
        }
    }

    #[test]
    fn cosine_boundaries() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 1000).unwrap();
        assert!(s.alpha_bar(1000) <= 1e-5);
        assert_eq!(s.alpha_bar(0), 1.0);
        let near_zero = s.alpha_bar_at(1e-9);
        assert!(near_zero > 1.0 - 2e-5 && near_zero < 1.0);
        assert!(s.alpha_bar_at(1e-3) < s.alpha_bar_at(1e-6));
    }

    #[test]
    fn schedules_strictly_decreasing() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Sigmoid] {
            for t in [2, 4, 10, 1000, 4000] {
                let s = NoiseSchedule::build(kind, t).unwrap();
                assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]), "{kind:?} T={t}");
                assert!(s.alpha_bar.iter().all(|&a| a > 0.0 && a < 1.0));
            }
        }
    }

    #[test]
    fn continuous_query_matches_table() {
        let s = NoiseSchedule::build(ScheduleKind::Sigmoid, 37).unwrap();
        for t in 1..=37 {
            assert_eq!(s.alpha_bar_at(t as f64 / 37.0), s.alpha_bar(t));
        }
    }

    #[test]
    fn invalid_steps() {
        assert!(NoiseSchedule::build(ScheduleKind::Cosine, 1).is_err());
        assert!(SigmaGrid::build(0.002, 1000.0, 7.0, 1).is_err());
        assert!(SigmaGrid::build(1000.0, 0.002, 7.0, 10).is_err());
        assert!(SigmaGrid::build(0.0, 1.0, 7.0, 10).is_err());
        assert!(SigmaGrid::build(-1.0, 1.0, 7.0, 10).is_err());
    }

    #[test]
    fn sigma_grid_endpoints_and_midpoint() {
        let g = SigmaGrid::build(0.002, 1000.0, 7.0, 100).unwrap();
        assert_eq!(g.sigmas.len(), 101);
        assert_eq!(g.sigmas[0], 1000.0);
        assert_eq!(g.sigmas[99], 0.002);
        assert_eq!(g.sigmas[100], 0.0);
        // frozen from a one-line evaluation of the grid rule
        assert!((g.sigmas[50] - 20.14003862950626).abs() < 1e-12);
        assert!(g.sigmas[..100].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_point_grid() {
        let g = SigmaGrid::build(0.5, 80.0, 7.0, 2).unwrap();
        assert_eq!(g.sigmas, vec![80.0, 0.5, 0.0]);
    }

    #[test]
    fn vp_bridge_values() {
        assert_eq!(sigma_to_alpha_bar(0.0).alpha_bar, 1.0);
        assert_eq!(sigma_to_alpha_bar(1.0).alpha_bar, 0.5);
        let c = sigma_to_alpha_bar(1000.0);
        assert!((c.alpha_bar - 1e-6).abs() < 1e-11);
        assert!((c.sigma() - 1000.0).abs() <= 1e-12 * 1000.0);
        assert!((alpha_bar_to_sigma(c.alpha_bar) - 1000.0).abs() <= 1e-12 * 1000.0);
    }

    #[test]
    fn json_shape() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["kind"], "cosine");
        assert_eq!(v["T"], 3);
        assert_eq!(v["alpha_bar"].as_array().unwrap().len(), 3);
        let g = SigmaGrid::build(0.002, 1000.0, 7.0, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        for key in ["sigma_min", "sigma_max", "rho", "n_steps", "sigmas"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: SigmaGrid = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn sigma_round_trip(log_sigma in -4.0f64..4.0) {
            let sigma = 10f64.powf(log_sigma);
            let back = sigma_to_alpha_bar(sigma).sigma();
            prop_assert!(((back - sigma) / sigma).abs() < 1e-12);
        }

        #[test]
        fn grid_monotone(n in 2usize..300, lo in 1e-4f64..1.0, span in 1.5f64..1e5, rho in 0.5f64..10.0) {
            let g = SigmaGrid::build(lo, lo * span, rho, n).unwrap();
            prop_assert!(g.sigmas[..n].windows(2).all(|w| w[1] < w[0]));
            prop_assert_eq!(g.sigmas[n - 1], lo);
            prop_assert_eq!(*g.sigmas.last().unwrap(), 0.0);
        }
    }
}
