use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `θ_i = θ̄_T / (T·dt)` for every step.
    Constant,
    /// `θ_i ∝ 1 − cos(π i / (T + 1))`: slow mean reversion early, fast late.
    Cosine,
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "theta_bar_T")]
    pub theta_bar_total: f64,
    pub lambda: f64,
    pub schedule_kind: ScheduleKind,
    pub dt: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            theta_bar_total: 5.3,
            lambda: 50.0 / 255.0,
            schedule_kind: ScheduleKind::Constant,
            dt: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format("schedule config", e.to_string()))
    }
}

/// Discretized mean-reverting schedule.
///
/// Step `i ∈ 1..=T` covers diffusion time `((i-1)·dt, i·dt]` with constant
/// reversion speed `θ_i`. Index 0 is the clean state, so `θ̄_0 = 0` and
/// `v_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    theta: Vec<f64>,
    sigma_sq: Vec<f64>,
    theta_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        let t = config.steps;
        if t == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(config.theta_bar_total > 0.0 && config.theta_bar_total.is_finite()) {
            return Err(Error::invalid("theta_bar_T must be positive"));
        }
        if !(config.lambda > 0.0 && config.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        let raw: Vec<f64> = match config.schedule_kind {
            ScheduleKind::Constant => vec![1.0; t],
            ScheduleKind::Cosine => (1..=t)
                .map(|i| 1.0 - (std::f64::consts::PI * i as f64 / (t + 1) as f64).cos())
                .collect(),
        };
        let scale = config.theta_bar_total / (raw.iter().sum::<f64>() * config.dt);
        let mut theta = Vec::with_capacity(t + 1);
        theta.push(0.0);
        theta.extend(raw.iter().map(|r| r * scale));

        let two_lambda_sq = 2.0 * config.lambda * config.lambda;
        let sigma_sq = theta.iter().map(|th| two_lambda_sq * th).collect();
        let mut theta_bar = Vec::with_capacity(t + 1);
        let mut acc = 0.0;
        theta_bar.push(0.0);
        for th in &theta[1..] {
            acc += th * config.dt;
            theta_bar.push(acc);
        }
        Ok(Self {
            config: config.clone(),
            theta,
            sigma_sq,
            theta_bar,
        })
    }

    /// Schedule with explicit per-step speeds (`theta[0]` is ignored).
    #[cfg(test)]
    pub(crate) fn from_thetas(lambda: f64, dt: f64, theta: Vec<f64>) -> Self {
        let steps = theta.len() - 1;
        let two_lambda_sq = 2.0 * lambda * lambda;
        let mut theta_bar = vec![0.0];
        for th in &theta[1..] {
            theta_bar.push(theta_bar.last().unwrap() + th * dt);
        }
        Self {
            config: ScheduleConfig {
                steps,
                theta_bar_total: *theta_bar.last().unwrap(),
                lambda,
                schedule_kind: ScheduleKind::Constant,
                dt,
            },
            sigma_sq: theta.iter().map(|th| two_lambda_sq * th).collect(),
            theta,
            theta_bar,
        }
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    /// Reversion speed of step `i` (0 for `i = 0`).
    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    /// `σ_i² = 2λ²θ_i`.
    pub fn sigma_sq(&self, i: usize) -> f64 {
        self.sigma_sq[i]
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma_sq[i].sqrt()
    }

    /// `θ̄_t = Σ_{k ≤ t} θ_k·dt`.
    pub fn theta_bar(&self, t: usize) -> f64 {
        self.theta_bar[t]
    }

    /// Remaining fraction of the initial deviation, `e^{-θ̄_t}`.
    pub fn decay(&self, t: usize) -> f64 {
        (-self.theta_bar[t]).exp()
    }

    /// Marginal variance `v_t = λ²(1 − e^{−2θ̄_t})`.
    pub fn variance(&self, t: usize) -> f64 {
        let l2 = self.config.lambda * self.config.lambda;
        l2 * -(-2.0 * self.theta_bar[t]).exp_m1()
    }

    /// Deviation decay over the single step `i`, `e^{−θ_i·dt}`.
    pub fn step_decay(&self, i: usize) -> f64 {
        (-self.theta[i] * self.config.dt).exp()
    }

    /// Variance added by the exact transition over step `i`.
    pub fn step_variance(&self, i: usize) -> f64 {
        let l2 = self.config.lambda * self.config.lambda;
        l2 * -(-2.0 * self.theta[i] * self.config.dt).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both() -> Vec<NoiseSchedule> {
        [ScheduleKind::Constant, ScheduleKind::Cosine]
            .into_iter()
            .map(|k| {
                ScheduleConfig {
                    schedule_kind: k,
                    ..ScheduleConfig::default()
                }
                .build()
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn sigma_theta_ratio_is_two_lambda_sq() {
        for s in both() {
            let target = 2.0 * s.lambda() * s.lambda();
            for i in 1..=s.steps() {
                assert!((s.sigma_sq(i) / s.theta(i) - target).abs() <= 1e-15 * target);
            }
        }
    }

    #[test]
    fn theta_bar_and_variance_increase() {
        for s in both() {
            assert_eq!(s.theta_bar(0), 0.0);
            assert_eq!(s.variance(0), 0.0);
            let l2 = s.lambda() * s.lambda();
            for t in 1..=s.steps() {
                assert!(s.theta_bar(t) > s.theta_bar(t - 1));
                assert!(s.variance(t) > s.variance(t - 1));
                assert!(s.variance(t) < l2);
            }
            assert!((s.theta_bar(s.steps()) - 5.3).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_schedule_values() {
        let s = ScheduleConfig::default().build().unwrap();
        assert!((s.theta(1) - 0.053).abs() < 1e-15);
        assert!((s.decay(100) - (-5.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn step_transitions_compose_to_marginal() {
        for s in both() {
            // Chaining exact per-step transitions reproduces (decay, variance).
            let (mut a, mut v) = (1.0, 0.0);
            for i in 1..=s.steps() {
                let d = s.step_decay(i);
                a *= d;
                v = v * d * d + s.step_variance(i);
                assert!((a - s.decay(i)).abs() < 1e-12);
                assert!((v - s.variance(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            ScheduleConfig { steps: 0, ..Default::default() },
            ScheduleConfig { lambda: 0.0, ..Default::default() },
            ScheduleConfig { theta_bar_total: -1.0, ..Default::default() },
            ScheduleConfig { dt: 0.0, ..Default::default() },
        ] {
            assert!(bad.build().is_err());
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let c = ScheduleConfig {
            schedule_kind: ScheduleKind::Cosine,
            ..Default::default()
        };
        let s = c.to_toml();
        assert!(s.contains("T = 100"));
        assert!(s.contains("schedule_kind = \"cosine\""));
        assert_eq!(ScheduleConfig::from_toml(&s).unwrap(), c);
    }
}
