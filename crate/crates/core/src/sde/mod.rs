//! Mean-reverting SDE `dx = θ_t (μ − x) dt + σ_t dw` with `σ_t² = 2λ²θ_t`.
//!
//! The forward marginal is Gaussian,
//!
//! ```text
//! x(t) ~ N(μ + (x(0) − μ) e^{−θ̄_t},  λ² (1 − e^{−2θ̄_t}))
//! ```
//!
//! so the score of a state is known in closed form once `x(0)` is known.
//! The reverse-time sampler integrates
//! `dx = [θ_t (μ − x) − σ_t² ∇log p_t(x)] dt + σ_t dw̄` backwards with
//! Euler–Maruyama.

mod schedule;

pub use schedule::{NoiseSchedule, ScheduleConfig, ScheduleKind};

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bev::BevImage;
use crate::error::{Error, Result};
use crate::score_model::ScoreModel;

pub(crate) fn check_shape(expected: &Array2<f64>, actual: &Array2<f64>) -> Result<()> {
    if expected.dim() != actual.dim() {
        return Err(Error::ShapeMismatch {
            expected: expected.dim(),
            actual: actual.dim(),
        });
    }
    Ok(())
}

fn check_step(sched: &NoiseSchedule, t: usize) -> Result<()> {
    if t > sched.steps() {
        return Err(Error::invalid(format!("step {t} outside [0, {}]", sched.steps())));
    }
    Ok(())
}

/// i.i.d. standard normal array, filled in row-major order.
pub fn standard_normal<R: Rng + ?Sized>(dim: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || rng.sample(StandardNormal))
}

/// Mean `m_t` and variance `v_t` of `x(t)` given `x(0)`.
pub fn marginal(
    x0: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<(Array2<f64>, f64)> {
    check_shape(x0, mu)?;
    check_step(sched, t)?;
    let decay = sched.decay(t);
    let mean = Zip::from(x0).and(mu).map_collect(|&x, &m| m + (x - m) * decay);
    Ok((mean, sched.variance(t)))
}

/// Draws `x(t) = m_t + √v_t · ε` and returns it with `ε`.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (mean, var) = marginal(x0, mu, sched, t)?;
    let eps = standard_normal(mean.dim(), rng);
    let sd = var.sqrt();
    let x_t = Zip::from(&mean).and(&eps).map_collect(|&m, &e| m + sd * e);
    Ok((x_t, eps))
}

/// Euler–Maruyama simulation of the forward SDE, returning the state at
/// every schedule step `0..=T`. Each step is split into `substeps` pieces.
pub fn euler_forward_path<R: Rng + ?Sized>(
    x0: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    substeps: usize,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    euler_forward_path_with(x0, mu, sched, substeps, |i| sched.sigma(i), rng)
}

/// As [`euler_forward_path`] with an explicit diffusion coefficient per step.
pub fn euler_forward_path_with<R: Rng + ?Sized>(
    x0: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    substeps: usize,
    sigma: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    check_shape(x0, mu)?;
    if substeps == 0 {
        return Err(Error::invalid("euler_forward_path needs at least one substep"));
    }
    let h = sched.dt() / substeps as f64;
    let sqrt_h = h.sqrt();
    let mut x = x0.clone();
    let mut path = Vec::with_capacity(sched.steps() + 1);
    path.push(x.clone());
    for i in 1..=sched.steps() {
        let (theta, sig) = (sched.theta(i), sigma(i));
        for _ in 0..substeps {
            Zip::from(&mut x).and(mu).for_each(|x, &m| {
                let z: f64 = rng.sample(StandardNormal);
                *x += theta * (m - *x) * h + sig * sqrt_h * z;
            });
        }
        path.push(x.clone());
    }
    Ok(path)
}

/// Closed-form score `−(x_t − m_t) / v_t` of the Gaussian marginal.
pub fn true_score(x_t: &Array2<f64>, m_t: &Array2<f64>, v_t: f64) -> Result<Array2<f64>> {
    check_shape(x_t, m_t)?;
    if v_t <= 0.0 {
        return Err(Error::DegenerateVariance(v_t));
    }
    Ok(Zip::from(x_t).and(m_t).map_collect(|&x, &m| -(x - m) / v_t))
}

/// One backward Euler–Maruyama step from `t` to `t − 1`.
///
/// `x_{t−1} = x_t − [θ_t (μ − x_t) − σ_t² · score] dt (+ σ_t √dt z)`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    t: usize,
    score: &Array2<f64>,
    rng: &mut R,
    stochastic: bool,
) -> Result<Array2<f64>> {
    check_shape(x_t, mu)?;
    check_shape(x_t, score)?;
    if t == 0 || t > sched.steps() {
        return Err(Error::invalid(format!("reverse step {t} outside [1, {}]", sched.steps())));
    }
    let (theta, sig_sq, dt) = (sched.theta(t), sched.sigma_sq(t), sched.dt());
    let mut out = Zip::from(x_t)
        .and(mu)
        .and(score)
        .map_collect(|&x, &m, &s| x - (theta * (m - x) - sig_sq * s) * dt);
    if stochastic {
        let scale = sched.sigma(t) * dt.sqrt();
        out.iter_mut().for_each(|v| {
            let z: f64 = rng.sample(StandardNormal);
            *v += scale * z;
        });
    }
    Ok(out)
}

/// Runs the full reverse chain from `x̃(T) = μ + λ·noise` down to step 0.
///
/// The final step (`t = 1`) never adds noise. `on_state` sees every
/// intermediate state, `(t, x̃(t))`, including the start at `T` and the
/// unclamped end at 0.
pub fn reverse_chain<R: Rng + ?Sized>(
    mu: &Array2<f64>,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    rng: &mut R,
    stochastic: bool,
    mut on_state: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>> {
    let lambda = sched.lambda();
    let noise = standard_normal(mu.dim(), rng);
    let mut x = Zip::from(mu).and(&noise).map_collect(|&m, &z| m + lambda * z);
    on_state(sched.steps(), &x);
    for t in (1..=sched.steps()).rev() {
        let eps_hat = model.predict(&x, mu, t)?;
        check_shape(&x, &eps_hat)?;
        let inv_sd = 1.0 / sched.variance(t).sqrt();
        let score = eps_hat.mapv(|e| -e * inv_sd);
        x = reverse_step(&x, mu, sched, t, &score, rng, stochastic && t > 1)?;
        on_state(t - 1, &x);
    }
    Ok(x)
}

/// Options for [`enhance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnhanceOptions {
    /// Add Brownian increments in the reverse steps (all but the last).
    pub stochastic: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self { stochastic: true }
    }
}

/// Recovers a LiDAR-like BEV from a radar BEV `mu`. Output pixels are
/// clamped to `[0, 1]`; intermediate states are not.
pub fn enhance<R: Rng + ?Sized>(
    mu: &BevImage,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    rng: &mut R,
    opts: EnhanceOptions,
) -> Result<BevImage> {
    let x = reverse_chain(&mu.pixels, model, sched, rng, opts.stochastic, |_, _| {})?;
    BevImage::from_array(mu.grid.clone(), x)
}
