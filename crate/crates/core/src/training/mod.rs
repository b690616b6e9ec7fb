//! Masked residual objective and the denoiser training loop.

mod config;

pub use config::{LrSchedule, Optimizer, TrainConfig};

use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::{mask_of, Masks};
use crate::error::{Error, Result};
use crate::score_model::DenoiserModel;
use crate::sde::{check_shape, forward_sample, NoiseSchedule};

/// One paired example: radar image `mu`, LiDAR image `x0` and the masks
/// derived from `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub mu: Array2<f64>,
    pub x0: Array2<f64>,
    pub masks: Masks,
}

impl TrainSample {
    pub fn new(mu: Array2<f64>, x0: Array2<f64>) -> Result<Self> {
        check_shape(&x0, &mu)?;
        let masks = mask_of(&x0);
        Ok(Self { mu, x0, masks })
    }

    /// Sample with caller-supplied masks (e.g. all-ones).
    pub fn with_masks(mu: Array2<f64>, x0: Array2<f64>, masks: Masks) -> Result<Self> {
        check_shape(&x0, &mu)?;
        check_shape(&x0, &masks.target)?;
        check_shape(&x0, &masks.blank)?;
        Ok(Self { mu, x0, masks })
    }
}

fn check_step(sched: &NoiseSchedule, i: usize) -> Result<()> {
    if i == 0 || i > sched.steps() {
        return Err(Error::invalid(format!("step {i} outside [1, {}]", sched.steps())));
    }
    Ok(())
}

/// Mean of `x(i−1)` given `x(i)` and `x(0)` under the exact discrete chain.
pub fn ideal_prev_state(
    x0: &Array2<f64>,
    x_i: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    i: usize,
) -> Result<Array2<f64>> {
    check_shape(x0, x_i)?;
    check_shape(x0, mu)?;
    check_step(sched, i)?;
    let prior_decay = sched.decay(i - 1);
    let prior_var = sched.variance(i - 1);
    let a = sched.step_decay(i);
    let s2 = sched.step_variance(i);
    let denom = s2 + a * a * prior_var;
    let mut out = Array2::zeros(x0.dim());
    Zip::from(&mut out)
        .and(x0)
        .and(x_i)
        .and(mu)
        .for_each(|o, &x0, &xi, &m| {
            let prior = (x0 - m) * prior_decay;
            *o = m + (prior * s2 + a * (xi - m) * prior_var) / denom;
        });
    Ok(out)
}

/// `∂ reversed_prev_state / ∂ eps_hat`, the same for every pixel.
/// Zero when the step injects no noise.
pub fn reversed_eps_gain(sched: &NoiseSchedule, i: usize) -> f64 {
    let sig_sq = sched.sigma_sq(i);
    if sig_sq == 0.0 {
        return 0.0;
    }
    -sig_sq * sched.dt() / sched.variance(i).sqrt()
}

/// Noiseless reverse step at `i` with score `−eps_hat / √v_i`.
pub fn reversed_prev_state(
    x_i: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    i: usize,
    eps_hat: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_shape(x_i, mu)?;
    check_shape(x_i, eps_hat)?;
    check_step(sched, i)?;
    let drift = sched.theta(i) * sched.dt();
    let gain = reversed_eps_gain(sched, i);
    let mut out = Array2::zeros(x_i.dim());
    Zip::from(&mut out)
        .and(x_i)
        .and(mu)
        .and(eps_hat)
        .for_each(|o, &x, &m, &e| *o = x - drift * (m - x) + gain * e);
    Ok(out)
}

/// Value of the masked objective and its two region terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub loss: f64,
    pub j_target: f64,
    pub j_blank: f64,
}

/// `γ·(J_target + w·J_blank)` for the residual `reversed − ideal`, where each
/// term is the mean absolute residual over its own region. Also returns
/// the subgradient with respect to `reversed`.
pub fn residual_loss(
    reversed: &Array2<f64>,
    ideal: &Array2<f64>,
    masks: &Masks,
    w: f64,
    gamma: f64,
) -> Result<(LossTerms, Array2<f64>)> {
    check_shape(reversed, ideal)?;
    check_shape(reversed, &masks.target)?;
    check_shape(reversed, &masks.blank)?;
    let n_target = masks.target.sum();
    let n_blank = masks.blank.sum();
    let inv = |n: f64| if n > 0.0 { 1.0 / n } else { 0.0 };
    let (it, ib) = (inv(n_target), inv(n_blank));
    let (mut jt, mut jb) = (0.0, 0.0);
    let mut grad = Array2::zeros(reversed.dim());
    Zip::from(&mut grad)
        .and(reversed)
        .and(ideal)
        .and(&masks.target)
        .and(&masks.blank)
        .for_each(|g, &r, &x, &mt, &mb| {
            let d = r - x;
            jt += mt * d.abs();
            jb += mb * d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g = gamma * sign * (mt * it + w * mb * ib);
        });
    let (jt, jb) = (jt * it, jb * ib);
    Ok((
        LossTerms {
            loss: gamma * (jt + w * jb),
            j_target: jt,
            j_blank: jb,
        },
        grad,
    ))
}

/// Loss for an explicit noise prediction at a given diffused state, with
/// the gradient with respect to `eps_hat`.
pub fn masked_loss_for_prediction(
    sample: &TrainSample,
    sched: &NoiseSchedule,
    x_i: &Array2<f64>,
    i: usize,
    eps_hat: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Array2<f64>)> {
    let ideal = ideal_prev_state(&sample.x0, x_i, &sample.mu, sched, i)?;
    let reversed = reversed_prev_state(x_i, &sample.mu, sched, i, eps_hat)?;
    let (terms, d_rev) = residual_loss(&reversed, &ideal, &sample.masks, cfg.w, cfg.gamma_at(i))?;
    Ok((terms, d_rev * reversed_eps_gain(sched, i)))
}

/// Masked loss at an explicit diffused state with the parameter gradient.
pub fn masked_loss_at(
    sample: &TrainSample,
    sched: &NoiseSchedule,
    model: &DenoiserModel,
    x_i: &Array2<f64>,
    i: usize,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    let (eps_hat, tape) = model.forward(x_i, &sample.mu, i)?;
    let (terms, d_eps) = masked_loss_for_prediction(sample, sched, x_i, i, &eps_hat, cfg)?;
    let grad = model.backward(&tape, &d_eps)?;
    Ok((terms, grad))
}

/// Draws `x(i)` from the forward marginal and evaluates the masked loss.
pub fn masked_loss<R: Rng + ?Sized>(
    sample: &TrainSample,
    sched: &NoiseSchedule,
    model: &DenoiserModel,
    i: usize,
    rng: &mut R,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    check_step(sched, i)?;
    let (x_i, _) = forward_sample(&sample.x0, &sample.mu, sched, i, rng)?;
    masked_loss_at(sample, sched, model, &x_i, i, cfg)
}

/// Batch-averaged loss terms for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub terms: LossTerms,
}

/// Loss history of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iteration,loss,j_target,j_blank";

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.terms.loss).collect()
    }

    /// Mean loss over `rows[range]`.
    fn window_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.rows[range];
        rows.iter().map(|r| r.terms.loss).sum::<f64>() / rows.len() as f64
    }

    /// Mean loss over the first and last `window` iterations.
    pub fn smoothed_endpoints(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.rows.len();
        if window == 0 || window > n {
            return None;
        }
        Some((self.window_mean(0..window), self.window_mean(n - window..n)))
    }

    /// Relative drop `1 − last/first` of the smoothed loss.
    pub fn smoothed_decrease(&self, window: usize) -> Option<f64> {
        self.smoothed_endpoints(window).map(|(a, b)| 1.0 - b / a)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.iteration, r.terms.loss, r.terms.j_target, r.terms.j_blank);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRACE_HEADER) {
            return Err(Error::format("loss trace", "missing header"));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::format("loss trace", format!("line {}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            rows.push(TraceRow {
                iteration: f[0].trim().parse().map_err(|_| bad())?,
                terms: LossTerms {
                    loss: num(f[1])?,
                    j_target: num(f[2])?,
                    j_blank: num(f[3])?,
                },
            });
        }
        Ok(Self { rows })
    }
}

const ADAM_EPS: f64 = 1e-12;

/// Trained model plus its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: DenoiserModel,
    pub trace: LossTrace,
}

/// Trains a freshly initialized denoiser (seeded from `cfg.seed`).
pub fn train(dataset: &[TrainSample], sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainOutput> {
    let model = DenoiserModel::new(cfg.arch.clone(), cfg.seed)?;
    train_from(model, dataset, sched, cfg, |_| {})
}

/// Continues training `model`, binding it to `sched`. `on_step` sees every
/// trace row as it is produced.
pub fn train_from(
    mut model: DenoiserModel,
    dataset: &[TrainSample],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainOutput> {
    cfg.validate(sched)?;
    model.bind_schedule(sched);
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let dim = dataset[0].x0.dim();
    for s in dataset {
        check_shape(&dataset[0].x0, &s.x0)?;
        check_shape(&s.x0, &s.mu)?;
    }
    let m = model.arch().size_multiple();
    if !dim.0.is_multiple_of(m) || !dim.1.is_multiple_of(m) {
        return Err(Error::invalid(format!("image size {}×{} is not a multiple of {m}", dim.0, dim.1)));
    }

    // Keep sampling independent of the initialization stream.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut velocity = vec![0.0; model.param_count()];
    let mut second = vec![0.0; model.param_count()];
    let mut trace = LossTrace::default();
    let scale = 1.0 / cfg.batch_size as f64;

    for iteration in 1..=cfg.iterations {
        let mut grad = vec![0.0; model.param_count()];
        let mut sum = LossTerms::default();
        for _ in 0..cfg.batch_size {
            let sample = &dataset[rng.random_range(0..dataset.len())];
            let i = rng.random_range(1..=sched.steps());
            let (terms, g) = masked_loss(sample, sched, &model, i, &mut rng, cfg)?;
            sum.loss += terms.loss;
            sum.j_target += terms.j_target;
            sum.j_blank += terms.j_blank;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let terms = LossTerms {
            loss: sum.loss * scale,
            j_target: sum.j_target * scale,
            j_blank: sum.j_blank * scale,
        };
        if !terms.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                loss: terms.loss,
            });
        }
        let (lr, b1, b2) = (cfg.lr_at(iteration), cfg.momentum, cfg.beta2);
        let (c1, c2) = (1.0 - b1.powi(iteration as i32), 1.0 - b2.powi(iteration as i32));
        let params = model.params_mut().iter_mut().zip(&mut velocity).zip(&mut second);
        for (((p, v), s), g) in params.zip(&grad) {
            let g = g * scale;
            match cfg.optimizer {
                Optimizer::Adam => {
                    *v = b1 * *v + (1.0 - b1) * g;
                    *s = b2 * *s + (1.0 - b2) * g * g;
                    *p -= lr * ((*v / c1) / ((*s / c2).sqrt() + ADAM_EPS) + cfg.weight_decay * *p);
                }
                Optimizer::Sgd => {
                    *v = b1 * *v + g;
                    *p -= lr * *v;
                }
                Optimizer::Lion => {
                    let dir = b1 * *v + (1.0 - b1) * g;
                    let step = if dir == 0.0 { 0.0 } else { dir.signum() };
                    *p -= lr * (step + cfg.weight_decay * *p);
                    *v = b2 * *v + (1.0 - b2) * g;
                }
            }
        }
        let row = TraceRow { iteration, terms };
        on_step(&row);
        trace.rows.push(row);
    }
    Ok(TrainOutput { model, trace })
}

#[cfg(test)]
mod tests;
