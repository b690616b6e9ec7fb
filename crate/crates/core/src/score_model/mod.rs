//! Noise predictors `ε̃(x̃(t), μ, t)` used by the reverse sampler.

mod checkpoint;
mod denoiser;
mod embedding;
mod layers;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use denoiser::{DenoiserArch, DenoiserModel, Head, Tape, RESIDUAL_PRIOR_VAR};
pub use embedding::time_embedding;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::sde::{check_shape, marginal, NoiseSchedule};

/// Predicts the standard-normal noise contained in a diffused state.
pub trait ScoreModel {
    /// Returns `ε̃` with the same shape as `x_t`.
    fn predict(&self, x_t: &Array2<f64>, mu: &Array2<f64>, t: usize) -> Result<Array2<f64>>;
}

/// Exact noise predictor for a known clean state.
#[derive(Debug, Clone)]
pub struct OracleModel {
    x0: Array2<f64>,
    schedule: NoiseSchedule,
}

impl OracleModel {
    pub fn new(x0: Array2<f64>, schedule: NoiseSchedule) -> Self {
        Self { x0, schedule }
    }

    pub fn clean(&self) -> &Array2<f64> {
        &self.x0
    }
}

/// `(x_t − m_t) / √v_t` for the marginal anchored at `x0`.
pub fn oracle_predict(
    x0: &Array2<f64>,
    x_t: &Array2<f64>,
    mu: &Array2<f64>,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<Array2<f64>> {
    check_shape(x0, x_t)?;
    let (m, v) = marginal(x0, mu, sched, t)?;
    if v <= 0.0 {
        return Err(Error::DegenerateVariance(v));
    }
    let inv = 1.0 / v.sqrt();
    Ok(Zip::from(x_t).and(&m).map_collect(|&x, &m| (x - m) * inv))
}

impl ScoreModel for OracleModel {
    fn predict(&self, x_t: &Array2<f64>, mu: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        oracle_predict(&self.x0, x_t, mu, &self.schedule, t)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn predict(&self, x_t: &Array2<f64>, mu: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        (**self).predict(x_t, mu, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{forward_sample, standard_normal, ScheduleConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_returns_zero_at_the_mean() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0 = array![[0.9, 0.1]];
        let mu = array![[0.2, 0.4]];
        let m = marginal(&x0, &mu, &s, 30).unwrap().0;
        let model = OracleModel::new(x0, s);
        assert!(model.predict(&m, &mu, 30).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn oracle_inverts_forward_sample() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = standard_normal((4, 4), &mut rng);
        let mu = standard_normal((4, 4), &mut rng);
        let model = OracleModel::new(x0.clone(), s.clone());
        for t in [1, 2, 50, 100] {
            let (xt, eps) = forward_sample(&x0, &mu, &s, t, &mut rng).unwrap();
            let got = model.predict(&xt, &mu, t).unwrap();
            for (a, b) in got.iter().zip(eps.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_hand_case() {
        // One step with θ̄ = ln 2 halves the deviation.
        let s = NoiseSchedule::from_thetas(0.3, 1.0, vec![0.0, 2f64.ln()]);
        let v = s.variance(1);
        let model = OracleModel::new(array![[1.0]], s);
        let out = model.predict(&array![[0.5 + v.sqrt()]], &array![[0.0]], 1).unwrap();
        assert!((out[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_degenerate_at_zero() {
        let s = ScheduleConfig::default().build().unwrap();
        let model = OracleModel::new(array![[1.0]], s);
        assert!(matches!(
            model.predict(&array![[1.0]], &array![[0.0]], 0),
            Err(Error::DegenerateVariance(_))
        ));
    }
}
