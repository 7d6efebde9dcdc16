//! Score/ε predictors: an exact Gaussian oracle for verification and a small
//! trainable time-domain denoiser.

pub mod checkpoint;
pub mod denoiser;
pub mod gaussian;
pub mod train;

pub use denoiser::ToyDenoiser;
pub use gaussian::{gaussian_analytic_eps, GaussianPrior};
pub use train::{train_denoiser, TrainConfig};

use crate::schedule::{score_from_eps, NoiseSchedule};
use crate::Result;

/// A model predicting the standard-normal noise ε that produced `x_t`.
pub trait ScoreModel {
    /// ε̂(x_t, t); output length equals input length, deterministic for fixed
    /// parameters.
    fn predict_eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>>;

    /// Score ∇ log p_t(x_t) = −ε̂/√(1−ᾱ(t)).
    fn score(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let eps = self.predict_eps(x_t, t, sched)?;
        Ok(score_from_eps(&eps, t, sched))
    }
}
