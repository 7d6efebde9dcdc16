//! Discrete-time noise schedule and the algebra connecting `x0`, `x_t`,
//! `eps` and the score.
//!
//! The forward process is `x_t = sqrt(abar(t)) * x0 + sqrt(1 - abar(t)) * eps`
//! with `abar(t) = prod_{s=1..t} (1 - beta(s))` and `abar(0) = 1`. Steps are
//! indexed `1..=T`; all schedule math is in double precision.

use crate::{Error, Result};

/// Discrete beta/alpha-bar tables. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,      // betas[i] = beta(i + 1)
    alpha_bars: Vec<f64>, // alpha_bars[i] = abar(i + 1)
}

impl NoiseSchedule {
    /// Linear schedule: `beta(s) = beta_min + (s-1)/(T-1) * (beta_max - beta_min)`.
    /// For `T = 1` the single beta is `beta_min`.
    pub fn linear(num_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas = if num_steps == 1 {
            vec![beta_min]
        } else {
            let span = beta_max - beta_min;
            (0..num_steps)
                .map(|i| beta_min + i as f64 / (num_steps - 1) as f64 * span)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Build a schedule from explicit betas (each in `(0, 1)`).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta(t)` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.betas.len(), "step {t} out of range");
        self.betas[t - 1]
    }

    /// `abar(t)` for `t` in `0..=T`; `abar(0) = 1`. Exact table lookup.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.alpha_bars.len(), "step {t} out of range");
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// DDPM posterior variance `beta~(t) = (1 - abar(t-1)) / (1 - abar(t)) * beta(t)`.
    /// Zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// `x_t = sqrt(abar(t)) x0 + sqrt(1 - abar(t)) eps`. The noise is an explicit
/// argument so callers control determinism.
pub fn forward_noise(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    assert_eq!(x0.len(), eps.len(), "x0/eps length mismatch");
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// `score = -eps_hat / sqrt(1 - abar(t))`. Requires `t >= 1` (step 0 carries
/// no noise and the scaling is undefined there).
pub fn score_from_eps(eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    assert!(t >= 1, "score_from_eps undefined at t = 0");
    let s = (1.0 - sched.alpha_bar(t)).sqrt();
    eps_hat.iter().map(|e| -e / s).collect()
}

/// Inverse of [`score_from_eps`]: `eps_hat = -sqrt(1 - abar(t)) * score`.
pub fn eps_from_score(score: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    assert!(t >= 1, "eps_from_score undefined at t = 0");
    let s = (1.0 - sched.alpha_bar(t)).sqrt();
    score.iter().map(|v| -s * v).collect()
}

/// One-step denoised estimate `x0_hat = (x_t + (1 - abar(t)) * score) / sqrt(abar(t))`.
pub fn estimate_x0(x_t: &[f64], t: usize, score: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    assert_eq!(x_t.len(), score.len(), "x_t/score length mismatch");
    let ab = sched.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    let c = 1.0 - ab;
    x_t.iter()
        .zip(score)
        .map(|(x, s)| (x + c * s) * inv)
        .collect()
}
