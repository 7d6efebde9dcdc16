//! Denoising score-matching training loop: uniform t, MSE between predicted
//! and injected noise, Adam updates. Fully deterministic under the config
//! seed.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::ToyDenoiser;
use crate::schedule::{forward_noise, NoiseSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub segment_len: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            segment_len: 8000,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.segment_len == 0 {
            return Err(Error::Config(
                "steps, batch_size and segment_len must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config(
                "learning rate and adam_eps must be positive".into(),
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {b}")));
            }
        }
        Ok(())
    }
}

/// One training example: noisy input, its step index, and the injected noise
/// the model must recover.
pub type TrainExample = (Vec<f64>, usize, Vec<f64>);

/// Mean-per-element MSE over the batch, with parameter gradients accumulated
/// into `grads` (zeroed first). `loss = mean_s mean_i (ε̂_s[i] − ε_s[i])²`.
pub fn batch_loss_and_grad(
    model: &ToyDenoiser,
    batch: &[TrainExample],
    sched: &NoiseSchedule,
    grads: &mut [f64],
) -> Result<f64> {
    assert!(!batch.is_empty(), "empty training batch");
    assert_eq!(grads.len(), model.param_count());
    grads.fill(0.0);
    let mut loss = 0.0;
    let nb = batch.len() as f64;
    for (x_t, t, eps) in batch {
        let cache = model.forward_cached(x_t, sched.beta(*t))?;
        let l = x_t.len() as f64;
        let mut d_out = vec![0.0; x_t.len()];
        for i in 0..x_t.len() {
            let diff = cache.out[i] - eps[i];
            loss += diff * diff / (l * nb);
            d_out[i] = 2.0 * diff / (l * nb);
        }
        model.backward(&cache, &d_out, grads);
    }
    Ok(loss)
}

/// Train in place; returns the per-step loss history. Data order, segment
/// offsets, step indices and noise draws are all derived from `cfg.seed`, so
/// two runs with the same seed produce identical histories and parameters.
pub fn train_denoiser(
    model: &mut ToyDenoiser,
    dataset: &[Vec<f64>],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if let Some(short) = dataset.iter().find(|w| w.len() < cfg.segment_len) {
        return Err(Error::Config(format!(
            "dataset waveform of {} samples is shorter than segment_len {}",
            short.len(),
            cfg.segment_len
        )));
    }
    if cfg.segment_len < model.receptive_field() {
        return Err(Error::Config(format!(
            "segment_len {} is shorter than the receptive field {}",
            cfg.segment_len,
            model.receptive_field()
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let n_params = model.param_count();
    let mut grads = vec![0.0; n_params];
    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let w = &dataset[rng.random_range(0..dataset.len())];
            let off = rng.random_range(0..=w.len() - cfg.segment_len);
            let t = rng.random_range(1..=sched.num_steps());
            let x0 = &w[off..off + cfg.segment_len];
            let eps: Vec<f64> = (0..cfg.segment_len)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let x_t = forward_noise(x0, t, &eps, sched);
            batch.push((x_t, t, eps));
        }
        let loss = batch_loss_and_grad(model, &batch, sched, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: loss is not finite at step {step}"
            )));
        }
        let bc1 = 1.0 - cfg.adam_beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(step as i32);
        let params = model.params_mut();
        for i in 0..n_params {
            adam_m[i] = cfg.adam_beta1 * adam_m[i] + (1.0 - cfg.adam_beta1) * grads[i];
            adam_v[i] = cfg.adam_beta2 * adam_v[i] + (1.0 - cfg.adam_beta2) * grads[i] * grads[i];
            let mhat = adam_m[i] / bc1;
            let vhat = adam_v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
        history.push(loss);
    }
    Ok(history)
}

/// Moving average used by the loss-halving acceptance check.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    history
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(window - 1);
            let s: f64 = history[lo..=i].iter().sum();
            s / (i - lo + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::denoiser::DenoiserConfig;
    use crate::score::ScoreModel;

    fn tiny_model(seed: u64) -> ToyDenoiser {
        ToyDenoiser::new(DenoiserConfig {
            channels: 6,
            blocks: 4,
            cond_dim: 8,
            dilation_cycle: vec![1, 2, 4, 8],
            seed,
        })
        .unwrap()
    }

    fn tiny_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            segment_len: 64,
            learning_rate: 1e-3,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_dataset_loss_starts_near_one_and_decreases() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut model = tiny_model(1);
        let dataset = vec![vec![0.0; 256]; 4];
        let history = train_denoiser(&mut model, &dataset, &sched, &tiny_cfg(80)).unwrap();
        assert!(
            (history[0] - 1.0).abs() < 0.25,
            "initial loss {} should sit near Var(ε)=1",
            history[0]
        );
        let head: f64 = history[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = history[70..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "loss should decrease: {head} -> {tail}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut m1 = tiny_model(2);
        let mut m2 = tiny_model(2);
        let dataset = vec![vec![0.1; 256], vec![-0.05; 256]];
        let h1 = train_denoiser(&mut m1, &dataset, &sched, &tiny_cfg(20)).unwrap();
        let h2 = train_denoiser(&mut m2, &dataset, &sched, &tiny_cfg(20)).unwrap();
        assert_eq!(h1, h2, "identical seed must give identical loss history");
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn loss_matches_hand_expanded_formula() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut model = tiny_model(3);
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            if *p == 0.0 {
                *p = 1e-3 * (i % 5) as f64;
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let batch: Vec<TrainExample> = (0..3)
            .map(|_| {
                let x: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
                let e: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
                (x, rng.random_range(1..=50), e)
            })
            .collect();
        let mut grads = vec![0.0; model.param_count()];
        let loss = batch_loss_and_grad(&model, &batch, &sched, &mut grads).unwrap();
        // Hand expansion: mean over batch of per-element squared error.
        let mut manual = 0.0;
        for (x_t, t, eps) in &batch {
            let out = model.predict_eps(x_t, *t, &sched).unwrap();
            let mse: f64 = out
                .iter()
                .zip(eps)
                .map(|(o, e)| (o - e) * (o - e))
                .sum::<f64>()
                / out.len() as f64;
            manual += mse / batch.len() as f64;
        }
        assert!(
            (loss - manual).abs() <= 1e-15 * manual.abs().max(1.0),
            "implemented {loss} vs expanded {manual}"
        );
    }

    #[test]
    fn nan_parameters_abort_training() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut model = tiny_model(4);
        let n = model.param_count();
        model.params_mut()[n - 1] = f64::NAN; // output bias: NaN reaches the loss
        let dataset = vec![vec![0.0; 256]];
        let err = train_denoiser(&mut model, &dataset, &sched, &tiny_cfg(5)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn rejects_short_dataset_and_bad_config() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut model = tiny_model(5);
        let err = train_denoiser(&mut model, &[vec![0.0; 16]], &sched, &tiny_cfg(5)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let mut bad = tiny_cfg(5);
        bad.adam_beta1 = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn smoothing_window_averages() {
        let h = vec![4.0, 2.0, 0.0, 2.0];
        let s = smoothed(&h, 2);
        assert_eq!(s, vec![4.0, 3.0, 1.0, 1.0]);
    }
}
