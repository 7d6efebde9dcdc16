//! Reverse-time samplers: the unconditional ancestral DDPM loop and the
//! conditioning strategies applied on top of it (imputation, reconstruction
//! guidance, analytic separation likelihood, exact Gaussian conditional).
//! Guidance always acts by modifying the score before a standard reverse
//! step; there are no corrector iterations.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::operators::{Clip, Lowpass, Mel, Operator};
use crate::schedule::{eps_from_score, estimate_x0, score_from_eps, NoiseSchedule};
use crate::score::{GaussianPrior, ScoreModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    None,
    Imputation,
    Reconstruction,
    Separation,
    ExactGaussian,
}

impl GuidanceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "imputation" => Ok(GuidanceMode::Imputation),
            "reconstruction" => Ok(GuidanceMode::Reconstruction),
            "separation" => Ok(GuidanceMode::Separation),
            "exact_gaussian" => Ok(GuidanceMode::ExactGaussian),
            other => Err(Error::Config(format!("unknown guidance mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GuidanceMode::None => "none",
            GuidanceMode::Imputation => "imputation",
            GuidanceMode::Reconstruction => "reconstruction",
            GuidanceMode::Separation => "separation",
            GuidanceMode::ExactGaussian => "exact_gaussian",
        }
    }
}

/// Ancestral noise scale: DDPM posterior variance β̃_t (default) or plain β_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    Posterior,
    Beta,
}

#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// Base reconstruction-guidance scale; ξ(t) = xi0/(‖g‖₂ + norm_eps).
    pub xi0: f64,
    pub norm_eps: f64,
    pub seed: u64,
    pub sigma: SigmaKind,
    /// Record an x̂₀ snapshot every this many steps (0 = never).
    pub snapshot_every: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::None,
            xi0: 1.0,
            norm_eps: 1e-8,
            seed: 0,
            sigma: SigmaKind::Posterior,
            snapshot_every: 0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi0 >= 0.0) {
            return Err(Error::Config(format!("xi0 must be >= 0, got {}", self.xi0)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config(format!(
                "norm_eps must be > 0, got {}",
                self.norm_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub t: usize,
    pub grad_norm: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SamplerTrace {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl SamplerTrace {
    /// Comma-separated table of (t, guidance norm, residual), one row per
    /// reverse step in sampling order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,grad_norm,residual\n");
        for r in &self.steps {
            s.push_str(&format!(
                "{},{:.12e},{:.12e}\n",
                r.t, r.grad_norm, r.residual
            ));
        }
        s
    }
}

/// One ancestral DDPM step:
/// `x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t) + σ_t·z`.
/// The caller supplies `z` (all zeros at t = 1).
pub fn ddpm_reverse_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &NoiseSchedule,
    z: &[f64],
    sigma: SigmaKind,
) -> Vec<f64> {
    assert!(t >= 1 && t <= sched.num_steps(), "step {t} out of range");
    assert_eq!(x_t.len(), eps_hat.len());
    assert_eq!(x_t.len(), z.len());
    let beta = sched.beta(t);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    let var = match sigma {
        SigmaKind::Posterior => sched.posterior_variance(t),
        SigmaKind::Beta => beta,
    };
    let s = var.sqrt();
    x_t.iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), zi)| (x - coef * e) * inv + s * zi)
        .collect()
}

/// Imputation guidance (bandwidth extension): overwrite the low band of the
/// denoised estimate with the observation and convert back to a score.
/// `x̃̂₀ = x̂₀ − LPF(x̂₀) + y`, `s̃ = (√ᾱ·x̃̂₀ − x_t)/(1−ᾱ)`.
pub fn impute_score(
    score: &[f64],
    x_t: &[f64],
    t: usize,
    y: &[f64],
    lpf: &Lowpass,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if y.len() != x_t.len() || score.len() != x_t.len() {
        return Err(Error::Config(format!(
            "imputation length mismatch: x {} / score {} / y {}",
            x_t.len(),
            score.len(),
            y.len()
        )));
    }
    let x0 = estimate_x0(x_t, t, score, sched);
    let low = lpf.apply(&x0);
    let ab = sched.alpha_bar(t);
    let om = 1.0 - ab;
    Ok((0..x_t.len())
        .map(|i| {
            let imputed = x0[i] - low[i] + y[i];
            (ab.sqrt() * imputed - x_t[i]) / om
        })
        .collect())
}

/// Reconstruction (DPS) guidance: `g = (2/√ᾱ)·∇_{x̂₀} ½‖A(x̂₀) − y‖²` with the
/// score network treated as locally constant, and
/// `s̃ = s − ξ(t)·g`, `ξ(t) = xi0/(‖g‖₂ + δ)`. Returns the modified score and
/// ‖g‖₂ for diagnostics.
pub fn recon_guided_score(
    score: &[f64],
    x_t: &[f64],
    t: usize,
    y: &[f64],
    op: &dyn Operator,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<(Vec<f64>, f64)> {
    let x0 = estimate_x0(x_t, t, score, sched);
    let rg = op.residual_grad(&x0, y)?;
    let scale = 2.0 / sched.alpha_bar(t).sqrt();
    let g: Vec<f64> = rg.iter().map(|v| scale * v).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite guidance gradient at step {t}"
        )));
    }
    let xi = cfg.xi0 / (norm + cfg.norm_eps);
    Ok((
        score.iter().zip(&g).map(|(s, gi)| s - xi * gi).collect(),
        norm,
    ))
}

/// Log-likelihood of the mixture under the analytic separation model:
/// `log N(y; (x1_t + x2_t)/√ᾱ, 2(1−ᾱ)/ᾱ · I)`.
pub fn separation_log_likelihood(
    x1_t: &[f64],
    x2_t: &[f64],
    t: usize,
    y: &[f64],
    sched: &NoiseSchedule,
) -> Result<f64> {
    if x1_t.len() != x2_t.len() || y.len() != x1_t.len() {
        return Err(Error::Config("separation length mismatch".into()));
    }
    let ab = sched.alpha_bar(t);
    let var = 2.0 * (1.0 - ab) / ab;
    let inv_sqrt = 1.0 / ab.sqrt();
    let mut quad = 0.0;
    for i in 0..y.len() {
        let m = (x1_t[i] + x2_t[i]) * inv_sqrt;
        quad += (y[i] - m) * (y[i] - m);
    }
    let d = y.len() as f64;
    Ok(-0.5 * quad / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln())
}

/// Gradient of the separation log-likelihood with respect to each noisy
/// source; the shared term makes both gradients identical:
/// `√ᾱ·(y − (x1_t + x2_t)/√ᾱ) / (2(1−ᾱ))`.
pub fn separation_likelihood_grad(
    x1_t: &[f64],
    x2_t: &[f64],
    t: usize,
    y: &[f64],
    sched: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x1_t.len() != x2_t.len() || y.len() != x1_t.len() {
        return Err(Error::Config("separation length mismatch".into()));
    }
    let ab = sched.alpha_bar(t);
    let inv_sqrt = 1.0 / ab.sqrt();
    let coef = ab.sqrt() / (2.0 * (1.0 - ab));
    let g: Vec<f64> = (0..y.len())
        .map(|i| coef * (y[i] - (x1_t[i] + x2_t[i]) * inv_sqrt))
        .collect();
    Ok((g.clone(), g))
}

/// Exact conditional score for a Gaussian prior and a noiseless linear
/// observation `y = A x₀`: the score at step t of `N(√ᾱ·μ_p, ᾱΣ_p + (1−ᾱ)I)`
/// where `(μ_p, Σ_p)` is the closed-form posterior.
pub fn exact_gaussian_conditional_score(
    prior: &GaussianPrior,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    prior
        .condition_on_linear(a, y)?
        .marginal_score(x_t, t, sched)
}

/// Inverse-task description consumed by `solve_inverse`. The observation `y`
/// is passed separately (flattened mel frames for vocoding).
pub enum TaskSpec<'a> {
    Bwe {
        lpf: &'a Lowpass,
    },
    Declip {
        clip: &'a Clip,
    },
    Vocode {
        mel: &'a Mel,
        out_len: usize,
    },
    Separate,
    /// Verification-only: replace the model score by the exact conditional
    /// score of `prior` given `a·x₀ = y` (models are ignored).
    ExactGaussian {
        prior: &'a GaussianPrior,
        a: &'a DMatrix<f64>,
    },
}

impl TaskSpec<'_> {
    fn default_mode(&self) -> GuidanceMode {
        match self {
            TaskSpec::Bwe { .. } => GuidanceMode::Imputation,
            TaskSpec::Declip { .. } | TaskSpec::Vocode { .. } => GuidanceMode::Reconstruction,
            TaskSpec::Separate => GuidanceMode::Separation,
            TaskSpec::ExactGaussian { .. } => GuidanceMode::ExactGaussian,
        }
    }

    fn mode_allowed(&self, mode: GuidanceMode) -> bool {
        mode == GuidanceMode::None || mode == self.default_mode()
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Run the guided reverse diffusion for an inverse task. Returns one restored
/// signal per chain (two for separation) plus the per-step trace.
///
/// `models` supplies the score model for each chain: one entry shared by both
/// chains, or one per chain for separation with distinct priors. x_T is drawn
/// from N(0, I) per chain; all randomness derives from `cfg.seed`.
pub fn solve_inverse(
    task: &TaskSpec,
    y: &[f64],
    models: &[&dyn ScoreModel],
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<(Vec<Vec<f64>>, SamplerTrace)> {
    cfg.validate()?;
    if !task.mode_allowed(cfg.mode) {
        return Err(Error::Config(format!(
            "guidance mode '{}' does not apply to this task",
            cfg.mode.name()
        )));
    }
    let n_chains = if matches!(task, TaskSpec::Separate) {
        2
    } else {
        1
    };
    let dim = match task {
        TaskSpec::Bwe { .. } | TaskSpec::Declip { .. } | TaskSpec::Separate => y.len(),
        TaskSpec::Vocode { mel, out_len } => {
            if mel.output_len(*out_len) != y.len() {
                return Err(Error::Config(format!(
                    "mel observation has {} values, {} samples produce {}",
                    y.len(),
                    out_len,
                    mel.output_len(*out_len)
                )));
            }
            *out_len
        }
        TaskSpec::ExactGaussian { prior, .. } => prior.dim(),
    };
    if dim == 0 {
        return Err(Error::Config("empty observation".into()));
    }
    // Exact-Gaussian guidance folds model and observation into one
    // conditioned prior, computed once.
    let posterior = match task {
        TaskSpec::ExactGaussian { prior, a } => {
            if y.len() != a.nrows() {
                return Err(Error::Config(format!(
                    "observation has {} values, matrix has {} rows",
                    y.len(),
                    a.nrows()
                )));
            }
            Some(prior.condition_on_linear(a, &DVector::from_column_slice(y))?)
        }
        _ => None,
    };
    if posterior.is_none() {
        match (n_chains, models.len()) {
            (1, 1) | (2, 1) | (2, 2) => {}
            _ => {
                return Err(Error::Config(format!(
                    "task needs {} score model(s), got {}",
                    n_chains,
                    models.len()
                )))
            }
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut chains: Vec<Vec<f64>> = (0..n_chains)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut trace = SamplerTrace::default();

    for t in (1..=sched.num_steps()).rev() {
        let zs: Vec<Vec<f64>> = (0..n_chains)
            .map(|_| {
                if t == 1 {
                    vec![0.0; dim]
                } else {
                    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
                }
            })
            .collect();

        let mut scores = Vec::with_capacity(n_chains);
        if let Some(post) = &posterior {
            scores.push(post.marginal_score(&chains[0], t, sched)?);
        } else {
            for (c, chain) in chains.iter().enumerate() {
                let model = models[c.min(models.len() - 1)];
                let eps = model.predict_eps(chain, t, sched)?;
                scores.push(score_from_eps(&eps, t, sched));
            }
        }

        let (guided, grad_norm, residual): (Vec<Vec<f64>>, f64, f64) =
            if cfg.mode == GuidanceMode::None || posterior.is_some() {
                (scores.clone(), 0.0, 0.0)
            } else {
                match task {
                    TaskSpec::Bwe { lpf } => {
                        let s = impute_score(&scores[0], &chains[0], t, y, lpf, sched)?;
                        let gnorm = s
                            .iter()
                            .zip(&scores[0])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        let imputed = estimate_x0(&chains[0], t, &s, sched);
                        let diff: Vec<f64> = lpf
                            .apply(&imputed)
                            .iter()
                            .zip(y)
                            .map(|(a, b)| a - b)
                            .collect();
                        (vec![s], gnorm, rms(&diff))
                    }
                    TaskSpec::Declip { clip } => {
                        let (s, gnorm) =
                            recon_guided_score(&scores[0], &chains[0], t, y, *clip, cfg, sched)?;
                        let x0 = estimate_x0(&chains[0], t, &scores[0], sched);
                        (vec![s], gnorm, clip.residual(&x0, y)?)
                    }
                    TaskSpec::Vocode { mel, .. } => {
                        let (s, gnorm) =
                            recon_guided_score(&scores[0], &chains[0], t, y, *mel, cfg, sched)?;
                        let x0 = estimate_x0(&chains[0], t, &scores[0], sched);
                        (vec![s], gnorm, mel.residual(&x0, y)?)
                    }
                    TaskSpec::Separate => {
                        let (g1, g2) =
                            separation_likelihood_grad(&chains[0], &chains[1], t, y, sched)?;
                        let gnorm = norm2(&g1);
                        let ab_sqrt = sched.alpha_bar(t).sqrt();
                        let mix_res: Vec<f64> = (0..dim)
                            .map(|i| y[i] - (chains[0][i] + chains[1][i]) / ab_sqrt)
                            .collect();
                        let s1: Vec<f64> = scores[0].iter().zip(&g1).map(|(s, g)| s + g).collect();
                        let s2: Vec<f64> = scores[1].iter().zip(&g2).map(|(s, g)| s + g).collect();
                        (vec![s1, s2], gnorm, rms(&mix_res))
                    }
                    TaskSpec::ExactGaussian { .. } => unreachable!("handled above"),
                }
            };

        for c in 0..n_chains {
            let eps = eps_from_score(&guided[c], t, sched);
            chains[c] = ddpm_reverse_step(&chains[c], t, &eps, sched, &zs[c], cfg.sigma);
            if chains[c].iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "sampler state became non-finite at step {t} (grad norm {grad_norm:.3e})"
                )));
            }
        }
        if cfg.snapshot_every > 0 && (t - 1) % cfg.snapshot_every == 0 {
            let s0 = estimate_x0_or_state(&chains[0], t, &guided[0], sched);
            trace.snapshots.push((t, s0));
        }
        trace.steps.push(StepRecord {
            t,
            grad_norm,
            residual,
        });
    }
    if let TaskSpec::Declip { clip } = task {
        // The observation pins unclipped samples exactly and bounds the
        // magnitude of saturated ones; the returned estimate satisfies both.
        chains[0] = clip.project_consistent(&chains[0], y)?;
    }
    Ok((chains, trace))
}

fn estimate_x0_or_state(x: &[f64], t: usize, score: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    if t >= 1 {
        estimate_x0(x, t, score, sched)
    } else {
        x.to_vec()
    }
}

/// Unconditional ancestral sampling from the model prior.
pub fn sample_prior(
    model: &dyn ScoreModel,
    dim: usize,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=sched.num_steps()).rev() {
        let z: Vec<f64> = if t == 1 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| rng.sample(StandardNormal)).collect()
        };
        let eps = model.predict_eps(&x, t, sched)?;
        x = ddpm_reverse_step(&x, t, &eps, sched, &z, cfg.sigma);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "sampler state became non-finite at step {t}"
            )));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::forward_noise;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(200, 1e-4, 0.02).unwrap()
    }

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn final_step_recovers_x0_exactly() {
        let s = sched();
        let x0 = randn(32, 1);
        let eps = randn(32, 2);
        let x1 = forward_noise(&x0, 1, &eps, &s);
        let z = vec![0.0; 32];
        let out = ddpm_reverse_step(&x1, 1, &eps, &s, &z, SigmaKind::Posterior);
        for i in 0..32 {
            assert!((out[i] - x0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_eps_zero_noise_is_pure_rescaling() {
        let s = sched();
        let x = randn(8, 3);
        let z = vec![0.0; 8];
        let out = ddpm_reverse_step(&x, 40, &vec![0.0; 8], &s, &z, SigmaKind::Posterior);
        let inv = 1.0 / (1.0 - s.beta(40)).sqrt();
        for i in 0..8 {
            assert!((out[i] - x[i] * inv).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_gaussian_sampler_recovers_moments() {
        // 1-D N(0,1) prior with the analytic score: 10^4 reverse trajectories.
        let s = sched();
        let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
        let cfg = GuidanceConfig::default();
        let n = 10_000;
        let (mut mean, mut var) = (0.0, 0.0);
        for i in 0..n {
            let x = sample_prior(
                &prior,
                1,
                &s,
                &GuidanceConfig {
                    seed: 1000 + i as u64,
                    ..cfg.clone()
                },
            )
            .unwrap();
            mean += x[0];
            var += x[0] * x[0];
        }
        mean /= n as f64;
        var = var / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "sample mean {mean}");
        assert!((0.9..=1.1).contains(&var), "sample variance {var}");
    }

    #[test]
    fn unconditional_norm_stays_near_sqrt_d() {
        // Unit-variance collapse: E‖x_t‖ within [0.8, 1.2]·√d at every step.
        let s = sched();
        let d = 16;
        let prior = GaussianPrior::isotropic(d, 1.0).unwrap();
        let n_chains = 200;
        let mut norms = vec![0.0; s.num_steps() + 1];
        for c in 0..n_chains {
            let mut rng = ChaCha12Rng::seed_from_u64(42 + c);
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            norms[s.num_steps()] += norm2(&x);
            for t in (1..=s.num_steps()).rev() {
                let z: Vec<f64> = if t == 1 {
                    vec![0.0; d]
                } else {
                    (0..d).map(|_| rng.sample(StandardNormal)).collect()
                };
                let eps = prior.predict_eps(&x, t, &s).unwrap();
                x = ddpm_reverse_step(&x, t, &eps, &s, &z, SigmaKind::Posterior);
                norms[t - 1] += norm2(&x);
            }
        }
        let sqrt_d = (d as f64).sqrt();
        for (t, total) in norms.iter().enumerate() {
            let avg = total / n_chains as f64;
            assert!(
                avg > 0.8 * sqrt_d && avg < 1.2 * sqrt_d,
                "E‖x‖ at t={t}: {avg} vs √d={sqrt_d}"
            );
        }
    }

    #[test]
    fn impute_with_consistent_observation_is_identity() {
        let s = sched();
        let lpf = Lowpass::design(2000.0, 16000.0, 65).unwrap();
        let x_t = randn(512, 5);
        let score: Vec<f64> = randn(512, 6).iter().map(|v| 0.1 * v).collect();
        let t = 120;
        let x0 = estimate_x0(&x_t, t, &score, &s);
        let y = lpf.apply(&x0);
        let out = impute_score(&score, &x_t, t, &y, &lpf, &s).unwrap();
        for i in 0..512 {
            assert!(
                (out[i] - score[i]).abs() < 1e-9,
                "consistent y must leave the score unchanged"
            );
        }
    }

    #[test]
    fn impute_degenerate_full_band_observation() {
        // LPF = identity (single unit tap), y = 0 ⇒ x̃̂₀ = 0, s̃ = −x_t/(1−ᾱ).
        let s = sched();
        let lpf = Lowpass::from_kernel(vec![1.0]);
        let x_t = randn(64, 7);
        let score = randn(64, 8);
        let t = 50;
        let y = vec![0.0; 64];
        let out = impute_score(&score, &x_t, t, &y, &lpf, &s).unwrap();
        let om = 1.0 - s.alpha_bar(t);
        for i in 0..64 {
            assert!((out[i] + x_t[i] / om).abs() < 1e-10);
        }
    }

    #[test]
    fn recon_guidance_zero_residual_keeps_score() {
        let s = sched();
        let clip = Clip::new(0.5).unwrap();
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            ..Default::default()
        };
        let x_t = randn(64, 9);
        let score = randn(64, 10);
        let t = 80;
        let x0 = estimate_x0(&x_t, t, &score, &s);
        let y = clip.apply(&x0);
        let (out, gnorm) = recon_guided_score(&score, &x_t, t, &y, &clip, &cfg, &s).unwrap();
        assert_eq!(gnorm, 0.0);
        assert_eq!(
            out, score,
            "zero residual must leave the score bit-identical"
        );
    }

    #[test]
    fn xi0_zero_matches_unconditional_bit_exactly() {
        let s = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
        let prior = GaussianPrior::ar1(24, 0.8).unwrap();
        let clip = Clip::new(0.4).unwrap();
        let y = randn(24, 11);
        let task = TaskSpec::Declip { clip: &clip };
        let guided_cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            xi0: 0.0,
            seed: 77,
            ..Default::default()
        };
        let none_cfg = GuidanceConfig {
            mode: GuidanceMode::None,
            seed: 77,
            ..Default::default()
        };
        let (a, _) = solve_inverse(&task, &y, &[&prior], &s, &guided_cfg).unwrap();
        let (b, _) = solve_inverse(&task, &y, &[&prior], &s, &none_cfg).unwrap();
        assert_eq!(
            a[0], b[0],
            "xi0 = 0 must reproduce the unconditional trajectory"
        );
    }

    #[test]
    fn separation_consistent_mixture_has_zero_gradient() {
        let s = sched();
        let x1 = randn(16, 12);
        let x2 = randn(16, 13);
        let t = 60;
        let ab = s.alpha_bar(t);
        let y: Vec<f64> = (0..16).map(|i| (x1[i] + x2[i]) / ab.sqrt()).collect();
        let (g1, g2) = separation_likelihood_grad(&x1, &x2, t, &y, &s).unwrap();
        assert_eq!(g1, g2, "shared term must be identical for both sources");
        for g in g1 {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn separation_scalar_case_gives_point_two() {
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap(); // ᾱ(1) = 0.25
        let (g1, g2) = separation_likelihood_grad(&[0.1], &[0.1], 1, &[1.0], &s).unwrap();
        assert!((g1[0] - 0.2).abs() < 1e-15, "got {}", g1[0]);
        assert!((g2[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn separation_grad_matches_fd_of_log_likelihood() {
        let s = sched();
        let x1 = randn(6, 14);
        let x2 = randn(6, 15);
        let y = randn(6, 16);
        let t = 90;
        let (g1, _) = separation_likelihood_grad(&x1, &x2, t, &y, &s).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x1.clone();
            xp[i] += h;
            let lp = separation_log_likelihood(&xp, &x2, t, &y, &s).unwrap();
            xp[i] = x1[i] - h;
            let lm = separation_log_likelihood(&xp, &x2, t, &y, &s).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g1[i]).abs() / fd.abs().max(g1[i].abs()).max(1e-9);
            assert!(rel < 1e-6, "coord {i}: fd {fd} vs {}", g1[i]);
        }
    }

    #[test]
    fn exact_conditional_identity_observation() {
        let s = sched();
        let prior = GaussianPrior::ar1(4, 0.5).unwrap();
        let a = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![0.2, -0.3, 0.5, 0.0]);
        let x = randn(4, 17);
        let t = 70;
        let score = exact_gaussian_conditional_score(&prior, &a, &y, &x, t, &s).unwrap();
        let (ab, om) = (s.alpha_bar(t), 1.0 - s.alpha_bar(t));
        for i in 0..4 {
            let expect = -(x[i] - ab.sqrt() * y[i]) / om;
            assert!((score[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn solve_inverse_is_seed_deterministic() {
        let s = NoiseSchedule::linear(25, 1e-4, 0.02).unwrap();
        let prior = GaussianPrior::ar1(16, 0.7).unwrap();
        let clip = Clip::new(0.5).unwrap();
        let y = randn(16, 18);
        let task = TaskSpec::Declip { clip: &clip };
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            seed: 5,
            ..Default::default()
        };
        let (a, ta) = solve_inverse(&task, &y, &[&prior], &s, &cfg).unwrap();
        let (b, tb) = solve_inverse(&task, &y, &[&prior], &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.to_csv(), tb.to_csv());
        let (c, _) = solve_inverse(
            &task,
            &y,
            &[&prior],
            &s,
            &GuidanceConfig {
                seed: 6,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_ne!(a, c, "different seeds must give different samples");
    }

    #[test]
    fn mode_task_mismatch_rejected() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let prior = GaussianPrior::isotropic(8, 1.0).unwrap();
        let clip = Clip::new(0.5).unwrap();
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Imputation,
            ..Default::default()
        };
        let err = solve_inverse(
            &TaskSpec::Declip { clip: &clip },
            &vec![0.0; 8],
            &[&prior],
            &s,
            &cfg,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let s = NoiseSchedule::linear(12, 1e-4, 0.02).unwrap();
        let prior = GaussianPrior::isotropic(8, 1.0).unwrap();
        let clip = Clip::new(0.5).unwrap();
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            ..Default::default()
        };
        let (_, trace) = solve_inverse(
            &TaskSpec::Declip { clip: &clip },
            &vec![0.1; 8],
            &[&prior],
            &s,
            &cfg,
        )
        .unwrap();
        assert_eq!(trace.steps.len(), 12);
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 13, "header plus one row per step");
        assert!(csv.starts_with("t,grad_norm,residual"));
    }
}
