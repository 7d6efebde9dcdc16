//! Analytic Gaussian prior with closed-form marginal scores under the
//! forward diffusion, plus exact linear-Gaussian conditioning. Every sampler
//! and guidance rule in the crate can be validated against these oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ScoreModel;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone)]
enum CovKind {
    Diagonal {
        var: DVector<f64>,
    },
    /// Full SPD/PSD covariance with its eigendecomposition `cov = Q diag(lam) Qᵀ`
    /// cached so per-step scores cost two mat-vecs.
    Full {
        cov: DMatrix<f64>,
        q: DMatrix<f64>,
        lam: DVector<f64>,
    },
}

/// Gaussian prior `N(mean, cov)` over clean signals (d ≤ 64 intended).
/// The diffused marginal at step t is `N(√ᾱ·mean, ᾱ·cov + (1−ᾱ)I)`, so the
/// score and ε̂ are available in closed form at every noise level.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    kind: CovKind,
}

impl GaussianPrior {
    pub fn isotropic(dim: usize, var: f64) -> Result<Self> {
        GaussianPrior::diagonal(vec![0.0; dim], vec![var; dim])
    }

    pub fn diagonal(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::Config("mean/variance dimension mismatch".into()));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config(
                "diagonal covariance requires positive entries".into(),
            ));
        }
        Ok(GaussianPrior {
            mean: DVector::from_vec(mean),
            kind: CovKind::Diagonal {
                var: DVector::from_vec(var),
            },
        })
    }

    /// Full covariance; must be symmetric and positive semi-definite
    /// (eigenvalues below round-off are clamped to zero, so exact posteriors
    /// with deterministic coordinates are representable).
    pub fn full(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d || d == 0 {
            return Err(Error::Config("covariance shape mismatch".into()));
        }
        // Tolerances carry an absolute floor so posteriors whose covariance
        // collapses to numerical zero (fully observed coordinates) survive.
        let scale = cov.amax().max(1e-300);
        let tol = (1e-9 * scale).max(1e-12);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > tol {
                    return Err(Error::Config("covariance is not symmetric".into()));
                }
            }
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let mut lam = eig.eigenvalues;
        for l in lam.iter_mut() {
            if *l < -tol {
                return Err(Error::Config(
                    "covariance is not positive semi-definite".into(),
                ));
            }
            if *l < 0.0 {
                *l = 0.0;
            }
        }
        Ok(GaussianPrior {
            mean: DVector::from_vec(mean),
            kind: CovKind::Full {
                cov: sym,
                q: eig.eigenvectors,
                lam,
            },
        })
    }

    /// Stationary AR(1) prior: unit marginal variance, Toeplitz covariance
    /// `Σᵢⱼ = ρ^{|i−j|}`.
    pub fn ar1(dim: usize, rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "AR(1) rho must satisfy |rho| < 1, got {rho}"
            )));
        }
        let cov = DMatrix::from_fn(dim, dim, |i, j| rho.powi((i as i32 - j as i32).abs()));
        GaussianPrior::full(vec![0.0; dim], cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.kind {
            CovKind::Diagonal { var } => DMatrix::from_diagonal(var),
            CovKind::Full { cov, .. } => cov.clone(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "input has length {}, prior dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Marginal eigvalues `ᾱ·λ + (1−ᾱ)` must stay positive; they vanish only
    /// when ᾱ=1 (t=0) and the covariance itself is singular.
    fn marginal_eigs(&self, a: f64) -> Result<DVector<f64>> {
        let lam = match &self.kind {
            CovKind::Diagonal { var } => var.clone(),
            CovKind::Full { lam, .. } => lam.clone(),
        };
        let c = lam.map(|l| a * l + (1.0 - a));
        if c.iter().any(|&v| v <= 1e-300) {
            return Err(Error::Numeric(
                "singular covariance: marginal is degenerate at this step".into(),
            ));
        }
        Ok(c)
    }

    /// Score of the diffused marginal, `−(ᾱΣ + (1−ᾱ)I)^{-1}(x_t − √ᾱ·μ)`.
    pub fn marginal_score(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        let a = sched.alpha_bar(t);
        let c = self.marginal_eigs(a)?;
        let x = DVector::from_column_slice(x_t);
        let centered = x - self.mean.scale(a.sqrt());
        let s = match &self.kind {
            CovKind::Diagonal { .. } => -centered.component_div(&c),
            CovKind::Full { q, .. } => {
                let u = q.transpose() * centered;
                -(q * u.component_div(&c))
            }
        };
        Ok(s.as_slice().to_vec())
    }

    /// Log-density of the diffused marginal at `x_t` (finite-difference
    /// target for score checks).
    pub fn log_marginal_density(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<f64> {
        self.check_dim(x_t)?;
        let a = sched.alpha_bar(t);
        let c = self.marginal_eigs(a)?;
        let x = DVector::from_column_slice(x_t);
        let centered = x - self.mean.scale(a.sqrt());
        let quad = match &self.kind {
            CovKind::Diagonal { .. } => centered.component_div(&c).dot(&centered),
            CovKind::Full { q, .. } => {
                let u = q.transpose() * centered;
                u.component_div(&c).dot(&u)
            }
        };
        let logdet: f64 = c.iter().map(|v| v.ln()).sum();
        let d = self.dim() as f64;
        Ok(-0.5 * (quad + logdet + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// Exact posterior for a noiseless linear observation `y = A x₀`:
    /// `μ_p = μ + ΣAᵀ(AΣAᵀ)^{-1}(y − Aμ)`, `Σ_p = Σ − ΣAᵀ(AΣAᵀ)^{-1}AΣ`.
    pub fn condition_on_linear(&self, a: &DMatrix<f64>, y: &DVector<f64>) -> Result<GaussianPrior> {
        let d = self.dim();
        if a.ncols() != d || a.nrows() != y.len() || a.nrows() == 0 {
            return Err(Error::Config(format!(
                "observation matrix is {}x{}, prior dimension {} and y length {}",
                a.nrows(),
                a.ncols(),
                d,
                y.len()
            )));
        }
        let sigma = self.covariance();
        let sig_at = &sigma * a.transpose();
        let gram = a * &sig_at;
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| Error::Config("observation matrix is rank-deficient".into()))?;
        let innov = y - a * &self.mean;
        let mean_p = &self.mean + &sig_at * chol.solve(&innov);
        let cov_p = &sigma - &sig_at * chol.solve(&sig_at.transpose());
        GaussianPrior::full(mean_p.as_slice().to_vec(), cov_p)
    }

    /// Draw one sample from the prior.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let out = match &self.kind {
            CovKind::Diagonal { var } => &self.mean + z.component_mul(&var.map(f64::sqrt)),
            CovKind::Full { q, lam, .. } => &self.mean + q * z.component_mul(&lam.map(f64::sqrt)),
        };
        out.as_slice().to_vec()
    }
}

/// ε̂ consistent with the exact marginal score: `ε̂ = −√(1−ᾱ)·score`.
pub fn gaussian_analytic_eps(
    prior: &GaussianPrior,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    assert!(t >= 1, "eps is defined for steps t >= 1");
    let s = prior.marginal_score(x_t, t, sched)?;
    let scale = (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(s.iter().map(|v| -scale * v).collect())
}

impl ScoreModel for GaussianPrior {
    fn predict_eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        gaussian_analytic_eps(self, x_t, t, sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(200, 1e-4, 0.02).unwrap()
    }

    /// Central finite differences of the log marginal density. The density is
    /// quadratic in x, so central differences are exact up to round-off.
    fn fd_score(prior: &GaussianPrior, x: &[f64], t: usize, s: &NoiseSchedule) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] += h;
                let lp = prior.log_marginal_density(&xp, t, s).unwrap();
                xp[i] = x[i] - h;
                let lm = prior.log_marginal_density(&xp, t, s).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn standard_normal_prior_collapses() {
        // μ=0, Σ=I: marginal is N(0, I) at every t, so score = −x and
        // ε̂ = √(1−ᾱ)·x.
        let prior = GaussianPrior::isotropic(4, 1.0).unwrap();
        let s = sched();
        let x = [0.3, -1.2, 0.05, 2.0];
        for t in [1, 50, 200] {
            let score = prior.marginal_score(&x, t, &s).unwrap();
            for (sc, xi) in score.iter().zip(&x) {
                assert!((sc + xi).abs() < 1e-12);
            }
            let eps = gaussian_analytic_eps(&prior, &x, t, &s).unwrap();
            let scale = (1.0 - s.alpha_bar(t)).sqrt();
            for (e, xi) in eps.iter().zip(&x) {
                assert!((e - scale * xi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_at_t_zero_is_prior_score() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let prior = GaussianPrior::full(vec![1.0, -1.0], cov.clone()).unwrap();
        let s = sched();
        let x = [0.4, 0.7];
        let score = prior.marginal_score(&x, 0, &s).unwrap();
        let inv = cov.try_inverse().unwrap();
        let centered = DVector::from_vec(vec![0.4 - 1.0, 0.7 + 1.0]);
        let expect = -(inv * centered);
        for i in 0..2 {
            assert!((score[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn full_covariance_score_matches_fd() {
        // d=2, Σ=[[2,0.5],[0.5,1]], μ=[1,−1], checked at an ᾱ near 0.5.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let prior = GaussianPrior::full(vec![1.0, -1.0], cov).unwrap();
        let s = sched();
        let t = (1..=200)
            .min_by(|&a, &b| {
                (s.alpha_bar(a) - 0.5)
                    .abs()
                    .partial_cmp(&(s.alpha_bar(b) - 0.5).abs())
                    .unwrap()
            })
            .unwrap();
        let x = [0.9, -0.3];
        let score = prior.marginal_score(&x, t, &s).unwrap();
        let fd = fd_score(&prior, &x, t, &s);
        assert!(
            rel_err(&score, &fd) < 1e-6,
            "rel err {}",
            rel_err(&score, &fd)
        );
    }

    #[test]
    fn random_spd_priors_match_fd() {
        let s = sched();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..10 {
            let d = 2 + (trial % 7);
            let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cov = &m * m.transpose() + DMatrix::identity(d, d) * 0.1;
            let mean: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let prior = GaussianPrior::full(mean, cov).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let t = 1 + (trial * 19) % 200;
            let score = prior.marginal_score(&x, t, &s).unwrap();
            let fd = fd_score(&prior, &x, t, &s);
            assert!(
                rel_err(&score, &fd) < 1e-6,
                "trial {trial}: rel err {}",
                rel_err(&score, &fd)
            );
        }
    }

    #[test]
    fn diagonal_and_full_representations_agree() {
        let mean = vec![0.5, -0.25, 1.5];
        let var = vec![0.5, 2.0, 1.0];
        let diag = GaussianPrior::diagonal(mean.clone(), var.clone()).unwrap();
        let full =
            GaussianPrior::full(mean, DMatrix::from_diagonal(&DVector::from_vec(var))).unwrap();
        let s = sched();
        let x = [0.1, 0.2, -0.4];
        for t in [1, 37, 200] {
            let a = diag.marginal_score(&x, t, &s).unwrap();
            let b = full.marginal_score(&x, t, &s).unwrap();
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-10);
            }
            let la = diag.log_marginal_density(&x, t, &s).unwrap();
            let lb = full.log_marginal_density(&x, t, &s).unwrap();
            assert!((la - lb).abs() < 1e-10);
        }
    }

    #[test]
    fn ar1_covariance_is_toeplitz_spd() {
        let prior = GaussianPrior::ar1(16, 0.9).unwrap();
        let cov = prior.covariance();
        for i in 0..16 {
            for j in 0..16 {
                let expect = 0.9_f64.powi((i as i32 - j as i32).abs());
                assert!((cov[(i, j)] - expect).abs() < 1e-12);
            }
        }
        assert!(nalgebra::Cholesky::new(cov).is_some());
        assert!(GaussianPrior::ar1(8, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_covariances() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.3, 1.0]);
        assert!(GaussianPrior::full(vec![0.0; 2], asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianPrior::full(vec![0.0; 2], indef).is_err());
        assert!(GaussianPrior::diagonal(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn identity_observation_collapses_posterior() {
        let prior = GaussianPrior::ar1(4, 0.5).unwrap();
        let a = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.2]);
        let post = prior.condition_on_linear(&a, &y).unwrap();
        for i in 0..4 {
            assert!((post.mean()[i] - y[i]).abs() < 1e-10);
        }
        assert!(post.covariance().amax() < 1e-10);
        // Conditional score at t: −(x_t − √ᾱ·y)/(1−ᾱ).
        let s = sched();
        let x = [0.5, 0.5, 0.5, 0.5];
        let t = 100;
        let (ab, om) = (s.alpha_bar(t), 1.0 - s.alpha_bar(t));
        let score = post.marginal_score(&x, t, &s).unwrap();
        for i in 0..4 {
            let expect = -(x[i] - ab.sqrt() * y[i]) / om;
            assert!((score[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn coordinate_selection_posterior_is_consistent() {
        let prior = GaussianPrior::ar1(6, 0.8).unwrap();
        // Observe coordinates 1 and 4.
        let mut a = DMatrix::zeros(2, 6);
        a[(0, 1)] = 1.0;
        a[(1, 4)] = 1.0;
        let y = DVector::from_vec(vec![1.2, -0.4]);
        let post = prior.condition_on_linear(&a, &y).unwrap();
        // Posterior mean satisfies the observation exactly; observed
        // coordinates have zero posterior variance.
        assert!((post.mean()[1] - 1.2).abs() < 1e-10);
        assert!((post.mean()[4] + 0.4).abs() < 1e-10);
        let cov = post.covariance();
        assert!(cov[(1, 1)].abs() < 1e-10);
        assert!(cov[(4, 4)].abs() < 1e-10);
        // Unobserved coordinates shrink toward the conditional mean but stay
        // uncertain.
        assert!(cov[(0, 0)] > 0.1);
    }

    #[test]
    fn conditional_score_matches_fd_at_d4() {
        let prior = GaussianPrior::ar1(4, 0.6).unwrap();
        let mut a = DMatrix::zeros(1, 4);
        a[(0, 2)] = 1.0;
        let y = DVector::from_vec(vec![0.9]);
        let post = prior.condition_on_linear(&a, &y).unwrap();
        let s = sched();
        let x = [0.2, -0.6, 0.4, 1.1];
        for t in [1, 80, 200] {
            let score = post.marginal_score(&x, t, &s).unwrap();
            let fd = fd_score(&post, &x, t, &s);
            assert!(rel_err(&score, &fd) < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_observation_rejected() {
        let prior = GaussianPrior::ar1(4, 0.5).unwrap();
        let mut a = DMatrix::zeros(2, 4);
        a[(0, 0)] = 1.0;
        a[(1, 0)] = 1.0; // duplicate row
        let y = DVector::from_vec(vec![0.5, 0.5]);
        let err = prior.condition_on_linear(&a, &y).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn prior_samples_have_requested_moments() {
        let prior = GaussianPrior::ar1(8, 0.7).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 20000;
        let mut mean = vec![0.0; 8];
        let mut lag1 = 0.0;
        let mut var = 0.0;
        for _ in 0..n {
            let x = prior.sample(&mut rng);
            for (m, v) in mean.iter_mut().zip(&x) {
                *m += v;
            }
            var += x.iter().map(|v| v * v).sum::<f64>() / 8.0;
            lag1 += x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 7.0;
        }
        for m in &mean {
            assert!((m / n as f64).abs() < 0.05);
        }
        assert!((var / n as f64 - 1.0).abs() < 0.05);
        assert!((lag1 / n as f64 - 0.7).abs() < 0.05);
    }
}
