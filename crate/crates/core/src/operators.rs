//! Degradation operators `A` and gradients of the data-fit term
//! `1/2 ||A(x) - y||^2`. Gradients are exact adjoints of the forward maps,
//! not finite-difference approximations, so guidance steps stay cheap and
//! bit-deterministic.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::signal::{frame_starts, hann_periodic, mel_filterbank, reflect_index, stft, StftConfig};
use crate::{Error, Result};

/// A differentiable degradation `y = A(x)`.
pub trait Operator {
    fn name(&self) -> &'static str;

    /// Output length for an input of `input_len` samples.
    fn output_len(&self, input_len: usize) -> usize;

    fn apply(&self, x: &[f64]) -> Vec<f64>;

    /// Gradient of `1/2 ||A(x) - y||^2` with respect to `x`.
    fn residual_grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    /// `1/2 ||A(x) - y||^2`.
    fn residual(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ax = self.apply(x);
        if ax.len() != y.len() {
            return Err(Error::Config(format!(
                "{}: observation has {} samples, operator produces {}",
                self.name(),
                y.len(),
                ax.len()
            )));
        }
        Ok(0.5
            * ax.iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
    }
}

fn check_obs_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!(
            "{name}: observation has {got} samples, operator produces {want}"
        )));
    }
    Ok(())
}

/// Zero-phase FIR lowpass: symmetric odd-length kernel, reflect padding,
/// group delay compensated so output aligns with input sample-for-sample.
#[derive(Debug, Clone)]
pub struct Lowpass {
    kernel: Vec<f64>,
    delay: usize,
}

impl Lowpass {
    pub fn design(cutoff_hz: f64, sample_rate: f64, taps: usize) -> Result<Self> {
        let kernel = crate::signal::design_lowpass_fir(cutoff_hz, sample_rate, taps)?;
        Ok(Lowpass::from_kernel(kernel))
    }

    /// Build from an explicit odd-length kernel (delay = (taps-1)/2).
    pub fn from_kernel(kernel: Vec<f64>) -> Self {
        assert!(kernel.len() % 2 == 1, "kernel length must be odd");
        let delay = (kernel.len() - 1) / 2;
        Lowpass { kernel, delay }
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

impl Operator for Lowpass {
    fn name(&self) -> &'static str {
        "lowpass"
    }

    fn output_len(&self, input_len: usize) -> usize {
        input_len
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert!(!x.is_empty(), "lowpass of empty signal");
        let n = x.len();
        let d = self.delay as isize;
        (0..n)
            .map(|i| {
                self.kernel
                    .iter()
                    .enumerate()
                    .map(|(m, &k)| k * x[reflect_index(i as isize + m as isize - d, n)])
                    .sum()
            })
            .collect()
    }

    fn residual_grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_obs_len(self.name(), y.len(), x.len())?;
        let n = x.len();
        let ax = self.apply(x);
        let r: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
        // Exact transpose of apply: scatter each tap's contribution back
        // through the same reflect-index map.
        let d = self.delay as isize;
        let mut grad = vec![0.0; n];
        for i in 0..n {
            for (m, &k) in self.kernel.iter().enumerate() {
                grad[reflect_index(i as isize + m as isize - d, n)] += k * r[i];
            }
        }
        Ok(grad)
    }
}

/// Hard symmetric clipper `A(x) = clamp(x, -c, c)`, equivalently
/// `(|x + c| - |x - c|) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Clip {
    pub threshold: f64,
}

impl Clip {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!(
                "clip threshold must be positive, got {threshold}"
            )));
        }
        Ok(Clip { threshold })
    }

    /// Projects an estimate onto the set of signals consistent with the
    /// clipped observation: samples with |y| below the threshold are known
    /// exactly, saturated samples keep their sign and at least threshold
    /// magnitude. Re-clipping the result reproduces `y`.
    pub fn project_consistent(&self, est: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_obs_len(self.name(), y.len(), est.len())?;
        let c = self.threshold;
        Ok(est
            .iter()
            .zip(y)
            .map(|(&e, &o)| {
                if o >= c {
                    e.max(c)
                } else if o <= -c {
                    e.min(-c)
                } else {
                    o
                }
            })
            .collect())
    }
}

impl Operator for Clip {
    fn name(&self) -> &'static str {
        "clip"
    }

    fn output_len(&self, input_len: usize) -> usize {
        input_len
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let c = self.threshold;
        x.iter().map(|&v| v.clamp(-c, c)).collect()
    }

    fn residual_grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_obs_len(self.name(), y.len(), x.len())?;
        let c = self.threshold;
        // Clamp has slope 1 strictly inside (-c, c), 0 outside; subgradient 0
        // at the kinks.
        Ok(x.iter()
            .zip(y)
            .map(|(&v, &t)| if v.abs() < c { v.clamp(-c, c) - t } else { 0.0 })
            .collect())
    }
}

/// Log-mel analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub stft: StftConfig,
    pub sample_rate: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Linear-amplitude floor applied before the natural log.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            stft: StftConfig::default(),
            sample_rate: 16000.0,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            floor: 1e-5,
        }
    }
}

/// Log-mel spectrogram operator: STFT magnitude -> triangular mel filterbank
/// -> `ln(max(., floor))`. Output is mel-major: `out[m * n_frames + f]`.
#[derive(Debug, Clone)]
pub struct Mel {
    pub cfg: MelConfig,
    bank: Vec<Vec<f64>>,
}

impl Mel {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.stft.validate()?;
        if !(cfg.floor > 0.0) {
            return Err(Error::Config(format!(
                "mel floor must be positive, got {}",
                cfg.floor
            )));
        }
        let bank = mel_filterbank(
            cfg.n_mels,
            cfg.stft.n_fft,
            cfg.sample_rate,
            cfg.fmin,
            cfg.fmax,
        )?;
        Ok(Mel { cfg, bank })
    }

    pub fn n_frames(&self, input_len: usize) -> usize {
        self.cfg.stft.n_frames(input_len).expect("validated config")
    }
}

impl Operator for Mel {
    fn name(&self) -> &'static str {
        "mel"
    }

    fn output_len(&self, input_len: usize) -> usize {
        self.cfg.n_mels * self.n_frames(input_len)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let spec = stft(x, &self.cfg.stft).expect("validated config");
        let n_frames = spec.frames.len();
        let mut out = vec![0.0; self.cfg.n_mels * n_frames];
        for (f, frame) in spec.frames.iter().enumerate() {
            let mags: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
            for (m, row) in self.bank.iter().enumerate() {
                let e: f64 = row.iter().zip(&mags).map(|(w, a)| w * a).sum();
                out[m * n_frames + f] = e.max(self.cfg.floor).ln();
            }
        }
        out
    }

    fn residual_grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_obs_len(self.name(), y.len(), self.output_len(x.len()))?;
        let stft_cfg = &self.cfg.stft;
        let n = stft_cfg.n_fft;
        let spec = stft(x, stft_cfg)?;
        let n_frames = spec.frames.len();
        let starts = frame_starts(x.len(), stft_cfg)?;
        let window = hann_periodic(n);
        let pad = if stft_cfg.center { (n / 2) as isize } else { 0 };

        let mut planner = RealFftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut scratch = ifft.make_scratch_vec();

        let mut grad = vec![0.0; x.len()];
        for (f, frame) in spec.frames.iter().enumerate() {
            let mags: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
            // dL/d mel-energy, zero where the floor clamps the log.
            let mut d_energy = vec![0.0; self.cfg.n_mels];
            for m in 0..self.cfg.n_mels {
                let e: f64 = self.bank[m].iter().zip(&mags).map(|(w, a)| w * a).sum();
                if e > self.cfg.floor {
                    let r = e.ln() - y[m * n_frames + f];
                    d_energy[m] = r / e;
                }
            }
            // dL/d magnitude per bin.
            let mut d_mag = vec![0.0; spec.n_bins];
            for (m, row) in self.bank.iter().enumerate() {
                if d_energy[m] != 0.0 {
                    for (k, &w) in row.iter().enumerate() {
                        d_mag[k] += w * d_energy[m];
                    }
                }
            }
            // 2·dL/dz̄_k = d_mag·z/|z| (Wirtinger); with interior bins halved
            // this is exactly what the unnormalized inverse real FFT needs to
            // act as the adjoint of the forward real FFT.
            let mut half: Vec<Complex64> = (0..spec.n_bins)
                .map(|k| {
                    let z = frame[k];
                    let a = mags[k];
                    if a > 0.0 && d_mag[k] != 0.0 {
                        (z / a) * d_mag[k]
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            half[0] = Complex64::new(half[0].re, 0.0);
            let nyq = spec.n_bins - 1;
            half[nyq] = Complex64::new(half[nyq].re, 0.0);
            for h in half[1..nyq].iter_mut() {
                *h *= 0.5;
            }
            let mut d_frame = ifft.make_output_vec();
            ifft.process_with_scratch(&mut half, &mut d_frame, &mut scratch)
                .map_err(|e| Error::Numeric(format!("ifft failed: {e}")))?;
            // Through the window and the reflect padding back onto x.
            let s = starts[f] as isize;
            for m in 0..n {
                let src = reflect_index(s + m as isize - pad, x.len());
                grad[src] += window[m] * d_frame[m];
            }
        }
        Ok(grad)
    }
}

/// Instantaneous two-source mixing: input is `[x1; x2]` stacked, output is
/// `x1 + x2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mix;

impl Operator for Mix {
    fn name(&self) -> &'static str {
        "mix"
    }

    fn output_len(&self, input_len: usize) -> usize {
        assert!(input_len % 2 == 0, "mix input must stack two equal sources");
        input_len / 2
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.output_len(x.len());
        (0..n).map(|i| x[i] + x[n + i]).collect()
    }

    fn residual_grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let n = self.output_len(x.len());
        check_obs_len(self.name(), y.len(), n)?;
        let mut grad = vec![0.0; 2 * n];
        for i in 0..n {
            let r = x[i] + x[n + i] - y[i];
            grad[i] = r;
            grad[n + i] = r;
        }
        Ok(grad)
    }
}
