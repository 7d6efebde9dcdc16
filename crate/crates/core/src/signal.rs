//! Shared DSP primitives: STFT/iSTFT, windows, mel filterbank construction
//! and windowed-sinc FIR design.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::{Error, Result};

/// STFT parameters. The window is always a periodic Hann of length `n_fft`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Center each frame by reflect-padding `n_fft / 2` samples on both ends.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 1024,
            hop: 256,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::Config(format!(
                "n_fft must be even >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft / 2 || self.n_fft % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop must divide n_fft and satisfy 0 < hop <= n_fft/2, got {}/{}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        if self.center {
            Ok(1 + len / self.hop)
        } else if len >= self.n_fft {
            Ok(1 + (len - self.n_fft) / self.hop)
        } else {
            Err(Error::Config(format!(
                "signal of {len} samples is shorter than one frame ({})",
                self.n_fft
            )))
        }
    }
}

/// Complex spectrogram: `frames[f][k]` for frame `f`, bin `k` in `0..n_fft/2+1`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub n_bins: usize,
    pub frames: Vec<Vec<Complex64>>,
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Symmetric Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / (len - 1))`.
pub fn hann_symmetric(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Reflect (bounce) index into `0..len`, librosa-style: `-1 -> 1`, `len -> len-2`.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    assert!(len >= 1);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Start offsets (into the padded signal) of each STFT frame.
pub(crate) fn frame_starts(len: usize, cfg: &StftConfig) -> Result<Vec<usize>> {
    let n = cfg.n_frames(len)?;
    Ok((0..n).map(|f| f * cfg.hop).collect())
}

/// Padded sample at position `p` of the centered signal (reflect padding);
/// with `center` off this is a plain index.
#[inline]
pub(crate) fn padded_sample(x: &[f64], p: usize, cfg: &StftConfig) -> f64 {
    if cfg.center {
        let half = (cfg.n_fft / 2) as isize;
        x[reflect_index(p as isize - half, x.len())]
    } else {
        x[p]
    }
}

/// Short-time Fourier transform. Frames are windowed slices of the
/// (optionally reflect-centered) signal; bins `0..n_fft/2+1`.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::Config("empty signal".into()));
    }
    let window = hann_periodic(cfg.n_fft);
    let starts = frame_starts(x.len(), cfg)?;
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = fft.make_input_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut frames = Vec::with_capacity(starts.len());
    for &s in &starts {
        for (m, b) in buf.iter_mut().enumerate() {
            *b = window[m] * padded_sample(x, s + m, cfg);
        }
        let mut spec = fft.make_output_vec();
        fft.process_with_scratch(&mut buf, &mut spec, &mut scratch)
            .map_err(|e| Error::Numeric(format!("fft failed: {e}")))?;
        frames.push(spec);
    }
    Ok(Spectrogram {
        n_bins: cfg.n_bins(),
        frames,
    })
}

/// Inverse STFT by overlap-add with window-square normalization. `length`
/// is the number of samples to reconstruct; `istft(stft(x)) == x` up to
/// round-off for centered configs.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, length: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if spec.n_bins != cfg.n_bins() {
        return Err(Error::Config(format!(
            "spectrogram has {} bins, config expects {}",
            spec.n_bins,
            cfg.n_bins()
        )));
    }
    let expected = cfg.n_frames(length)?;
    if spec.frames.len() != expected {
        return Err(Error::Config(format!(
            "{} frames cannot reconstruct {} samples ({} expected)",
            spec.frames.len(),
            length,
            expected
        )));
    }
    let window = hann_periodic(cfg.n_fft);
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.n_fft);
    let mut scratch = ifft.make_scratch_vec();

    let pad = if cfg.center { cfg.n_fft / 2 } else { 0 };
    let total = length + 2 * pad;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let inv_n = 1.0 / cfg.n_fft as f64;

    for (f, frame) in spec.frames.iter().enumerate() {
        let mut spec_buf = frame.clone();
        let mut time = ifft.make_output_vec();
        ifft.process_with_scratch(&mut spec_buf, &mut time, &mut scratch)
            .map_err(|e| Error::Numeric(format!("ifft failed: {e}")))?;
        let s = f * cfg.hop;
        for m in 0..cfg.n_fft {
            if s + m < total {
                acc[s + m] += window[m] * time[m] * inv_n;
                norm[s + m] += window[m] * window[m];
            }
        }
    }

    let out: Vec<f64> = (0..length)
        .map(|i| {
            let d = norm[i + pad];
            if d > 1e-12 {
                acc[i + pad] / d
            } else {
                0.0
            }
        })
        .collect();
    // NOLA check over the interior; zero-coverage samples mean the config
    // cannot reconstruct.
    if norm[pad..pad + length].iter().any(|&d| d <= 1e-12) {
        return Err(Error::Config(
            "window/hop combination leaves uncovered samples (NOLA violated)".into(),
        ));
    }
    Ok(out)
}

/// HTK mel scale: `mel(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0_f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x n_bins`, peak value 1, filter edges at
/// the adjacent filters' center frequencies.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
) -> Result<Vec<Vec<f64>>> {
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be positive".into()));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0) {
        return Err(Error::Config(format!(
            "invalid mel band [{fmin}, {fmax}] at sample rate {sample_rate}"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / n_fft as f64;

    let mut bank = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        let row: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                }
            })
            .collect();
        bank.push(row);
    }
    Ok(bank)
}

/// Windowed-sinc lowpass FIR: `sinc(2 fc/fs (n - c)) * hann(n)`, normalized to
/// unity DC gain. `taps` must be odd so the kernel is symmetric and the group
/// delay is an integer.
pub fn design_lowpass_fir(cutoff_hz: f64, sample_rate: f64, taps: usize) -> Result<Vec<f64>> {
    if taps == 0 || taps % 2 == 0 {
        return Err(Error::Config(format!("taps must be odd, got {taps}")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(Error::Config(format!(
            "cutoff {cutoff_hz} Hz outside (0, {})",
            sample_rate / 2.0
        )));
    }
    let fc = cutoff_hz / sample_rate; // cycles per sample
    let center = (taps - 1) / 2;
    let window = hann_symmetric(taps);
    // Compute one half and mirror it so symmetry is exact in floating point.
    let mut kernel = vec![0.0; taps];
    for n in center..taps {
        let x = (n - center) as f64;
        let s = if x == 0.0 {
            2.0 * fc
        } else {
            (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
        };
        let v = s * window[n];
        kernel[n] = v;
        kernel[taps - 1 - n] = v;
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    Ok(kernel)
}

/// Magnitude of the DFT of `x` zero-padded to `n` points, bins `0..n/2+1`.
/// Measurement helper for frequency-response checks.
pub fn spectrum_magnitude(x: &[f64], n: usize) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = fft.make_input_vec();
    for (b, v) in buf.iter_mut().zip(x) {
        *b = *v;
    }
    let mut spec = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    fft.process_with_scratch(&mut buf, &mut spec, &mut scratch)
        .expect("fft");
    spec.iter().map(|c| c.norm()).collect()
}
