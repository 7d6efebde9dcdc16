//! Toy data: harmonic-tone corpus for denoiser training, AR(1) sequences
//! with their matching analytic prior, mixture construction, and minimal
//! mono PCM16 WAV I/O.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::score::GaussianPrior;
use crate::{Error, Result, Waveform};

#[derive(Debug, Clone)]
pub struct ToyHarmonicConfig {
    pub sample_rate: u32,
    pub len: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    pub max_harmonics: usize,
    pub noise_sigma: f64,
    /// Peak of the clean harmonic part before noise is added.
    pub peak: f64,
}

impl Default for ToyHarmonicConfig {
    fn default() -> Self {
        ToyHarmonicConfig {
            sample_rate: 16000,
            len: 16000,
            f0_min: 80.0,
            f0_max: 300.0,
            max_harmonics: 5,
            noise_sigma: 0.01,
            peak: 0.95,
        }
    }
}

impl ToyHarmonicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.len == 0 || self.sample_rate == 0 {
            return Err(Error::Config("empty toy-harmonic signal".into()));
        }
        if !(self.f0_min > 0.0 && self.f0_max >= self.f0_min) {
            return Err(Error::Config(format!(
                "bad f0 range [{}, {}]",
                self.f0_min, self.f0_max
            )));
        }
        if self.max_harmonics == 0 {
            return Err(Error::Config("max_harmonics must be >= 1".into()));
        }
        let top = self.f0_max * self.max_harmonics as f64;
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "highest harmonic {top} Hz reaches Nyquist at sample rate {}",
                self.sample_rate
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.peak > 0.0) {
            return Err(Error::Config(
                "noise_sigma and peak must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One random harmonic tone: f0 uniform in range, 1..=max_harmonics partials
/// with 1/k amplitude decay and random phases, shaped by a full-length Hann
/// envelope, peak-normalized, then white noise added.
pub fn gen_toy_harmonic(cfg: &ToyHarmonicConfig, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.len;
    let f0 = rng.random_range(cfg.f0_min..=cfg.f0_max);
    let n_harm = rng.random_range(1..=cfg.max_harmonics);
    let phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut x = vec![0.0; n];
    let sr = cfg.sample_rate as f64;
    for (k, phase) in phases.iter().enumerate() {
        let freq = f0 * (k + 1) as f64;
        let amp = 1.0 / (k + 1) as f64;
        let w = std::f64::consts::TAU * freq / sr;
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (w * i as f64 + phase).sin();
        }
    }
    // Hann envelope over the full signal, then normalize the clean part.
    for (i, v) in x.iter_mut().enumerate() {
        let env = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n.max(2) - 1) as f64).cos();
        *v *= env;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = cfg.peak / peak;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
    for v in x.iter_mut() {
        *v += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(x)
}

/// Deterministic corpus of `count` harmonic tones from one seed.
pub fn gen_toy_dataset(cfg: &ToyHarmonicConfig, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Config("dataset count must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| gen_toy_harmonic(cfg, &mut rng))
        .collect()
}

/// Stationary zero-mean unit-variance AR(1) sequence:
/// `x[0] ~ N(0,1)`, `x[i] = ρ·x[i−1] + √(1−ρ²)·ε_i`.
pub fn gen_ar1(len: usize, rho: f64, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::Config("empty AR(1) signal".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!(
            "AR(1) rho must satisfy |rho| < 1, got {rho}"
        )));
    }
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(len);
    x.push(rng.sample::<f64, _>(StandardNormal));
    for i in 1..len {
        let e: f64 = rng.sample(StandardNormal);
        x.push(rho * x[i - 1] + innov * e);
    }
    Ok(x)
}

/// The exact prior the AR(1) generator samples from (Toeplitz ρ^|i−j|).
pub fn ar1_prior(len: usize, rho: f64) -> Result<GaussianPrior> {
    GaussianPrior::ar1(len, rho)
}

/// Peak-normalize both sources to `peak` and sum them. Returns
/// (mixture, normalized source 1, normalized source 2).
pub fn make_mixture(a: &[f64], b: &[f64], peak: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config(format!(
            "mixture sources must match and be non-empty: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let norm = |x: &[f64], name: &str| -> Result<Vec<f64>> {
        let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if p <= 0.0 {
            return Err(Error::Config(format!("{name} source is silent")));
        }
        Ok(x.iter().map(|v| v * peak / p).collect())
    };
    let s1 = norm(a, "first")?;
    let s2 = norm(b, "second")?;
    let mix = s1.iter().zip(&s2).map(|(x, y)| x + y).collect();
    Ok((mix, s1, s2))
}

// --- WAV (RIFF, mono, 16-bit PCM, little-endian) ---

fn read_u32(c: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    c.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated WAV header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(c: &mut Cursor<&[u8]>) -> Result<u16> {
    let mut b = [0u8; 2];
    c.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated WAV header".into()))?;
    Ok(u16::from_le_bytes(b))
}

fn read_tag(c: &mut Cursor<&[u8]>) -> Result<[u8; 4]> {
    let mut b = [0u8; 4];
    c.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated WAV header".into()))?;
    Ok(b)
}

/// Read a mono 16-bit PCM WAV file. Unknown chunks are skipped; anything
/// other than mono PCM16 is rejected with a precise message.
pub fn wav_read(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(bytes.as_slice());
    if &read_tag(&mut c)? != b"RIFF" {
        return Err(Error::Format(format!(
            "{}: not a RIFF file",
            path.display()
        )));
    }
    let _riff_size = read_u32(&mut c)?;
    if &read_tag(&mut c)? != b"WAVE" {
        return Err(Error::Format(format!(
            "{}: not a WAVE file",
            path.display()
        )));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<Vec<u8>> = None;
    while (c.position() as usize) < bytes.len() {
        let tag = read_tag(&mut c)?;
        let size = read_u32(&mut c)? as usize;
        let start = c.position() as usize;
        if start + size > bytes.len() {
            return Err(Error::Format(format!(
                "{}: chunk '{}' runs past end of file",
                path.display(),
                String::from_utf8_lossy(&tag)
            )));
        }
        match &tag {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format(format!(
                        "{}: fmt chunk too small",
                        path.display()
                    )));
                }
                let format = read_u16(&mut c)?;
                let channels = read_u16(&mut c)?;
                let rate = read_u32(&mut c)?;
                let _byte_rate = read_u32(&mut c)?;
                let _block_align = read_u16(&mut c)?;
                let bits = read_u16(&mut c)?;
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some(bytes[start..start + size].to_vec());
            }
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        c.set_position((start + size + (size & 1)) as u64);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format(format!("{}: missing fmt chunk", path.display())))?;
    if format != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported WAV format code {format} (only PCM is supported)",
            path.display()
        )));
    }
    if channels != 1 {
        return Err(Error::Format(format!(
            "{}: {channels} channels, only mono is supported",
            path.display()
        )));
    }
    if bits != 16 {
        return Err(Error::Format(format!(
            "{}: {bits}-bit samples, only 16-bit PCM is supported",
            path.display()
        )));
    }
    let data =
        data.ok_or_else(|| Error::Format(format!("{}: missing data chunk", path.display())))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format(format!(
            "{}: data chunk has an odd byte count",
            path.display()
        )));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(rate, samples))
}

/// Write a mono 16-bit PCM WAV file. Samples are clamped to [−1, 1] and
/// rounded to the nearest integer code.
pub fn wav_write(path: &Path, wave: &Waveform) -> Result<()> {
    if wave.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot write non-finite samples".into()));
    }
    let n = wave.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &v in &wave.samples {
        let s = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
