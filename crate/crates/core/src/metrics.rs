//! Evaluation metrics: scale-invariant SNR, log-spectral distance, and the
//! best-permutation wrapper used for source separation.

use crate::signal::{stft, StftConfig};
use crate::{Error, Result};

const SI_SNR_EPS: f64 = 1e-12;
const SI_SNR_CAP_DB: f64 = 100.0;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Scale-invariant SNR in dB. Both signals are mean-subtracted, the estimate
/// is projected onto the reference, and the ratio is capped at +100 dB so a
/// numerically perfect reconstruction stays finite.
pub fn si_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Config(format!(
            "si_snr length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Config("si_snr on empty signals".into()));
    }
    let rm = mean(reference);
    let em = mean(estimate);
    let r: Vec<f64> = reference.iter().map(|v| v - rm).collect();
    let e: Vec<f64> = estimate.iter().map(|v| v - em).collect();
    let r_energy: f64 = r.iter().map(|v| v * v).sum();
    if r_energy <= SI_SNR_EPS {
        return Err(Error::Config(
            "si_snr reference is silent after mean removal".into(),
        ));
    }
    let dot: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
    let alpha = dot / r_energy;
    let target_energy = alpha * alpha * r_energy;
    let noise_energy: f64 = e
        .iter()
        .zip(&r)
        .map(|(ei, ri)| {
            let n = ei - alpha * ri;
            n * n
        })
        .sum();
    let ratio = target_energy / (noise_energy + SI_SNR_EPS);
    Ok((10.0 * ratio.log10()).min(SI_SNR_CAP_DB))
}

/// Log-spectral distance between magnitude spectrograms:
/// mean over frames of the RMS over bins of the difference of
/// `log10 |S|²`, with magnitudes floored at 1e-8 before the log.
pub fn lsd(reference: &[f64], estimate: &[f64], cfg: &StftConfig) -> Result<f64> {
    lsd_band(reference, estimate, cfg, 0.0, f64::INFINITY, 0)
}

/// LSD restricted to bins whose center frequency lies in [lo_hz, hi_hz).
/// `sample_rate` may be 0 only when the band is unrestricted.
pub fn lsd_band(
    reference: &[f64],
    estimate: &[f64],
    cfg: &StftConfig,
    lo_hz: f64,
    hi_hz: f64,
    sample_rate: u32,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Config(format!(
            "lsd length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let sr = stft(reference, cfg)?;
    let se = stft(estimate, cfg)?;
    let full_band = lo_hz <= 0.0 && hi_hz.is_infinite();
    if !full_band && sample_rate == 0 {
        return Err(Error::Config("lsd_band needs a sample rate".into()));
    }
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let bins: Vec<usize> = (0..sr.n_bins)
        .filter(|&k| {
            if full_band {
                true
            } else {
                let f = k as f64 * bin_hz;
                f >= lo_hz && f < hi_hz
            }
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Config(format!(
            "lsd band [{lo_hz}, {hi_hz}) Hz selects no bins"
        )));
    }
    let floor = 1e-8;
    let mut total = 0.0;
    for (fr, fe) in sr.frames.iter().zip(&se.frames) {
        let mut acc = 0.0;
        for &k in &bins {
            let lr = fr[k].norm().max(floor).powi(2).log10();
            let le = fe[k].norm().max(floor).powi(2).log10();
            acc += (lr - le) * (lr - le);
        }
        total += (acc / bins.len() as f64).sqrt();
    }
    Ok(total / sr.frames.len() as f64)
}

/// SI-SNR of a two-source estimate under the better of the two assignments.
/// Returns (mean SI-SNR in dB, true when the swapped assignment won).
pub fn si_snr_best_permutation(
    refs: (&[f64], &[f64]),
    ests: (&[f64], &[f64]),
) -> Result<(f64, bool)> {
    let direct = (si_snr(refs.0, ests.0)? + si_snr(refs.1, ests.1)?) / 2.0;
    let swapped = (si_snr(refs.0, ests.1)? + si_snr(refs.1, ests.0)?) / 2.0;
    if swapped > direct {
        Ok((swapped, true))
    } else {
        Ok((direct, false))
    }
}

/// Flat name/value report printed by the CLI: one human-readable block plus a
/// stable machine-readable `key=value` section.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: f64) {
        self.entries.push((key.to_string(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stable serialization, insertion order, `%.6f`-style fixed precision so
    /// repeated runs diff cleanly.
    pub fn to_machine(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v:.6}\n"));
        }
        s
    }

    pub fn to_human(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("  {k:<24} {v:>12.4}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn tone(n: usize, freq: f64, sr: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn si_snr_perfect_reconstruction_caps_at_100() {
        let x = tone(2048, 440.0, 16000.0);
        assert_eq!(si_snr(&x, &x).unwrap(), 100.0);
        // Scale invariance: gain must not change the value.
        let scaled: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
        assert_eq!(si_snr(&x, &scaled).unwrap(), 100.0);
    }

    #[test]
    fn si_snr_known_noise_level() {
        // Orthogonal unit-energy-ratio construction: estimate = ref + n with
        // n ⟂ ref and ‖n‖² = ‖ref‖²/10 gives exactly 10 dB.
        let n = 4096;
        let x = tone(n, 440.0, 16000.0);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nm = mean(&noise);
        for v in noise.iter_mut() {
            *v -= nm;
        }
        let xm = mean(&x);
        let xc: Vec<f64> = x.iter().map(|v| v - xm).collect();
        let xe: f64 = xc.iter().map(|v| v * v).sum();
        // Project noise orthogonal to the centered reference.
        let dot: f64 = noise.iter().zip(&xc).map(|(a, b)| a * b).sum();
        for i in 0..n {
            noise[i] -= dot / xe * xc[i];
        }
        let ne: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (xe / (10.0 * ne)).sqrt();
        let est: Vec<f64> = (0..n).map(|i| x[i] + scale * noise[i]).collect();
        let v = si_snr(&x, &est).unwrap();
        assert!((v - 10.0).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn si_snr_errors() {
        assert_eq!(si_snr(&[1.0], &[1.0, 2.0]).unwrap_err().exit_code(), 2);
        assert_eq!(
            si_snr(&vec![0.5; 64], &vec![0.1; 64])
                .unwrap_err()
                .exit_code(),
            2,
            "constant reference is silent after mean removal"
        );
    }

    #[test]
    fn lsd_of_identical_signals_is_zero() {
        let x = tone(4096, 500.0, 16000.0);
        let cfg = StftConfig::default();
        assert!(lsd(&x, &x, &cfg).unwrap() < 1e-12);
    }

    #[test]
    fn lsd_of_scaled_signal_matches_closed_form() {
        // lsd(x, g·x) = |log10(g²)| = |2·log10 g| whenever no magnitude
        // falls below the floor. White noise keeps every bin well above it
        // (a pure tone has spectral zeros that would clamp), and g = 2 scales
        // the FFT bit-exactly.
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..8192).map(|_| rng.sample(StandardNormal)).collect();
        let g = 2.0;
        let scaled: Vec<f64> = x.iter().map(|v| g * v).collect();
        let cfg = StftConfig {
            n_fft: 64,
            hop: 32,
            center: true,
        };
        let v = lsd(&x, &scaled, &cfg).unwrap();
        let expect = 2.0 * g.log10();
        assert!((v - expect).abs() < 1e-9, "lsd {v} vs closed form {expect}");
    }

    #[test]
    fn lsd_band_selects_low_bins() {
        // Corrupt only the high band; a low-band LSD must stay near zero
        // while the full-band LSD moves.
        let sr = 16000u32;
        let n = 8192;
        let x = tone(n, 400.0, sr as f64);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let hi = tone(n, 6000.0, sr as f64);
        let est: Vec<f64> = (0..n)
            .map(|i| x[i] + 0.5 * hi[i] + 1e-4 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cfg = StftConfig::default();
        let low = lsd_band(&x, &est, &cfg, 0.0, 2000.0, sr).unwrap();
        let full = lsd(&x, &est, &cfg).unwrap();
        assert!(low < 0.5 * full, "low {low} vs full {full}");
    }

    #[test]
    fn lsd_band_rejects_empty_band() {
        let x = tone(4096, 400.0, 16000.0);
        let cfg = StftConfig::default();
        let err = lsd_band(&x, &x, &cfg, 7999.9, 8000.0, 16000).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn best_permutation_detects_swap() {
        let a = tone(4096, 300.0, 16000.0);
        let b = tone(4096, 1100.0, 16000.0);
        let (v, swapped) = si_snr_best_permutation((&a, &b), (&b, &a)).unwrap();
        assert!(swapped);
        assert_eq!(v, 100.0);
        let (v2, swapped2) = si_snr_best_permutation((&a, &b), (&a, &b)).unwrap();
        assert!(!swapped2);
        assert_eq!(v2, 100.0);
    }

    #[test]
    fn report_round_trips_keys() {
        let mut r = MetricReport::new();
        r.push("si_snr_db", 12.345678);
        r.push("lsd", 0.25);
        assert_eq!(r.get("si_snr_db"), Some(12.345678));
        let m = r.to_machine();
        assert_eq!(m, "si_snr_db=12.345678\nlsd=0.250000\n");
        assert!(r.to_human().contains("si_snr_db"));
    }
}
