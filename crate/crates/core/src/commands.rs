//! Implementations behind the CLI subcommands. Every command validates its
//! full configuration and reads all inputs before creating any output file,
//! and all randomness flows from explicit seeds so reruns are byte-identical.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::config::Settings;
use crate::data::{gen_toy_dataset, make_mixture, wav_read, wav_write, ToyHarmonicConfig};
use crate::guidance::{
    ddpm_reverse_step, exact_gaussian_conditional_score, sample_prior, separation_likelihood_grad,
    solve_inverse, GuidanceConfig, GuidanceMode, SamplerTrace, SigmaKind, TaskSpec,
};
use crate::metrics::{lsd, lsd_band, si_snr, si_snr_best_permutation, MetricReport};
use crate::operators::{Clip, Lowpass, Mel, MelConfig, Operator};
use crate::schedule::{forward_noise, NoiseSchedule};
use crate::score::{
    checkpoint, denoiser::DenoiserConfig, train::smoothed, train_denoiser, GaussianPrior,
    ScoreModel, ToyDenoiser, TrainConfig,
};
use crate::signal::{design_lowpass_fir, istft, stft, StftConfig};
use crate::{Error, Result, Waveform};

const MIX_PEAK: f64 = 0.95;

fn schedule_from(cfg: &Settings) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(
        cfg.get_usize("schedule.steps"),
        cfg.get_f64("schedule.beta_min"),
        cfg.get_f64("schedule.beta_max"),
    )
}

fn guidance_from(cfg: &Settings, task_default: GuidanceMode) -> Result<GuidanceConfig> {
    let mode = match cfg.get_str("guidance.mode") {
        "auto" => task_default,
        other => GuidanceMode::parse(other)?,
    };
    let sigma = match cfg.get_str("guidance.sigma") {
        "posterior" => SigmaKind::Posterior,
        "beta" => SigmaKind::Beta,
        other => {
            return Err(Error::Config(format!(
                "guidance.sigma must be 'posterior' or 'beta', got '{other}'"
            )))
        }
    };
    let g = GuidanceConfig {
        mode,
        xi0: cfg.get_f64("guidance.xi0"),
        norm_eps: cfg.get_f64("guidance.norm_eps"),
        seed: cfg.get_u64("sample.seed"),
        sigma,
        snapshot_every: cfg.get_usize("guidance.snapshot_every"),
    };
    g.validate()?;
    Ok(g)
}

fn mel_from(cfg: &Settings, sample_rate: f64) -> Result<Mel> {
    let stft_cfg = StftConfig {
        n_fft: cfg.get_usize("mel.n_fft"),
        hop: cfg.get_usize("mel.hop"),
        center: true,
    };
    Mel::new(MelConfig {
        stft: stft_cfg,
        sample_rate,
        n_mels: cfg.get_usize("mel.n_mels"),
        fmin: cfg.get_f64("mel.fmin"),
        fmax: cfg.get_f64("mel.fmax"),
        floor: 1e-5,
    })
}

fn emit_report(report: &MetricReport) {
    if report.is_empty() {
        return;
    }
    println!("metrics:");
    print!("{}", report.to_human());
    println!("---");
    print!("{}", report.to_machine());
}

fn write_trace(path: Option<&Path>, trace: &SamplerTrace) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, trace.to_csv()).map_err(|e| Error::io(p, e))?;
        println!("wrote trace {}", p.display());
    }
    Ok(())
}

fn read_wav_checked(path: &Path) -> Result<Waveform> {
    let w = wav_read(path)?;
    if w.is_empty() {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    Ok(w)
}

// --- mel tensor file: n_mels u32 LE, n_frames u32 LE, then f32 LE values
// in mel-major order ---

pub fn mel_write(path: &Path, n_mels: usize, n_frames: usize, values: &[f64]) -> Result<()> {
    if values.len() != n_mels * n_frames {
        return Err(Error::Config(format!(
            "mel tensor shape {n_mels}x{n_frames} does not match {} values",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot write non-finite mel values".into()));
    }
    let mut out = Vec::with_capacity(8 + values.len() * 4);
    out.extend_from_slice(&(n_mels as u32).to_le_bytes());
    out.extend_from_slice(&(n_frames as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn mel_read(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "{}: too short for a mel tensor header",
            path.display()
        )));
    }
    let n_mels = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let n_frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expect = 8 + n_mels
        .checked_mul(n_frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("{}: implausible mel shape", path.display())))?;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "{}: {} bytes, header {n_mels}x{n_frames} implies {expect}",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((n_mels, n_frames, values))
}

pub fn cmd_train(cfg: &Settings, output: &Path) -> Result<()> {
    let sched = schedule_from(cfg)?;
    let mcfg = DenoiserConfig {
        channels: cfg.get_usize("model.channels"),
        blocks: cfg.get_usize("model.blocks"),
        cond_dim: cfg.get_usize("model.cond_dim"),
        dilation_cycle: vec![1, 2, 4, 8],
        seed: cfg.get_u64("model.seed"),
    };
    let data_cfg = ToyHarmonicConfig {
        sample_rate: cfg.get_u32("sample.rate")?,
        len: cfg.get_usize("sample.len"),
        f0_min: cfg.get_f64("data.f0_min"),
        f0_max: cfg.get_f64("data.f0_max"),
        max_harmonics: cfg.get_usize("data.max_harmonics"),
        noise_sigma: cfg.get_f64("data.noise_sigma"),
        peak: MIX_PEAK,
    };
    let tcfg = TrainConfig {
        steps: cfg.get_usize("train.steps"),
        batch_size: cfg.get_usize("train.batch_size"),
        segment_len: cfg.get_usize("train.segment_len"),
        learning_rate: cfg.get_f64("train.lr"),
        seed: cfg.get_u64("train.seed"),
        ..Default::default()
    };
    tcfg.validate()?;
    // Decouple corpus randomness from batching randomness.
    let dataset_seed = cfg.get_u64("train.seed") ^ 0x9E37_79B9_7F4A_7C15;
    let dataset = gen_toy_dataset(
        &data_cfg,
        cfg.get_usize("train.dataset_count"),
        dataset_seed,
    )?;
    println!(
        "dataset: {} clips of {} samples at {} Hz",
        dataset.len(),
        data_cfg.len,
        data_cfg.sample_rate
    );
    let mut model = ToyDenoiser::new(mcfg)?;
    println!("model: {}", model.describe());
    let history = train_denoiser(&mut model, &dataset, &sched, &tcfg)?;
    let sm = smoothed(&history, 100);
    let every = cfg.get_usize("train.log_every").max(1);
    for (i, loss) in history.iter().enumerate() {
        let step = i + 1;
        if step % every == 0 || step == history.len() {
            println!("step {step:>6}  loss {loss:.6}  smoothed {:.6}", sm[i]);
        }
    }
    checkpoint::save(output, &model, &sched)?;
    println!("wrote checkpoint {}", output.display());
    Ok(())
}

pub fn cmd_sample(cfg: &Settings, ckpt: &Path, output: &Path) -> Result<()> {
    let (model, sched) = checkpoint::load(ckpt)?;
    let mode = cfg.get_str("guidance.mode");
    if mode != "auto" && mode != "none" {
        return Err(Error::Config(format!(
            "unconditional sampling takes no guidance, got mode '{mode}'"
        )));
    }
    let gcfg = guidance_from(cfg, GuidanceMode::None)?;
    let len = cfg.get_usize("sample.len");
    let rate = cfg.get_u32("sample.rate")?;
    println!("checkpoint: {}", model.describe());
    let x = sample_prior(&model, len, &sched, &gcfg)?;
    wav_write(output, &Waveform::new(rate, x))?;
    println!("wrote {}", output.display());
    Ok(())
}

pub fn cmd_bwe(
    cfg: &Settings,
    ckpt: &Path,
    input: Option<&Path>,
    reference: Option<&Path>,
    output: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (model, sched) = checkpoint::load(ckpt)?;
    let reference = reference.map(read_wav_checked).transpose()?;
    let input = input.map(read_wav_checked).transpose()?;
    let source = input.as_ref().or(reference.as_ref()).ok_or_else(|| {
        Error::Config("bandwidth extension needs --input and/or --reference".into())
    })?;
    let rate = source.sample_rate;
    if let (Some(i), Some(r)) = (&input, &reference) {
        if i.sample_rate != r.sample_rate || i.len() != r.len() {
            return Err(Error::Config(
                "input and reference must share sample rate and length".into(),
            ));
        }
    }
    let cutoff = cfg.get_f64("bwe.cutoff_hz");
    let lpf = Lowpass::design(cutoff, rate as f64, cfg.get_usize("bwe.taps"))?;
    let y = match &input {
        Some(w) => w.samples.clone(),
        None => lpf.apply(&reference.as_ref().unwrap().samples),
    };
    let gcfg = guidance_from(cfg, GuidanceMode::Imputation)?;
    let (outs, trace) = solve_inverse(&TaskSpec::Bwe { lpf: &lpf }, &y, &[&model], &sched, &gcfg)?;
    let est = &outs[0];

    let mut report = MetricReport::new();
    if let Some(r) = &reference {
        let scfg = StftConfig::default();
        report.push("si_snr_in_db", si_snr(&r.samples, &y)?);
        report.push("si_snr_out_db", si_snr(&r.samples, est)?);
        report.push("lsd_in", lsd(&r.samples, &y, &scfg)?);
        report.push("lsd_out", lsd(&r.samples, est, &scfg)?);
        // Low band, kept clear of the FIR transition region.
        let band_hi = 0.8 * cutoff;
        report.push(
            "lsd_low_band",
            lsd_band(&r.samples, est, &scfg, 0.0, band_hi, rate)?,
        );
    }
    wav_write(output, &Waveform::new(rate, est.clone()))?;
    println!("wrote {}", output.display());
    write_trace(trace_path, &trace)?;
    emit_report(&report);
    Ok(())
}

pub fn cmd_declip(
    cfg: &Settings,
    ckpt: &Path,
    input: Option<&Path>,
    reference: Option<&Path>,
    output: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (model, sched) = checkpoint::load(ckpt)?;
    let reference = reference.map(read_wav_checked).transpose()?;
    let input = input.map(read_wav_checked).transpose()?;
    let source = input
        .as_ref()
        .or(reference.as_ref())
        .ok_or_else(|| Error::Config("declipping needs --input and/or --reference".into()))?;
    let rate = source.sample_rate;
    if let (Some(i), Some(r)) = (&input, &reference) {
        if i.sample_rate != r.sample_rate || i.len() != r.len() {
            return Err(Error::Config(
                "input and reference must share sample rate and length".into(),
            ));
        }
    }
    let clip = Clip::new(cfg.get_f64("declip.threshold"))?;
    let y = match &input {
        Some(w) => w.samples.clone(),
        None => clip.apply(&reference.as_ref().unwrap().samples),
    };
    let gcfg = guidance_from(cfg, GuidanceMode::Reconstruction)?;
    let (outs, trace) = solve_inverse(
        &TaskSpec::Declip { clip: &clip },
        &y,
        &[&model],
        &sched,
        &gcfg,
    )?;
    let est = &outs[0];

    let mut report = MetricReport::new();
    if let Some(r) = &reference {
        report.push("si_snr_in_db", si_snr(&r.samples, &y)?);
        report.push("si_snr_out_db", si_snr(&r.samples, est)?);
    }
    wav_write(output, &Waveform::new(rate, est.clone()))?;
    println!("wrote {}", output.display());
    write_trace(trace_path, &trace)?;
    emit_report(&report);
    Ok(())
}

pub fn cmd_vocode(
    cfg: &Settings,
    ckpt: &Path,
    input: Option<&Path>,
    reference: Option<&Path>,
    output: &Path,
    save_mel: Option<&Path>,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (model, sched) = checkpoint::load(ckpt)?;
    let reference = reference.map(read_wav_checked).transpose()?;
    let rate = match &reference {
        Some(r) => r.sample_rate,
        None => cfg.get_u32("sample.rate")?,
    };
    let mel = mel_from(cfg, rate as f64)?;
    let hop = mel.cfg.stft.hop;
    let (y, out_len) = match (input, &reference) {
        (Some(p), _) => {
            let (m, f, vals) = mel_read(p)?;
            if m != mel.cfg.n_mels {
                return Err(Error::Config(format!(
                    "mel tensor has {m} bands, configuration expects {}",
                    mel.cfg.n_mels
                )));
            }
            if f == 0 {
                return Err(Error::Format("mel tensor has no frames".into()));
            }
            (vals, (f - 1) * hop)
        }
        (None, Some(r)) => (mel.apply(&r.samples), r.len()),
        (None, None) => {
            return Err(Error::Config(
                "vocoding needs --input (mel tensor) and/or --reference".into(),
            ))
        }
    };
    if out_len == 0 {
        return Err(Error::Config("mel tensor implies an empty signal".into()));
    }
    let gcfg = guidance_from(cfg, GuidanceMode::Reconstruction)?;
    let (outs, trace) = solve_inverse(
        &TaskSpec::Vocode { mel: &mel, out_len },
        &y,
        &[&model],
        &sched,
        &gcfg,
    )?;
    let est = &outs[0];

    let mut report = MetricReport::new();
    let est_mel = mel.apply(est);
    let mae = est_mel
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64;
    report.push("mel_mae", mae);
    if let Some(r) = &reference {
        if r.len() == est.len() {
            report.push("si_snr_out_db", si_snr(&r.samples, est)?);
            report.push("lsd_out", lsd(&r.samples, est, &StftConfig::default())?);
        }
    }
    wav_write(output, &Waveform::new(rate, est.clone()))?;
    println!("wrote {}", output.display());
    if let Some(p) = save_mel {
        mel_write(p, mel.cfg.n_mels, y.len() / mel.cfg.n_mels, &y)?;
        println!("wrote mel tensor {}", p.display());
    }
    write_trace(trace_path, &trace)?;
    emit_report(&report);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_separate(
    cfg: &Settings,
    ckpt: &Path,
    ckpt2: Option<&Path>,
    input: Option<&Path>,
    ref1: Option<&Path>,
    ref2: Option<&Path>,
    out1: &Path,
    out2: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (model1, sched) = checkpoint::load(ckpt)?;
    let model2 = ckpt2.map(checkpoint::load).transpose()?;
    if let Some((_, s2)) = &model2 {
        if s2.betas() != sched.betas() {
            return Err(Error::Config(
                "the two checkpoints use different noise schedules".into(),
            ));
        }
    }
    let refs = match (ref1, ref2) {
        (Some(a), Some(b)) => Some((read_wav_checked(a)?, read_wav_checked(b)?)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "--ref1 and --ref2 must be given together".into(),
            ))
        }
    };
    if let Some((a, b)) = &refs {
        if a.sample_rate != b.sample_rate || a.len() != b.len() {
            return Err(Error::Config(
                "reference sources must share sample rate and length".into(),
            ));
        }
    }
    let (mixture, rate, ref_samples) = match (input, &refs) {
        (Some(p), _) => {
            let w = read_wav_checked(p)?;
            let rs = refs
                .as_ref()
                .map(|(a, b)| (a.samples.clone(), b.samples.clone()));
            if let Some((a, _)) = &rs {
                if a.len() != w.len() {
                    return Err(Error::Config(
                        "references must match the mixture length".into(),
                    ));
                }
            }
            (w.samples.clone(), w.sample_rate, rs)
        }
        (None, Some((a, b))) => {
            let (mix, s1, s2) = make_mixture(&a.samples, &b.samples, MIX_PEAK)?;
            (mix, a.sample_rate, Some((s1, s2)))
        }
        (None, None) => {
            return Err(Error::Config(
                "separation needs --input (mixture) or --ref1/--ref2".into(),
            ))
        }
    };
    let gcfg = guidance_from(cfg, GuidanceMode::Separation)?;
    let models: Vec<&dyn ScoreModel> = match &model2 {
        Some((m2, _)) => vec![&model1, m2],
        None => vec![&model1],
    };
    let (outs, trace) = solve_inverse(&TaskSpec::Separate, &mixture, &models, &sched, &gcfg)?;

    let mut report = MetricReport::new();
    if let Some((r1, r2)) = &ref_samples {
        let base = (si_snr(r1, &mixture)? + si_snr(r2, &mixture)?) / 2.0;
        let (best, swapped) = si_snr_best_permutation((r1, r2), (&outs[0], &outs[1]))?;
        report.push("si_snr_mixture_db", base);
        report.push("si_snr_out_db", best);
        report.push("si_snr_gain_db", best - base);
        report.push("permutation_swapped", if swapped { 1.0 } else { 0.0 });
    }
    wav_write(out1, &Waveform::new(rate, outs[0].clone()))?;
    wav_write(out2, &Waveform::new(rate, outs[1].clone()))?;
    println!("wrote {} and {}", out1.display(), out2.display());
    write_trace(trace_path, &trace)?;
    emit_report(&report);
    Ok(())
}

// --- oracle self-checks ---

type CheckResult = std::result::Result<(), String>;

fn check_schedule_recurrence() -> CheckResult {
    let s = NoiseSchedule::linear(200, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let mut prod = 1.0;
    for t in 1..=200 {
        prod *= 1.0 - s.beta(t);
        if (s.alpha_bar(t) - prod).abs() > 1e-12 {
            return Err(format!("alpha_bar({t}) drifts from the direct product"));
        }
    }
    if (s.alpha_bar(200) - 0.1321827542506178).abs() > 1e-12 {
        return Err(format!(
            "alpha_bar(200) = {}, expected 0.1321827542506178",
            s.alpha_bar(200)
        ));
    }
    Ok(())
}

fn check_reverse_step_identity() -> CheckResult {
    let s = NoiseSchedule::linear(200, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let x0: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
    let eps: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
    let x1 = forward_noise(&x0, 1, &eps, &s);
    let back = ddpm_reverse_step(&x1, 1, &eps, &s, &vec![0.0; 64], SigmaKind::Posterior);
    for i in 0..64 {
        if (back[i] - x0[i]).abs() > 1e-10 {
            return Err("final reverse step does not invert the forward step".into());
        }
    }
    Ok(())
}

fn check_gaussian_score_fd() -> CheckResult {
    let s = NoiseSchedule::linear(200, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let p = GaussianPrior::ar1(4, 0.7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let t = 100;
    let score = p.marginal_score(&x, t, &s).map_err(|e| e.to_string())?;
    let h = 1e-5;
    for i in 0..4 {
        let mut xp = x.clone();
        xp[i] += h;
        let lp = p
            .log_marginal_density(&xp, t, &s)
            .map_err(|e| e.to_string())?;
        xp[i] = x[i] - h;
        let lm = p
            .log_marginal_density(&xp, t, &s)
            .map_err(|e| e.to_string())?;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - score[i]).abs() / fd.abs().max(score[i].abs()).max(1e-9);
        if rel > 1e-6 {
            return Err(format!(
                "analytic score vs FD mismatch at coord {i}: rel {rel:.2e}"
            ));
        }
    }
    Ok(())
}

fn check_exact_conditional() -> CheckResult {
    let s = NoiseSchedule::linear(200, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let p = GaussianPrior::ar1(4, 0.5).map_err(|e| e.to_string())?;
    let a = DMatrix::identity(4, 4);
    let y = nalgebra::DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
    let x = vec![0.5, 0.5, -0.5, 0.0];
    let t = 60;
    let got = exact_gaussian_conditional_score(&p, &a, &y, &x, t, &s).map_err(|e| e.to_string())?;
    let (ab, om) = (s.alpha_bar(t), 1.0 - s.alpha_bar(t));
    for i in 0..4 {
        let expect = -(x[i] - ab.sqrt() * y[i]) / om;
        if (got[i] - expect).abs() > 1e-9 {
            return Err("identity-observation conditional score mismatch".into());
        }
    }
    Ok(())
}

fn check_separation_scalar() -> CheckResult {
    let s = NoiseSchedule::from_betas(vec![0.75]).map_err(|e| e.to_string())?;
    let (g, _) =
        separation_likelihood_grad(&[0.1], &[0.1], 1, &[1.0], &s).map_err(|e| e.to_string())?;
    if (g[0] - 0.2).abs() > 1e-12 {
        return Err(format!("scalar separation gradient {} != 0.2", g[0]));
    }
    Ok(())
}

fn check_stft_roundtrip() -> CheckResult {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
    let cfg = StftConfig::default();
    let spec = stft(&x, &cfg).map_err(|e| e.to_string())?;
    let back = istft(&spec, &cfg, x.len()).map_err(|e| e.to_string())?;
    let rms = (x
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    if rms > 1e-6 {
        return Err(format!("istft(stft(x)) RMS error {rms:.2e}"));
    }
    Ok(())
}

fn check_fir_stopband() -> CheckResult {
    let kernel = design_lowpass_fir(2000.0, 16000.0, 129).map_err(|e| e.to_string())?;
    // Frequency response at 2x cutoff via direct DTFT of the kernel.
    let w = std::f64::consts::TAU * 4000.0 / 16000.0;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, k) in kernel.iter().enumerate() {
        re += k * (w * i as f64).cos();
        im -= k * (w * i as f64).sin();
    }
    let mag = (re * re + im * im).sqrt();
    let db = 20.0 * mag.log10();
    if db > -40.0 {
        return Err(format!(
            "stopband attenuation {db:.1} dB at twice the cutoff"
        ));
    }
    Ok(())
}

fn check_clip_pointwise() -> CheckResult {
    let clip = Clip::new(0.3).map_err(|e| e.to_string())?;
    let xs = [-1.0, -0.30001, -0.3, -0.1, 0.0, 0.2999, 0.3, 2.0];
    let out = clip.apply(&xs);
    for (i, &x) in xs.iter().enumerate() {
        let expect = x.clamp(-0.3, 0.3);
        if out[i] != expect {
            return Err(format!("clip({x}) = {}, expected {expect}", out[i]));
        }
    }
    Ok(())
}

fn check_mel_grad_fd() -> CheckResult {
    let stft_cfg = StftConfig {
        n_fft: 64,
        hop: 16,
        center: true,
    };
    let mel = Mel::new(MelConfig {
        stft: stft_cfg,
        sample_rate: 1600.0,
        n_mels: 8,
        fmin: 0.0,
        fmax: 800.0,
        floor: 1e-5,
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..160)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3)
        .collect();
    let y: Vec<f64> = mel
        .apply(&x)
        .iter()
        .map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let grad = mel.residual_grad(&x, &y).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for i in (0..160).step_by(37) {
        let mut xp = x.clone();
        xp[i] += h;
        let rp = mel.residual(&xp, &y).map_err(|e| e.to_string())?;
        xp[i] = x[i] - h;
        let rm = mel.residual(&xp, &y).map_err(|e| e.to_string())?;
        let fd = (rp - rm) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        if rel > 1e-4 {
            return Err(format!(
                "mel gradient vs FD mismatch at sample {i}: rel {rel:.2e}"
            ));
        }
    }
    Ok(())
}

fn check_denoiser_grad_fd() -> CheckResult {
    let cfg = DenoiserConfig {
        channels: 4,
        blocks: 2,
        cond_dim: 8,
        dilation_cycle: vec![1, 2],
        seed: 9,
    };
    let mut model = ToyDenoiser::new(cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for p in model.params_mut() {
        *p += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
    let target: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
    let beta = 0.01;
    let loss = |m: &ToyDenoiser| -> std::result::Result<f64, String> {
        let out = m.forward_cached(&x, beta).map_err(|e| e.to_string())?;
        Ok(out
            .out
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.len() as f64)
    };
    let cache = model.forward_cached(&x, beta).map_err(|e| e.to_string())?;
    let d_out: Vec<f64> = cache
        .out
        .iter()
        .zip(&target)
        .map(|(a, b)| 2.0 * (a - b) / x.len() as f64)
        .collect();
    let mut grads = vec![0.0; model.param_count()];
    model.backward(&cache, &d_out, &mut grads);
    let n = model.param_count();
    let h = 1e-5;
    for k in 0..10 {
        let i = k * (n / 10);
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let lp = loss(&model)?;
        model.params_mut()[i] = orig - h;
        let lm = loss(&model)?;
        model.params_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
        if rel > 1e-4 {
            return Err(format!(
                "denoiser gradient vs FD mismatch at param {i}: rel {rel:.2e}"
            ));
        }
    }
    Ok(())
}

/// Fast self-verification of the numerical core. Prints one line per check;
/// any failure aborts with a numeric error after all checks have run.
pub fn cmd_oracle_check() -> Result<()> {
    let checks: &[(&str, fn() -> CheckResult)] = &[
        ("schedule_recurrence", check_schedule_recurrence),
        ("reverse_step_identity", check_reverse_step_identity),
        ("gaussian_score_fd", check_gaussian_score_fd),
        ("exact_conditional_score", check_exact_conditional),
        ("separation_scalar", check_separation_scalar),
        ("stft_roundtrip", check_stft_roundtrip),
        ("fir_stopband", check_fir_stopband),
        ("clip_pointwise", check_clip_pointwise),
        ("mel_grad_fd", check_mel_grad_fd),
        ("denoiser_grad_fd", check_denoiser_grad_fd),
    ];
    let mut failures = 0;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} oracle check(s) failed")));
    }
    println!("all {} oracle checks passed", checks.len());
    Ok(())
}
