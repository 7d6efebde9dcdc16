//! Flat key/value configuration shared by every CLI command. Defaults live
//! in a single schema table; values can come from an INI-style file and be
//! overridden per-key on the command line. Unknown keys are rejected
//! everywhere so typos fail loudly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    U64,
    F64,
    Str,
}

pub struct SettingDef {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! def {
    ($key:literal, $kind:ident, $default:literal, $help:literal) => {
        SettingDef {
            key: $key,
            kind: Kind::$kind,
            default: $default,
            help: $help,
        }
    };
}

pub const SCHEMA: &[SettingDef] = &[
    def!("schedule.steps", U64, "200", "number of diffusion steps T"),
    def!(
        "schedule.beta_min",
        F64,
        "0.0001",
        "beta(1) of the linear schedule"
    ),
    def!(
        "schedule.beta_max",
        F64,
        "0.02",
        "beta(T) of the linear schedule"
    ),
    def!(
        "sample.rate",
        U64,
        "16000",
        "sample rate in Hz for generated audio"
    ),
    def!(
        "sample.len",
        U64,
        "16000",
        "generated signal length in samples"
    ),
    def!("sample.seed", U64, "0", "seed for sampling randomness"),
    def!(
        "guidance.mode",
        Str,
        "auto",
        "auto|none|imputation|reconstruction|separation"
    ),
    def!(
        "guidance.xi0",
        F64,
        "1.0",
        "base reconstruction-guidance scale"
    ),
    def!(
        "guidance.norm_eps",
        F64,
        "1e-8",
        "stabilizer in the xi(t) denominator"
    ),
    def!(
        "guidance.sigma",
        Str,
        "posterior",
        "ancestral noise: posterior|beta"
    ),
    def!(
        "guidance.snapshot_every",
        U64,
        "0",
        "record denoised snapshots every N steps (0 = off)"
    ),
    def!("train.steps", U64, "2000", "optimizer steps"),
    def!("train.batch_size", U64, "8", "segments per step"),
    def!(
        "train.segment_len",
        U64,
        "4000",
        "training segment length in samples"
    ),
    def!("train.lr", F64, "0.0002", "Adam learning rate"),
    def!("train.seed", U64, "0", "seed for batching and noise draws"),
    def!(
        "train.dataset_count",
        U64,
        "64",
        "number of toy clips to synthesize"
    ),
    def!("train.log_every", U64, "100", "print loss every N steps"),
    def!("model.channels", U64, "32", "denoiser channel width"),
    def!(
        "model.blocks",
        U64,
        "8",
        "number of dilated residual blocks"
    ),
    def!(
        "model.cond_dim",
        U64,
        "16",
        "noise-level embedding size (even)"
    ),
    def!("model.seed", U64, "0", "seed for weight initialization"),
    def!(
        "bwe.cutoff_hz",
        F64,
        "2000",
        "low-pass cutoff of the degradation"
    ),
    def!("bwe.taps", U64, "129", "FIR length (odd)"),
    def!("declip.threshold", F64, "0.25", "hard-clip amplitude"),
    def!("mel.n_fft", U64, "1024", "STFT size for the mel operator"),
    def!("mel.hop", U64, "256", "STFT hop for the mel operator"),
    def!("mel.n_mels", U64, "80", "mel band count"),
    def!("mel.fmin", F64, "0", "lowest mel band edge in Hz"),
    def!("mel.fmax", F64, "8000", "highest mel band edge in Hz"),
    def!("data.f0_min", F64, "80", "lowest fundamental of toy clips"),
    def!(
        "data.f0_max",
        F64,
        "300",
        "highest fundamental of toy clips"
    ),
    def!("data.max_harmonics", U64, "5", "most partials per toy clip"),
    def!(
        "data.noise_sigma",
        F64,
        "0.01",
        "white-noise level added to toy clips"
    ),
];

fn lookup(key: &str) -> Result<&'static SettingDef> {
    SCHEMA
        .iter()
        .find(|d| d.key == key)
        .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        let values = SCHEMA
            .iter()
            .map(|d| (d.key, d.default.to_string()))
            .collect();
        Settings { values }
    }
}

impl Settings {
    /// Set one key, validating existence and that the value parses for the
    /// declared kind.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let def = lookup(key)?;
        let value = value.trim();
        match def.kind {
            Kind::U64 => {
                value.parse::<u64>().map_err(|_| {
                    Error::Config(format!(
                        "'{key}' expects an unsigned integer, got '{value}'"
                    ))
                })?;
            }
            Kind::F64 => {
                let v = value.parse::<f64>().map_err(|_| {
                    Error::Config(format!("'{key}' expects a number, got '{value}'"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Config(format!(
                        "'{key}' must be finite, got '{value}'"
                    )));
                }
            }
            Kind::Str => {}
        }
        self.values.insert(def.key, value.to_string());
        Ok(())
    }

    /// Parse `key = value` lines. `#` and `;` start comments, blank lines are
    /// skipped, section headers are not part of the format.
    pub fn load_ini_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find(['#', ';']) {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                return Err(Error::Config(format!(
                    "{origin}:{}: sections are not supported, use flat dotted keys",
                    lineno + 1
                )));
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load_ini(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_ini_str(&text, &path.display().to_string())
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from schema"))
    }

    pub fn get_f64(&self, key: &str) -> f64 {
        self.get_str(key).parse().expect("validated at set time")
    }

    pub fn get_u64(&self, key: &str) -> u64 {
        self.get_str(key).parse().expect("validated at set time")
    }

    pub fn get_usize(&self, key: &str) -> usize {
        self.get_u64(key) as usize
    }

    pub fn get_u32(&self, key: &str) -> Result<u32> {
        let v = self.get_u64(key);
        u32::try_from(v)
            .map_err(|_| Error::Config(format!("'{key}' = {v} does not fit in 32 bits")))
    }

    /// Stable `key=value` dump (sorted by key).
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}
