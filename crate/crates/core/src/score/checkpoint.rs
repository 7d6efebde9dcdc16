//! Versioned binary checkpoints. The noise schedule is embedded alongside the
//! architecture and parameters so inference can never run against a schedule
//! the model was not trained with. All integers and floats are little-endian.

use std::path::Path;

use super::denoiser::{DenoiserConfig, ToyDenoiser};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"WPCK";
const VERSION: u32 = 1;

pub fn save(path: &Path, model: &ToyDenoiser, sched: &NoiseSchedule) -> Result<()> {
    let cfg = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, cfg.channels as u32);
    push_u32(&mut buf, cfg.blocks as u32);
    push_u32(&mut buf, cfg.cond_dim as u32);
    push_u64(&mut buf, cfg.seed);
    push_u32(&mut buf, cfg.dilation_cycle.len() as u32);
    for &d in &cfg.dilation_cycle {
        push_u32(&mut buf, d as u32);
    }
    push_u32(&mut buf, model.fourier_freqs().len() as u32);
    for &f in model.fourier_freqs() {
        push_f64(&mut buf, f);
    }
    push_u32(&mut buf, sched.num_steps() as u32);
    for &b in sched.betas() {
        push_f64(&mut buf, b);
    }
    push_u64(&mut buf, model.param_count() as u64);
    for &p in model.params() {
        push_f64(&mut buf, p);
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ToyDenoiser, NoiseSchedule)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let channels = cur.u32()? as usize;
    let blocks = cur.u32()? as usize;
    let cond_dim = cur.u32()? as usize;
    let seed = cur.u64()?;
    let cycle_len = cur.u32()? as usize;
    if cycle_len == 0 || cycle_len > 64 {
        return Err(Error::Format(format!(
            "implausible dilation cycle length {cycle_len}"
        )));
    }
    let mut dilation_cycle = Vec::with_capacity(cycle_len);
    for _ in 0..cycle_len {
        dilation_cycle.push(cur.u32()? as usize);
    }
    let n_freqs = cur.u32()? as usize;
    let mut freqs = Vec::with_capacity(n_freqs);
    for _ in 0..n_freqs {
        freqs.push(cur.f64()?);
    }
    let t = cur.u32()? as usize;
    let mut betas = Vec::with_capacity(t);
    for _ in 0..t {
        betas.push(cur.f64()?);
    }
    let n_params = cur.u64()? as usize;
    if n_params > 100_000_000 {
        return Err(Error::Format(format!(
            "implausible parameter count {n_params}"
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(cur.f64()?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after checkpoint payload",
            path.display(),
            bytes.len() - cur.pos
        )));
    }
    let sched = NoiseSchedule::from_betas(betas)?;
    let cfg = DenoiserConfig {
        channels,
        blocks,
        cond_dim,
        dilation_cycle,
        seed,
    };
    let model = ToyDenoiser::from_parts(cfg, freqs, params)?;
    Ok((model, sched))
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
