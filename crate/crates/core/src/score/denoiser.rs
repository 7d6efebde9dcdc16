//! Small trainable time-domain ε-predictor: a dilated gated-convolution
//! residual network with skip connections, conditioned on β(t) through random
//! Fourier features. Backpropagation is hand-coded against the flat parameter
//! vector and verified by finite differences, so there is no autodiff
//! dependency anywhere in the crate.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::ScoreModel;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Architecture hyperparameters. `cond_dim` random Fourier features of β(t)
/// (half sine, half cosine) are projected into every block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub blocks: usize,
    pub cond_dim: usize,
    pub dilation_cycle: Vec<usize>,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 32,
            blocks: 8,
            cond_dim: 16,
            dilation_cycle: vec![1, 2, 4, 8],
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 {
            return Err(Error::Config("channels and blocks must be positive".into()));
        }
        if self.cond_dim < 2 || self.cond_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "cond_dim must be even >= 2, got {}",
                self.cond_dim
            )));
        }
        if self.dilation_cycle.is_empty() || self.dilation_cycle.iter().any(|&d| d == 0) {
            return Err(Error::Config("dilation cycle must be positive".into()));
        }
        Ok(())
    }

    fn dilation(&self, block: usize) -> usize {
        self.dilation_cycle[block % self.dilation_cycle.len()]
    }
}

/// Offsets into the flat parameter vector. Kernel width is fixed at 3; each
/// block owns a gated conv (2C outputs), a conditioning projection, and 1x1
/// residual/skip convolutions.
#[derive(Debug, Clone, Copy)]
struct Layout {
    c: usize,
    f: usize,
    block_len: usize,
    head: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &DenoiserConfig) -> Layout {
        let (c, f) = (cfg.channels, cfg.cond_dim);
        // w_conv 2C*C*3 + b_conv 2C + w_cond 2C*F + w_res C*C + b_res C
        // + w_skip C*C + b_skip C
        let block_len = 6 * c * c + 2 * c + 2 * c * f + 2 * c * c + 2 * c;
        let head = 2 * c + cfg.blocks * block_len;
        let total = head + c * c + 2 * c + 1;
        Layout {
            c,
            f,
            block_len,
            head,
            total,
        }
    }

    fn w_in(&self) -> usize {
        0
    }
    fn b_in(&self) -> usize {
        self.c
    }
    fn w_conv(&self, b: usize) -> usize {
        2 * self.c + b * self.block_len
    }
    fn b_conv(&self, b: usize) -> usize {
        self.w_conv(b) + 6 * self.c * self.c
    }
    fn w_cond(&self, b: usize) -> usize {
        self.b_conv(b) + 2 * self.c
    }
    fn w_res(&self, b: usize) -> usize {
        self.w_cond(b) + 2 * self.c * self.f
    }
    fn b_res(&self, b: usize) -> usize {
        self.w_res(b) + self.c * self.c
    }
    fn w_skip(&self, b: usize) -> usize {
        self.b_res(b) + self.c
    }
    fn b_skip(&self, b: usize) -> usize {
        self.w_skip(b) + self.c * self.c
    }
    fn w_head1(&self) -> usize {
        self.head
    }
    fn b_head1(&self) -> usize {
        self.head + self.c * self.c
    }
    fn w_head2(&self) -> usize {
        self.b_head1() + self.c
    }
    fn b_head2(&self) -> usize {
        self.w_head2() + self.c
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate activations retained by `forward_cached` for the backward
/// pass. Rows are channel-major: `buf[ch * len + i]`.
pub struct ForwardCache {
    len: usize,
    x: Vec<f64>,
    feat: Vec<f64>,
    /// Block inputs u_0 .. u_{B-1} (the final block's output feeds nothing;
    /// the head reads only the skip accumulator).
    u: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    skipn: Vec<f64>,
    h1: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    cfg: DenoiserConfig,
    layout: Layout,
    /// One frequency per sin/cos feature pair, drawn once at init.
    fourier_freqs: Vec<f64>,
    params: Vec<f64>,
}

impl ToyDenoiser {
    pub fn new(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let fourier_freqs: Vec<f64> = (0..cfg.cond_dim / 2)
            .map(|_| 64.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();

        let c = cfg.channels;
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, scale: f64, rng: &mut ChaCha12Rng| {
            for p in &mut params[range] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        };
        fill(layout.w_in()..layout.w_in() + c, 1.0, &mut rng);
        for b in 0..cfg.blocks {
            let conv_scale = 1.0 / ((3 * c) as f64).sqrt();
            fill(
                layout.w_conv(b)..layout.w_conv(b) + 6 * c * c,
                conv_scale,
                &mut rng,
            );
            let cond_scale = 1.0 / (cfg.cond_dim as f64).sqrt();
            fill(
                layout.w_cond(b)..layout.w_cond(b) + 2 * c * cfg.cond_dim,
                cond_scale,
                &mut rng,
            );
            let one_scale = 1.0 / (c as f64).sqrt();
            fill(
                layout.w_res(b)..layout.w_res(b) + c * c,
                one_scale,
                &mut rng,
            );
            fill(
                layout.w_skip(b)..layout.w_skip(b) + c * c,
                one_scale,
                &mut rng,
            );
        }
        fill(
            layout.w_head1()..layout.w_head1() + c * c,
            1.0 / (c as f64).sqrt(),
            &mut rng,
        );
        // Output projection zero-initialized: the untrained model predicts
        // ε̂ = 0, so the initial loss sits at Var(ε) ≈ 1.
        Ok(ToyDenoiser {
            cfg,
            layout,
            fourier_freqs,
            params,
        })
    }

    /// Rebuild a model from checkpoint parts.
    pub fn from_parts(
        cfg: DenoiserConfig,
        fourier_freqs: Vec<f64>,
        params: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if fourier_freqs.len() != cfg.cond_dim / 2 {
            return Err(Error::Format(format!(
                "checkpoint has {} fourier frequencies, architecture needs {}",
                fourier_freqs.len(),
                cfg.cond_dim / 2
            )));
        }
        if params.len() != layout.total {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) || fourier_freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::Format(
                "checkpoint contains non-finite values".into(),
            ));
        }
        Ok(ToyDenoiser {
            cfg,
            layout,
            fourier_freqs,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn fourier_freqs(&self) -> &[f64] {
        &self.fourier_freqs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Samples each output can see: 1 + 2·Σ dilations over all blocks.
    pub fn receptive_field(&self) -> usize {
        let sum: usize = (0..self.cfg.blocks).map(|b| self.cfg.dilation(b)).sum();
        1 + 2 * sum
    }

    pub fn describe(&self) -> String {
        format!(
            "{} channels x {} blocks, dilation cycle {:?}, {} parameters, receptive field {} samples",
            self.cfg.channels,
            self.cfg.blocks,
            self.cfg.dilation_cycle,
            self.param_count(),
            self.receptive_field()
        )
    }

    fn features(&self, beta: f64) -> Vec<f64> {
        let mut feat = Vec::with_capacity(self.cfg.cond_dim);
        for &f in &self.fourier_freqs {
            let w = 2.0 * std::f64::consts::PI * f * beta;
            feat.push(w.sin());
            feat.push(w.cos());
        }
        feat
    }

    /// Forward pass retaining every activation needed by `backward`.
    pub fn forward_cached(&self, x: &[f64], beta: f64) -> Result<ForwardCache> {
        let rf = self.receptive_field();
        if x.len() < rf {
            return Err(Error::Config(format!(
                "input of {} samples is shorter than the receptive field ({rf})",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || !beta.is_finite() {
            return Err(Error::Numeric("non-finite input to denoiser".into()));
        }
        let (c, l, lay) = (self.cfg.channels, x.len(), &self.layout);
        let p = &self.params;
        let feat = self.features(beta);

        let mut u = vec![0.0; c * l];
        for ch in 0..c {
            let (w, bias) = (p[lay.w_in() + ch], p[lay.b_in() + ch]);
            for i in 0..l {
                u[ch * l + i] = w * x[i] + bias;
            }
        }

        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut u_stack = Vec::with_capacity(self.cfg.blocks);
        let mut a_stack = Vec::with_capacity(self.cfg.blocks);
        let mut g_stack = Vec::with_capacity(self.cfg.blocks);
        let mut skip = vec![0.0; c * l];
        let mut pre = vec![0.0; 2 * c * l];
        let mut z = vec![0.0; c * l];

        for b in 0..self.cfg.blocks {
            let d = self.cfg.dilation(b);
            for oc in 0..2 * c {
                let mut cond = p[lay.b_conv(b) + oc];
                for (j, &fj) in feat.iter().enumerate() {
                    cond += p[lay.w_cond(b) + oc * self.cfg.cond_dim + j] * fj;
                }
                let row = &mut pre[oc * l..(oc + 1) * l];
                row.fill(cond);
                for ic in 0..c {
                    let wbase = lay.w_conv(b) + (oc * c + ic) * 3;
                    let (w0, w1, w2) = (p[wbase], p[wbase + 1], p[wbase + 2]);
                    let ur = &u[ic * l..(ic + 1) * l];
                    for i in 0..l {
                        row[i] += w1 * ur[i];
                    }
                    if d < l {
                        for i in d..l {
                            row[i] += w0 * ur[i - d];
                        }
                        for i in 0..l - d {
                            row[i] += w2 * ur[i + d];
                        }
                    }
                }
            }
            let mut a = vec![0.0; c * l];
            let mut g = vec![0.0; c * l];
            for ch in 0..c {
                for i in 0..l {
                    a[ch * l + i] = pre[ch * l + i].tanh();
                    g[ch * l + i] = sigmoid(pre[(c + ch) * l + i]);
                    z[ch * l + i] = a[ch * l + i] * g[ch * l + i];
                }
            }
            let mut u_next = vec![0.0; c * l];
            for oc in 0..c {
                let mut row = vec![p[lay.b_res(b) + oc]; l];
                let mut srow = vec![p[lay.b_skip(b) + oc]; l];
                for ic in 0..c {
                    let wr = p[lay.w_res(b) + oc * c + ic];
                    let ws = p[lay.w_skip(b) + oc * c + ic];
                    let zr = &z[ic * l..(ic + 1) * l];
                    for i in 0..l {
                        row[i] += wr * zr[i];
                        srow[i] += ws * zr[i];
                    }
                }
                for i in 0..l {
                    u_next[oc * l + i] = (u[oc * l + i] + row[i]) * inv_sqrt2;
                    skip[oc * l + i] += srow[i];
                }
            }
            u_stack.push(std::mem::replace(&mut u, u_next));
            a_stack.push(a);
            g_stack.push(g);
        }

        let inv_sqrt_b = 1.0 / (self.cfg.blocks as f64).sqrt();
        let skipn: Vec<f64> = skip.iter().map(|v| v * inv_sqrt_b).collect();
        let mut h1 = vec![0.0; c * l];
        for oc in 0..c {
            let mut row = vec![p[lay.b_head1() + oc]; l];
            for ic in 0..c {
                let w = p[lay.w_head1() + oc * c + ic];
                let sr = &skipn[ic * l..(ic + 1) * l];
                for i in 0..l {
                    row[i] += w * sr[i];
                }
            }
            for i in 0..l {
                h1[oc * l + i] = row[i].tanh();
            }
        }
        let mut out = vec![p[self.layout.b_head2()]; l];
        for ch in 0..c {
            let w = p[lay.w_head2() + ch];
            for i in 0..l {
                out[i] += w * h1[ch * l + i];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite denoiser output".into()));
        }
        Ok(ForwardCache {
            len: l,
            x: x.to_vec(),
            feat,
            u: u_stack,
            a: a_stack,
            g: g_stack,
            skipn,
            h1,
            out,
        })
    }

    /// Accumulate dLoss/dparams into `grads` given dLoss/doutput.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) {
        assert_eq!(d_out.len(), cache.len);
        assert_eq!(grads.len(), self.layout.total);
        let (c, l, lay) = (self.cfg.channels, cache.len, &self.layout);
        let p = &self.params;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let inv_sqrt_b = 1.0 / (self.cfg.blocks as f64).sqrt();

        // Head: out = w_head2 · h1 + b_head2, h1 = tanh(w_head1 · skipn + b_head1).
        let mut d_h1pre = vec![0.0; c * l];
        for ch in 0..c {
            let w = p[lay.w_head2() + ch];
            let mut gw = 0.0;
            for i in 0..l {
                let h = cache.h1[ch * l + i];
                gw += h * d_out[i];
                d_h1pre[ch * l + i] = w * d_out[i] * (1.0 - h * h);
            }
            grads[lay.w_head2() + ch] += gw;
        }
        grads[lay.b_head2()] += d_out.iter().sum::<f64>();

        let mut d_skip = vec![0.0; c * l];
        for oc in 0..c {
            let dr = &d_h1pre[oc * l..(oc + 1) * l];
            grads[lay.b_head1() + oc] += dr.iter().sum::<f64>();
            for ic in 0..c {
                let sr = &cache.skipn[ic * l..(ic + 1) * l];
                let mut gw = 0.0;
                let w = p[lay.w_head1() + oc * c + ic];
                let ds = &mut d_skip[ic * l..(ic + 1) * l];
                for i in 0..l {
                    gw += dr[i] * sr[i];
                    ds[i] += w * dr[i];
                }
                grads[lay.w_head1() + oc * c + ic] += gw;
            }
        }
        // skipn = skip_total/√B; the accumulator gradient is shared by all
        // blocks.
        for v in d_skip.iter_mut() {
            *v *= inv_sqrt_b;
        }

        let mut d_u = vec![0.0; c * l]; // grad wrt the last block's output (unused by head)
        let mut z = vec![0.0; c * l];
        let mut d_z = vec![0.0; c * l];
        let mut d_pre = vec![0.0; 2 * c * l];

        for b in (0..self.cfg.blocks).rev() {
            let d = self.cfg.dilation(b);
            let (u_in, a, g) = (&cache.u[b], &cache.a[b], &cache.g[b]);
            for i in 0..c * l {
                z[i] = a[i] * g[i];
            }
            // u_out = (u_in + res)/√2 ⇒ both d_res and the direct-path
            // contribution to d_u_in equal d_u_out/√2; scale once here.
            for v in d_u.iter_mut() {
                *v *= inv_sqrt2;
            }
            d_z.fill(0.0);
            for oc in 0..c {
                let dres = &d_u[oc * l..(oc + 1) * l];
                let dskp = &d_skip[oc * l..(oc + 1) * l];
                grads[lay.b_res(b) + oc] += dres.iter().sum::<f64>();
                grads[lay.b_skip(b) + oc] += dskp.iter().sum::<f64>();
                for ic in 0..c {
                    let zr = &z[ic * l..(ic + 1) * l];
                    let wr = p[lay.w_res(b) + oc * c + ic];
                    let ws = p[lay.w_skip(b) + oc * c + ic];
                    let dz = &mut d_z[ic * l..(ic + 1) * l];
                    let (mut gwr, mut gws) = (0.0, 0.0);
                    for i in 0..l {
                        gwr += dres[i] * zr[i];
                        gws += dskp[i] * zr[i];
                        dz[i] += wr * dres[i] + ws * dskp[i];
                    }
                    grads[lay.w_res(b) + oc * c + ic] += gwr;
                    grads[lay.w_skip(b) + oc * c + ic] += gws;
                }
            }
            // z = tanh(filt)·σ(gate)
            for ch in 0..c {
                for i in 0..l {
                    let (av, gv, dzv) = (a[ch * l + i], g[ch * l + i], d_z[ch * l + i]);
                    d_pre[ch * l + i] = dzv * gv * (1.0 - av * av);
                    d_pre[(c + ch) * l + i] = dzv * av * gv * (1.0 - gv);
                }
            }
            for oc in 0..2 * c {
                let dp = &d_pre[oc * l..(oc + 1) * l];
                let srow: f64 = dp.iter().sum();
                grads[lay.b_conv(b) + oc] += srow;
                for (j, &fj) in cache.feat.iter().enumerate() {
                    grads[lay.w_cond(b) + oc * self.cfg.cond_dim + j] += srow * fj;
                }
            }
            // Conv weights and input gradient: mirror of the forward taps.
            let d_u_direct = std::mem::replace(&mut d_u, vec![0.0; c * l]);
            for oc in 0..2 * c {
                let dp = &d_pre[oc * l..(oc + 1) * l];
                for ic in 0..c {
                    let ur = &u_in[ic * l..(ic + 1) * l];
                    let wbase = lay.w_conv(b) + (oc * c + ic) * 3;
                    let (w0, w1, w2) = (p[wbase], p[wbase + 1], p[wbase + 2]);
                    let du = &mut d_u[ic * l..(ic + 1) * l];
                    let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
                    for i in 0..l {
                        g1 += dp[i] * ur[i];
                        du[i] += w1 * dp[i];
                    }
                    if d < l {
                        for i in d..l {
                            g0 += dp[i] * ur[i - d];
                            du[i - d] += w0 * dp[i];
                        }
                        for i in 0..l - d {
                            g2 += dp[i] * ur[i + d];
                            du[i + d] += w2 * dp[i];
                        }
                    }
                    grads[wbase] += g0;
                    grads[wbase + 1] += g1;
                    grads[wbase + 2] += g2;
                }
            }
            for i in 0..c * l {
                d_u[i] += d_u_direct[i];
            }
        }

        for ch in 0..c {
            let du = &d_u[ch * l..(ch + 1) * l];
            grads[lay.b_in() + ch] += du.iter().sum::<f64>();
            grads[lay.w_in() + ch] += du.iter().zip(&cache.x).map(|(d, x)| d * x).sum::<f64>();
        }
    }
}

impl ScoreModel for ToyDenoiser {
    fn predict_eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x_t, sched.beta(t))?;
        Ok(cache.out)
    }
}
