//! Waveform-to-waveform encoder/decoder with skip connections, used for both
//! the noise extractor and the enhancement model.
//!
//! Each encoder level is a strided convolution, SiLU, then a pointwise
//! convolution with a gated linear unit. Decoder levels mirror it with a
//! transposed convolution; encoder outputs are added to the decoder input at the
//! matching level. The input is divided by its RMS and the output rescaled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::Objective;
use super::params::ParamSet;
use crate::audio::Waveform;
use crate::dsp::MultiResLoss;
use crate::error::{Error, Result};

const RMS_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Add the input to the network output, so a zero network is the identity.
    #[serde(default)]
    pub residual: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            kernel: 8,
            stride: 4,
            residual: true,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "depth, base_channels and stride must be positive".into(),
            ));
        }
        if self.kernel < self.stride {
            return Err(Error::InvalidConfig("kernel must be >= stride".into()));
        }
        Ok(())
    }

    /// `(input channels, output channels)` of encoder level `l`.
    fn channels(&self, l: usize) -> (usize, usize) {
        let cin = if l == 0 {
            1
        } else {
            self.base_channels << (l - 1)
        };
        (cin, self.base_channels << l)
    }

    /// Smallest padded length `>= len` that every strided level consumes exactly.
    pub fn valid_length(&self, len: usize) -> usize {
        let mut n = len.max(1);
        for _ in 0..self.depth {
            n = if n <= self.kernel {
                1
            } else {
                (n - self.kernel).div_ceil(self.stride) + 1
            };
        }
        for _ in 0..self.depth {
            n = (n - 1) * self.stride + self.kernel;
        }
        n
    }
}

pub fn init_waveform_params<R: Rng + ?Sized>(
    cfg: &ExtractorConfig,
    rng: &mut R,
) -> Result<ParamSet> {
    cfg.validate()?;
    let k = cfg.kernel;
    let mut p = ParamSet::new();
    let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    for l in 0..cfg.depth {
        let (cin, ch) = cfg.channels(l);
        p.insert_uniform(
            &format!("enc{l}.conv.w"),
            &[ch, cin, k],
            bound(cin * k),
            rng,
        )?;
        p.insert_uniform(&format!("enc{l}.conv.b"), &[ch], bound(cin * k), rng)?;
        p.insert_uniform(&format!("enc{l}.glu.w"), &[2 * ch, ch], bound(ch), rng)?;
        p.insert_uniform(&format!("enc{l}.glu.b"), &[2 * ch], bound(ch), rng)?;
    }
    for l in (0..cfg.depth).rev() {
        let (cin, ch) = cfg.channels(l);
        // each transposed-conv output sums ch * kernel / stride products
        let fan = (ch * k / cfg.stride).max(1);
        p.insert_uniform(&format!("dec{l}.glu.w"), &[2 * ch, ch], bound(ch), rng)?;
        p.insert_uniform(&format!("dec{l}.glu.b"), &[2 * ch], bound(ch), rng)?;
        p.insert_uniform(&format!("dec{l}.tconv.w"), &[ch, cin, k], bound(fan), rng)?;
        p.insert_uniform(&format!("dec{l}.tconv.b"), &[cin], bound(fan), rng)?;
    }
    Ok(p)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v * sigmoid(v)).collect()
}

fn silu_backward(z: &[f64], dy: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// Strided valid convolution. `x` is `[cin][n_in]`, `w` is `[cout][cin][k]`.
fn conv1d(
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    s: usize,
) -> (Vec<f64>, usize) {
    let n_in = x.len() / cin;
    let n_out = (n_in - k) / s + 1;
    let mut y = vec![0.0; cout * n_out];
    for o in 0..cout {
        let yo = &mut y[o * n_out..(o + 1) * n_out];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let xi = &x[i * n_in..(i + 1) * n_in];
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                for (t, yv) in yo.iter_mut().enumerate() {
                    *yv += wv * xi[t * s + kk];
                }
            }
        }
    }
    (y, n_out)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len() / cin;
    let n_out = dy.len() / cout;
    for o in 0..cout {
        let dyo = &dy[o * n_out..(o + 1) * n_out];
        db[o] += dyo.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * n_in..(i + 1) * n_in];
            for kk in 0..k {
                let mut acc = 0.0;
                for (t, d) in dyo.iter().enumerate() {
                    acc += d * xi[t * s + kk];
                }
                dw[(o * cin + i) * k + kk] += acc;
            }
        }
    }
    if let Some(dx) = dx {
        for o in 0..cout {
            let dyo = &dy[o * n_out..(o + 1) * n_out];
            for i in 0..cin {
                let dxi = &mut dx[i * n_in..(i + 1) * n_in];
                for kk in 0..k {
                    let wv = w[(o * cin + i) * k + kk];
                    for (t, d) in dyo.iter().enumerate() {
                        dxi[t * s + kk] += wv * d;
                    }
                }
            }
        }
    }
}

/// Transposed convolution. `x` is `[cin][n_in]`, `w` is `[cin][cout][k]`.
fn tconv1d(
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    s: usize,
) -> Vec<f64> {
    let n_in = x.len() / cin;
    let n_out = (n_in - 1) * s + k;
    let mut y = vec![0.0; cout * n_out];
    for o in 0..cout {
        let yo = &mut y[o * n_out..(o + 1) * n_out];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let xi = &x[i * n_in..(i + 1) * n_in];
            for kk in 0..k {
                let wv = w[(i * cout + o) * k + kk];
                for (t, xv) in xi.iter().enumerate() {
                    yo[t * s + kk] += wv * xv;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn tconv1d_backward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let n_in = x.len() / cin;
    let n_out = dy.len() / cout;
    for o in 0..cout {
        let dyo = &dy[o * n_out..(o + 1) * n_out];
        db[o] += dyo.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * n_in..(i + 1) * n_in];
            let dxi = &mut dx[i * n_in..(i + 1) * n_in];
            for kk in 0..k {
                let wv = w[(i * cout + o) * k + kk];
                let mut acc = 0.0;
                for t in 0..n_in {
                    let d = dyo[t * s + kk];
                    acc += xi[t] * d;
                    dxi[t] += wv * d;
                }
                dw[(i * cout + o) * k + kk] += acc;
            }
        }
    }
}

/// Pointwise (1x1) convolution: `w` is `[cout][cin]`.
fn pointwise(x: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let n = x.len() / cin;
    let mut y = vec![0.0; cout * n];
    for o in 0..cout {
        let yo = &mut y[o * n..(o + 1) * n];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let wv = w[o * cin + i];
            for (yv, xv) in yo.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                *yv += wv * xv;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn pointwise_backward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let n = x.len() / cin;
    for o in 0..cout {
        let dyo = &dy[o * n..(o + 1) * n];
        db[o] += dyo.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * n..(i + 1) * n];
            dw[o * cin + i] += dyo.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            let wv = w[o * cin + i];
            for (dxv, d) in dx[i * n..(i + 1) * n].iter_mut().zip(dyo) {
                *dxv += wv * d;
            }
        }
    }
}

/// Gated linear unit over channels: first half times sigmoid of second half.
fn glu(u: &[f64], ch: usize) -> Vec<f64> {
    let n = u.len() / (2 * ch);
    let (a, g) = u.split_at(ch * n);
    a.iter().zip(g).map(|(a, g)| a * sigmoid(*g)).collect()
}

fn glu_backward(u: &[f64], ch: usize, dy: &[f64]) -> Vec<f64> {
    let n = u.len() / (2 * ch);
    let (a, g) = u.split_at(ch * n);
    let mut du = vec![0.0; u.len()];
    let (da, dg) = du.split_at_mut(ch * n);
    for j in 0..ch * n {
        let s = sigmoid(g[j]);
        da[j] = dy[j] * s;
        dg[j] = dy[j] * a[j] * s * (1.0 - s);
    }
    du
}

struct EncLevel {
    input: Vec<f64>,
    conv_pre: Vec<f64>,
    act: Vec<f64>,
    glu_pre: Vec<f64>,
}

struct DecLevel {
    input: Vec<f64>,
    glu_pre: Vec<f64>,
    glu_out: Vec<f64>,
    tconv_pre: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ConvCache {
    scale: f64,
    input_len: usize,
    enc: Vec<EncLevel>,
    /// Indexed by level, not by execution order.
    dec: Vec<Option<DecLevel>>,
}

pub fn waveform_forward_cached(
    p: &ParamSet,
    cfg: &ExtractorConfig,
    x: &[f64],
) -> Result<(Vec<f64>, ConvCache)> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let k = cfg.kernel;
    let s = cfg.stride;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let mut cur = vec![0.0; cfg.valid_length(x.len())];
    for (dst, src) in cur.iter_mut().zip(x) {
        *dst = src / (rms + RMS_FLOOR);
    }
    let mut enc = Vec::with_capacity(cfg.depth);
    let mut skips = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let (cin, ch) = cfg.channels(l);
        let w = p.expect(&format!("enc{l}.conv.w"), &[ch, cin, k])?;
        let b = p.expect(&format!("enc{l}.conv.b"), &[ch])?;
        let gw = p.expect(&format!("enc{l}.glu.w"), &[2 * ch, ch])?;
        let gb = p.expect(&format!("enc{l}.glu.b"), &[2 * ch])?;
        let (conv_pre, _) = conv1d(&cur, cin, w, b, ch, k, s);
        let act = silu(&conv_pre);
        let glu_pre = pointwise(&act, ch, gw, gb, 2 * ch);
        let out = glu(&glu_pre, ch);
        enc.push(EncLevel {
            input: std::mem::take(&mut cur),
            conv_pre,
            act,
            glu_pre,
        });
        skips.push(out.clone());
        cur = out;
    }
    let mut dec: Vec<Option<DecLevel>> = (0..cfg.depth).map(|_| None).collect();
    for l in (0..cfg.depth).rev() {
        let (cin, ch) = cfg.channels(l);
        if l + 1 < cfg.depth {
            for (c, sk) in cur.iter_mut().zip(&skips[l]) {
                *c += sk;
            }
        }
        let gw = p.expect(&format!("dec{l}.glu.w"), &[2 * ch, ch])?;
        let gb = p.expect(&format!("dec{l}.glu.b"), &[2 * ch])?;
        let tw = p.expect(&format!("dec{l}.tconv.w"), &[ch, cin, k])?;
        let tb = p.expect(&format!("dec{l}.tconv.b"), &[cin])?;
        let glu_pre = pointwise(&cur, ch, gw, gb, 2 * ch);
        let glu_out = glu(&glu_pre, ch);
        let tconv_pre = tconv1d(&glu_out, ch, tw, tb, cin, k, s);
        let next = if l > 0 {
            silu(&tconv_pre)
        } else {
            tconv_pre.clone()
        };
        dec[l] = Some(DecLevel {
            input: std::mem::take(&mut cur),
            glu_pre,
            glu_out,
            tconv_pre,
        });
        cur = next;
    }
    let out = cur[..x.len()]
        .iter()
        .zip(x)
        .map(|(v, xi)| if cfg.residual { v * rms + xi } else { v * rms })
        .collect();
    Ok((
        out,
        ConvCache {
            scale: rms,
            input_len: x.len(),
            enc,
            dec,
        },
    ))
}

fn grad_slot<'a>(g: &'a mut ParamSet, name: &str) -> Result<&'a mut [f64]> {
    Ok(&mut g.get_mut(name)?.data)
}

/// Accumulates parameter gradients for `d_out` (gradient with respect to the
/// forward output) into `grads`.
pub fn waveform_backward(
    p: &ParamSet,
    cfg: &ExtractorConfig,
    cache: &ConvCache,
    d_out: &[f64],
    grads: &mut ParamSet,
) -> Result<()> {
    if d_out.len() != cache.input_len {
        return Err(Error::LengthMismatch(d_out.len(), cache.input_len));
    }
    let k = cfg.kernel;
    let s = cfg.stride;
    let padded = cache.enc[0].input.len();
    let mut d = vec![0.0; padded];
    for (dst, g) in d.iter_mut().zip(d_out) {
        *dst = g * cache.scale;
    }
    // Decoder levels ran from depth-1 down to 0, so walk them upwards. After
    // level l, `d` is the gradient with respect to that level's input, which is
    // both the output of level l + 1 and (for l < depth - 1) the skip from
    // encoder level l.
    let mut d_skips: Vec<Vec<f64>> = vec![Vec::new(); cfg.depth];
    for l in 0..cfg.depth {
        let lvl = cache.dec[l].as_ref().expect("decoder level cached");
        let (cin, ch) = cfg.channels(l);
        let d_pre = if l > 0 {
            silu_backward(&lvl.tconv_pre, &d)
        } else {
            d
        };
        let tw = p.expect(&format!("dec{l}.tconv.w"), &[ch, cin, k])?;
        let mut d_glu_out = vec![0.0; lvl.glu_out.len()];
        let mut dw = vec![0.0; tw.len()];
        let mut db = vec![0.0; cin];
        tconv1d_backward(
            &lvl.glu_out,
            ch,
            tw,
            cin,
            k,
            s,
            &d_pre,
            &mut dw,
            &mut db,
            &mut d_glu_out,
        );
        add_into(grad_slot(grads, &format!("dec{l}.tconv.w"))?, &dw);
        add_into(grad_slot(grads, &format!("dec{l}.tconv.b"))?, &db);

        let d_glu_pre = glu_backward(&lvl.glu_pre, ch, &d_glu_out);
        let gw = p.expect(&format!("dec{l}.glu.w"), &[2 * ch, ch])?;
        let mut d_in = vec![0.0; lvl.input.len()];
        let mut dw = vec![0.0; gw.len()];
        let mut db = vec![0.0; 2 * ch];
        pointwise_backward(
            &lvl.input,
            ch,
            gw,
            2 * ch,
            &d_glu_pre,
            &mut dw,
            &mut db,
            &mut d_in,
        );
        add_into(grad_slot(grads, &format!("dec{l}.glu.w"))?, &dw);
        add_into(grad_slot(grads, &format!("dec{l}.glu.b"))?, &db);
        d_skips[l] = d_in.clone();
        d = d_in;
    }
    // `d` now holds the gradient with respect to the bottleneck, i.e. the output
    // of the deepest encoder level; d_skips[depth - 1] is the same quantity.
    let mut d_out_enc = d;
    for l in (0..cfg.depth).rev() {
        let lvl = &cache.enc[l];
        let (cin, ch) = cfg.channels(l);
        if l + 1 < cfg.depth {
            add_into(&mut d_out_enc, &d_skips[l]);
        }
        let d_glu_pre = glu_backward(&lvl.glu_pre, ch, &d_out_enc);
        let gw = p.expect(&format!("enc{l}.glu.w"), &[2 * ch, ch])?;
        let mut d_act = vec![0.0; lvl.act.len()];
        let mut dw = vec![0.0; gw.len()];
        let mut db = vec![0.0; 2 * ch];
        pointwise_backward(
            &lvl.act,
            ch,
            gw,
            2 * ch,
            &d_glu_pre,
            &mut dw,
            &mut db,
            &mut d_act,
        );
        add_into(grad_slot(grads, &format!("enc{l}.glu.w"))?, &dw);
        add_into(grad_slot(grads, &format!("enc{l}.glu.b"))?, &db);

        let d_conv_pre = silu_backward(&lvl.conv_pre, &d_act);
        let w = p.expect(&format!("enc{l}.conv.w"), &[ch, cin, k])?;
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; ch];
        let mut d_in = if l > 0 {
            Some(vec![0.0; lvl.input.len()])
        } else {
            None
        };
        conv1d_backward(
            &lvl.input,
            cin,
            w,
            ch,
            k,
            s,
            &d_conv_pre,
            &mut dw,
            &mut db,
            d_in.as_deref_mut(),
        );
        add_into(grad_slot(grads, &format!("enc{l}.conv.w"))?, &dw);
        add_into(grad_slot(grads, &format!("enc{l}.conv.b"))?, &db);
        if let Some(d_in) = d_in {
            d_out_enc = d_in;
        }
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub fn waveform_forward(p: &ParamSet, cfg: &ExtractorConfig, x: &[f64]) -> Result<Vec<f64>> {
    Ok(waveform_forward_cached(p, cfg, x)?.0)
}

/// Estimates the noise component of `noisy`. Output length equals input length.
pub fn extractor_forward(
    p: &ParamSet,
    cfg: &ExtractorConfig,
    noisy: &Waveform,
) -> Result<Waveform> {
    Waveform::new(
        waveform_forward(p, cfg, noisy.samples())?,
        noisy.sample_rate(),
    )
}

/// Estimates the clean speech in `noisy`. Same network as the extractor with
/// its own parameters.
pub fn se_forward(p: &ParamSet, cfg: &ExtractorConfig, noisy: &Waveform) -> Result<Waveform> {
    extractor_forward(p, cfg, noisy)
}

/// Batch-mean training objective of a waveform model over `(input, target)` pairs.
pub struct WaveformObjective<'a> {
    pub config: ExtractorConfig,
    pub loss: &'a MultiResLoss,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Objective for WaveformObjective<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let out = waveform_forward(params, &self.config, x)?;
            total += self.loss.objective(y, &out)?;
        }
        Ok(total / self.inputs.len() as f64)
    }

    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(Error::InvalidConfig("batch inputs/targets mismatch".into()));
        }
        let mut grads = params.zeros_like();
        let mut total = 0.0;
        let scale = 1.0 / self.inputs.len() as f64;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let (out, cache) = waveform_forward_cached(params, &self.config, x)?;
            let (l, mut d_out) = self.loss.objective_and_grad(y, &out)?;
            total += l;
            d_out.iter_mut().for_each(|v| *v *= scale);
            waveform_backward(params, &self.config, &cache, &d_out, &mut grads)?;
        }
        Ok((total * scale, grads))
    }
}
