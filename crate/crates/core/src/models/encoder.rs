//! Retrieval encoder: pooled log-magnitude STFT frames, a stack of
//! bidirectional LSTM layers, temporal mean-pooling, an affine projection and
//! L2 normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::audio::Waveform;
use crate::dsp::{StftConfig, StftPlan};
use crate::error::{Error, Result};

const MAG_FLOOR: f64 = 1e-4;
const FEATURE_SCALE: f64 = 0.25;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub recurrent_layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub fft_size: usize,
    pub hop: usize,
    /// Log-spaced frequency bands the magnitude bins are averaged into.
    /// `fft_size / 2 + 1` keeps every bin.
    pub bands: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            recurrent_layers: 2,
            hidden: 64,
            embed_dim: 128,
            fft_size: 512,
            hop: 128,
            bands: 257,
        }
    }
}

impl EncoderConfig {
    /// A reduced encoder sized for single-core training runs.
    pub fn small() -> Self {
        Self {
            recurrent_layers: 2,
            hidden: 16,
            embed_dim: 32,
            fft_size: 1024,
            hop: 512,
            bands: 32,
        }
    }

    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.fft_size, self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        let stft = self.stft()?;
        if self.embed_dim < 8 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} below 8",
                self.embed_dim
            )));
        }
        if self.recurrent_layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "recurrent_layers and hidden must be positive".into(),
            ));
        }
        if self.bands == 0 || self.bands > stft.bins() {
            return Err(Error::InvalidConfig(format!(
                "bands {} outside [1, {}]",
                self.bands,
                stft.bins()
            )));
        }
        band_edges(stft.bins(), self.bands).map(|_| ())
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.bands
        } else {
            2 * self.hidden
        }
    }
}

/// Band boundaries `[e_0 = 0, ..., e_B = bins]`, roughly log-spaced and
/// strictly increasing.
fn band_edges(bins: usize, bands: usize) -> Result<Vec<usize>> {
    if bands == bins {
        return Ok((0..=bins).collect());
    }
    let mut edges = vec![0usize];
    for k in 1..bands {
        let e = (bins as f64).powf(k as f64 / bands as f64).round() as usize;
        edges.push(e.max(edges[k - 1] + 1));
    }
    if *edges.last().unwrap() >= bins {
        return Err(Error::InvalidConfig(format!(
            "cannot split {bins} bins into {bands} bands"
        )));
    }
    edges.push(bins);
    Ok(edges)
}

/// Unit-norm embedding vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f64>,
}

impl Embedding {
    /// Wraps an already normalized vector; fails if its norm is off by more
    /// than [`UNIT_NORM_TOLERANCE`].
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let norm = l2(&vector);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { vector })
    }

    pub fn normalize(vector: Vec<f64>) -> Result<Self> {
        let norm = l2(&vector);
        if !norm.is_finite() {
            return Err(Error::NonFinite("embedding".into()));
        }
        if norm == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Ok(Self {
            vector: vector.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.vector, &other.vector)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product with four interleaved partial sums, so it vectorizes while
/// keeping a fixed summation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-major `frames x dim` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

/// Precomputed STFT plan and band layout for an encoder.
#[derive(Clone)]
pub struct FeatureExtractor {
    cfg: EncoderConfig,
    plan: StftPlan,
    edges: Vec<usize>,
}

impl FeatureExtractor {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let stft = cfg.stft()?;
        Ok(Self {
            cfg: *cfg,
            plan: StftPlan::new(stft)?,
            edges: band_edges(stft.bins(), cfg.bands)?,
        })
    }

    /// Band-pooled, compressed log-magnitude frames.
    pub fn features(&self, x: &[f64]) -> Result<Features> {
        if x.len() < self.cfg.fft_size {
            return Err(Error::TooShort {
                needed: self.cfg.fft_size,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let spec = self.plan.forward(x);
        let bands = self.cfg.bands;
        let mut data = Vec::with_capacity(spec.frames * bands);
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            for b in 0..bands {
                let (lo, hi) = (self.edges[b], self.edges[b + 1]);
                let mag = frame[lo..hi]
                    .iter()
                    .map(|c| c.norm_sqr().sqrt())
                    .sum::<f64>()
                    / (hi - lo) as f64;
                data.push((mag + MAG_FLOOR).ln() * FEATURE_SCALE);
            }
        }
        Ok(Features {
            frames: spec.frames,
            dim: bands,
            data,
        })
    }
}

pub fn frame_features(cfg: &EncoderConfig, x: &[f64]) -> Result<Features> {
    FeatureExtractor::new(cfg)?.features(x)
}

fn lstm_names(l: usize, dir: usize) -> [String; 3] {
    let d = if dir == 0 { "fwd" } else { "bwd" };
    [
        format!("lstm{l}.{d}.w_ih"),
        format!("lstm{l}.{d}.w_hh"),
        format!("lstm{l}.{d}.b"),
    ]
}

pub fn init_encoder_params<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<ParamSet> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut p = ParamSet::new();
    for l in 0..cfg.recurrent_layers {
        let input = cfg.layer_input(l);
        for dir in 0..2 {
            let [w_ih, w_hh, b] = lstm_names(l, dir);
            p.insert_uniform(&w_ih, &[4 * h, input], 1.0 / (input as f64).sqrt(), rng)?;
            p.insert_uniform(&w_hh, &[4 * h, h], 1.0 / (h as f64).sqrt(), rng)?;
            p.insert_uniform(&b, &[4 * h], 1.0 / (h as f64).sqrt(), rng)?;
        }
    }
    let bound = 1.0 / ((2 * h) as f64).sqrt();
    p.insert_uniform("proj.w", &[cfg.embed_dim, 2 * h], bound, rng)?;
    p.insert_uniform("proj.b", &[cfg.embed_dim], bound, rng)?;
    Ok(p)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations of one LSTM direction, in processing order.
struct DirCache {
    /// gates `[i, f, g, o]` after their nonlinearities, `T x 4H`
    gates: Vec<f64>,
    /// cell state, `T x H`
    cell: Vec<f64>,
    /// hidden state, `T x H`
    hidden: Vec<f64>,
}

/// Runs one direction over `x` (`T x input`, already in processing order).
fn lstm_dir_forward(
    w_ih: &[f64],
    w_hh: &[f64],
    b: &[f64],
    x: &[f64],
    t_len: usize,
    input: usize,
    h: usize,
) -> DirCache {
    let g4 = 4 * h;
    let mut cache = DirCache {
        gates: vec![0.0; t_len * g4],
        cell: vec![0.0; t_len * h],
        hidden: vec![0.0; t_len * h],
    };
    let mut z = vec![0.0; g4];
    let zeros = vec![0.0; h];
    for t in 0..t_len {
        let xt = &x[t * input..(t + 1) * input];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (
                &cache.hidden[(t - 1) * h..t * h],
                &cache.cell[(t - 1) * h..t * h],
            )
        };
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = b[r]
                + dot(&w_ih[r * input..(r + 1) * input], xt)
                + dot(&w_hh[r * h..(r + 1) * h], h_prev);
        }
        let mut c_new = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        let gates = &mut cache.gates[t * g4..(t + 1) * g4];
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            gates[j] = i;
            gates[h + j] = f;
            gates[2 * h + j] = g;
            gates[3 * h + j] = o;
            c_new[j] = f * c_prev[j] + i * g;
            h_new[j] = o * c_new[j].tanh();
        }
        cache.cell[t * h..(t + 1) * h].copy_from_slice(&c_new);
        cache.hidden[t * h..(t + 1) * h].copy_from_slice(&h_new);
    }
    cache
}

/// Backpropagation through time for one direction. `d_hidden` is the external
/// gradient on each hidden state (processing order). Parameter gradients are
/// accumulated; the input gradient (processing order) is returned.
#[allow(clippy::too_many_arguments)]
fn lstm_dir_backward(
    w_ih: &[f64],
    w_hh: &[f64],
    x: &[f64],
    cache: &DirCache,
    d_hidden: &[f64],
    t_len: usize,
    input: usize,
    h: usize,
    g_ih: &mut [f64],
    g_hh: &mut [f64],
    g_b: &mut [f64],
) -> Vec<f64> {
    let g4 = 4 * h;
    let mut dx = vec![0.0; t_len * input];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    for t in (0..t_len).rev() {
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let c = &cache.cell[t * h..(t + 1) * h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c_prev = if t == 0 {
                0.0
            } else {
                cache.cell[(t - 1) * h + j]
            };
            let tc = c[j].tanh();
            let dh = d_hidden[t * h + j] + dh_next[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let xt = &x[t * input..(t + 1) * input];
        let dxt = &mut dx[t * input..(t + 1) * input];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..g4 {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            g_b[r] += d;
            let wi = &w_ih[r * input..(r + 1) * input];
            let gi = &mut g_ih[r * input..(r + 1) * input];
            for k in 0..input {
                gi[k] += d * xt[k];
                dxt[k] += d * wi[k];
            }
            let wh = &w_hh[r * h..(r + 1) * h];
            let gh = &mut g_hh[r * h..(r + 1) * h];
            if t > 0 {
                let h_prev = &cache.hidden[(t - 1) * h..t * h];
                for k in 0..h {
                    gh[k] += d * h_prev[k];
                }
            }
            for k in 0..h {
                dh_next[k] += d * wh[k];
            }
        }
    }
    dx
}

/// Reverses the row order of a `T x width` matrix.
fn reverse_rows(x: &[f64], t_len: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for t in (0..t_len).rev() {
        out.extend_from_slice(&x[t * width..(t + 1) * width]);
    }
    out
}

struct LayerCache {
    input: Vec<f64>,
    input_rev: Vec<f64>,
    dirs: [DirCache; 2],
}

/// Activations retained by [`encoder_forward_cached`] for the backward pass.
pub struct EncoderCache {
    frames: usize,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    raw: Vec<f64>,
    norm: f64,
}

pub fn encoder_forward_cached(
    p: &ParamSet,
    cfg: &EncoderConfig,
    feats: &Features,
) -> Result<(Embedding, EncoderCache)> {
    cfg.validate()?;
    if feats.dim != cfg.bands {
        return Err(Error::ShapeMismatch(format!(
            "feature dim {} vs {} bands",
            feats.dim, cfg.bands
        )));
    }
    if feats.frames == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let (t_len, h) = (feats.frames, cfg.hidden);
    let mut x = feats.data.clone();
    let mut layers = Vec::with_capacity(cfg.recurrent_layers);
    for l in 0..cfg.recurrent_layers {
        let input = cfg.layer_input(l);
        let x_rev = reverse_rows(&x, t_len, input);
        let run = |dir: usize, xs: &[f64]| -> Result<DirCache> {
            let [w_ih, w_hh, b] = lstm_names(l, dir);
            Ok(lstm_dir_forward(
                p.expect(&w_ih, &[4 * h, input])?,
                p.expect(&w_hh, &[4 * h, h])?,
                p.expect(&b, &[4 * h])?,
                xs,
                t_len,
                input,
                h,
            ))
        };
        let fwd = run(0, &x)?;
        let bwd = run(1, &x_rev)?;
        let mut out = Vec::with_capacity(t_len * 2 * h);
        for t in 0..t_len {
            out.extend_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
            let tr = t_len - 1 - t;
            out.extend_from_slice(&bwd.hidden[tr * h..(tr + 1) * h]);
        }
        layers.push(LayerCache {
            input: x,
            input_rev: x_rev,
            dirs: [fwd, bwd],
        });
        x = out;
    }
    let mut pooled = vec![0.0; 2 * h];
    for t in 0..t_len {
        for (acc, v) in pooled.iter_mut().zip(&x[t * 2 * h..(t + 1) * 2 * h]) {
            *acc += v;
        }
    }
    pooled.iter_mut().for_each(|v| *v /= t_len as f64);
    let w = p.expect("proj.w", &[cfg.embed_dim, 2 * h])?;
    let b = p.expect("proj.b", &[cfg.embed_dim])?;
    let raw: Vec<f64> = (0..cfg.embed_dim)
        .map(|r| b[r] + dot(&w[r * 2 * h..(r + 1) * 2 * h], &pooled))
        .collect();
    let norm = l2(&raw);
    let emb = Embedding::normalize(raw.clone())?;
    Ok((
        emb,
        EncoderCache {
            frames: t_len,
            layers,
            pooled,
            raw,
            norm,
        },
    ))
}

/// Accumulates into `grads` the gradient of a loss whose gradient with
/// respect to the unit-norm embedding is `d_emb`.
pub fn encoder_backward(
    p: &ParamSet,
    cfg: &EncoderConfig,
    cache: &EncoderCache,
    d_emb: &[f64],
    grads: &mut ParamSet,
) -> Result<()> {
    let (t_len, h, d) = (cache.frames, cfg.hidden, cfg.embed_dim);
    if d_emb.len() != d {
        return Err(Error::LengthMismatch(d_emb.len(), d));
    }
    let y: Vec<f64> = cache.raw.iter().map(|v| v / cache.norm).collect();
    let yd = dot(&y, d_emb);
    let d_raw: Vec<f64> = d_emb
        .iter()
        .zip(&y)
        .map(|(g, yi)| (g - yi * yd) / cache.norm)
        .collect();

    let w = p.expect("proj.w", &[d, 2 * h])?.to_vec();
    let mut d_pooled = vec![0.0; 2 * h];
    {
        let gw = &mut grads.get_mut("proj.w")?.data;
        for r in 0..d {
            for k in 0..2 * h {
                gw[r * 2 * h + k] += d_raw[r] * cache.pooled[k];
                d_pooled[k] += d_raw[r] * w[r * 2 * h + k];
            }
        }
    }
    {
        let gb = &mut grads.get_mut("proj.b")?.data;
        for r in 0..d {
            gb[r] += d_raw[r];
        }
    }

    // mean-pool spreads the gradient evenly over frames
    let mut d_out: Vec<f64> = (0..t_len)
        .flat_map(|_| d_pooled.iter().map(|v| v / t_len as f64))
        .collect();
    for l in (0..cfg.recurrent_layers).rev() {
        let input = cfg.layer_input(l);
        let layer = &cache.layers[l];
        let mut d_fwd = vec![0.0; t_len * h];
        let mut d_bwd = vec![0.0; t_len * h];
        for t in 0..t_len {
            let row = &d_out[t * 2 * h..(t + 1) * 2 * h];
            d_fwd[t * h..(t + 1) * h].copy_from_slice(&row[..h]);
            let tr = t_len - 1 - t;
            d_bwd[tr * h..(tr + 1) * h].copy_from_slice(&row[h..]);
        }
        let mut d_in = vec![0.0; t_len * input];
        for (dir, d_hidden) in [(0usize, &d_fwd), (1, &d_bwd)] {
            let [n_ih, n_hh, n_b] = lstm_names(l, dir);
            let w_ih = p.expect(&n_ih, &[4 * h, input])?;
            let w_hh = p.expect(&n_hh, &[4 * h, h])?;
            let mut g_ih = std::mem::take(&mut grads.get_mut(&n_ih)?.data);
            let mut g_hh = std::mem::take(&mut grads.get_mut(&n_hh)?.data);
            let mut g_b = std::mem::take(&mut grads.get_mut(&n_b)?.data);
            let xs = if dir == 0 {
                &layer.input
            } else {
                &layer.input_rev
            };
            let dx = lstm_dir_backward(
                w_ih,
                w_hh,
                xs,
                &layer.dirs[dir],
                d_hidden,
                t_len,
                input,
                h,
                &mut g_ih,
                &mut g_hh,
                &mut g_b,
            );
            grads.get_mut(&n_ih)?.data = g_ih;
            grads.get_mut(&n_hh)?.data = g_hh;
            grads.get_mut(&n_b)?.data = g_b;
            for t in 0..t_len {
                let src_t = if dir == 0 { t } else { t_len - 1 - t };
                let src = &dx[src_t * input..(src_t + 1) * input];
                for (a, v) in d_in[t * input..(t + 1) * input].iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
        d_out = d_in;
    }
    Ok(())
}

pub fn encoder_forward(p: &ParamSet, cfg: &EncoderConfig, feats: &Features) -> Result<Embedding> {
    Ok(encoder_forward_cached(p, cfg, feats)?.0)
}

pub fn retrieval_embed(p: &ParamSet, cfg: &EncoderConfig, w: &Waveform) -> Result<Embedding> {
    let feats = frame_features(cfg, w.samples())?;
    encoder_forward(p, cfg, &feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::optim::{central_difference, relative_error, Objective};
    use crate::rng::seeded;
    use rand::Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            recurrent_layers: 2,
            hidden: 4,
            embed_dim: 8,
            fft_size: 64,
            hop: 32,
            bands: 6,
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut r = seeded(seed);
        (0..n).map(|_| r.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn band_edges_are_increasing() {
        for (bins, bands) in [(257, 32), (513, 32), (33, 6), (257, 257), (9, 8)] {
            let e = band_edges(bins, bands).unwrap();
            assert_eq!(e.len(), bands + 1);
            assert_eq!((e[0], e[bands]), (0, bins));
            assert!(e.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(EncoderConfig {
            embed_dim: 4,
            ..EncoderConfig::default()
        }
        .validate()
        .is_err());
        EncoderConfig::default().validate().unwrap();
        EncoderConfig::small().validate().unwrap();
    }

    #[test]
    fn unit_norm_and_determinism() {
        let cfg = EncoderConfig::small();
        let p = init_encoder_params(&cfg, &mut seeded(1)).unwrap();
        for seed in 0..5 {
            let w = Waveform::from_samples(noise(seed, 5000 + 777 * seed as usize)).unwrap();
            let a = retrieval_embed(&p, &cfg, &w).unwrap();
            let norm = l2(a.as_slice());
            assert!((norm - 1.0).abs() <= 1e-6);
            assert_eq!(a, retrieval_embed(&p, &cfg, &w).unwrap());
        }
        let short = Waveform::from_samples(vec![0.1; 100]).unwrap();
        assert!(matches!(
            retrieval_embed(&p, &cfg, &short),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn embedding_constructor_checks_norm() {
        assert!(Embedding::new(vec![1.0, 0.0]).is_ok());
        assert!(matches!(
            Embedding::new(vec![1.0, 1.0]),
            Err(Error::NotNormalized(_))
        ));
        assert!(Embedding::normalize(vec![0.0, 0.0]).is_err());
        let e = Embedding::normalize(vec![3.0, 4.0]).unwrap();
        assert!((e.as_slice()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn half_scale_copy_regression() {
        let cfg = EncoderConfig::small();
        let p = init_encoder_params(&cfg, &mut seeded(5)).unwrap();
        let x = noise(11, 16000);
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let a = retrieval_embed(&p, &cfg, &Waveform::from_samples(x).unwrap()).unwrap();
        let b = retrieval_embed(&p, &cfg, &Waveform::from_samples(half).unwrap()).unwrap();
        let cos = a.dot(&b);
        assert!(cos < 1.0 - 1e-9, "scaling must change the embedding");
        assert!(cos > 0.9, "cosine {cos}");
        assert!((cos - HALF_SCALE_COSINE).abs() < 1e-9, "cosine {cos:.15}");
    }

    // recorded from a fixed-seed run
    const HALF_SCALE_COSINE: f64 = 0.998436930700242;

    struct Projection<'a> {
        cfg: EncoderConfig,
        feats: Vec<Features>,
        weights: &'a [Vec<f64>],
    }

    impl Objective for Projection<'_> {
        fn loss(&self, p: &ParamSet) -> Result<f64> {
            let mut total = 0.0;
            for (f, c) in self.feats.iter().zip(self.weights) {
                total += dot(encoder_forward(p, &self.cfg, f)?.as_slice(), c);
            }
            Ok(total)
        }

        fn loss_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet)> {
            let mut g = p.zeros_like();
            let mut total = 0.0;
            for (f, c) in self.feats.iter().zip(self.weights) {
                let (e, cache) = encoder_forward_cached(p, &self.cfg, f)?;
                total += dot(e.as_slice(), c);
                encoder_backward(p, &self.cfg, &cache, c, &mut g)?;
            }
            Ok((total, g))
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = tiny();
        let p = init_encoder_params(&cfg, &mut seeded(3)).unwrap();
        let feats: Vec<Features> = (0..2)
            .map(|s| frame_features(&cfg, &noise(20 + s, 64 + 32 * 7)).unwrap())
            .collect();
        let mut r = seeded(4);
        let weights: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..cfg.embed_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let obj = Projection {
            cfg,
            feats,
            weights: &weights,
        };
        let (_, g) = obj.loss_and_grad(&p).unwrap();
        for flat in 0..p.total_count() {
            let fd = central_difference(&obj, &p, flat, 1e-4).unwrap();
            let (name, idx) = p.flat_get(flat).unwrap();
            let an = g.get(name).unwrap().data[idx];
            assert!(
                relative_error(fd, an, 1e-6) <= 1e-4,
                "{name}[{idx}]: fd {fd} analytic {an}"
            );
        }
    }
}
