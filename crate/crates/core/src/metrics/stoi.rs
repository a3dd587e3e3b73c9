//! Short-time objective intelligibility with the standard constants: 10 kHz
//! analysis, 256-sample frames, 512-point FFT, 15 third-octave bands from
//! 150 Hz, 30-frame segments, -15 dB clipping bound, 40 dB silence range.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const N: usize = 30;
const BETA: f64 = -15.0;
const DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational polyphase resampling with a Kaiser-windowed sinc low-pass
/// filter, aligned so that output sample `m` sits at input time `m * from / to`.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from, to);
    let (up, down) = ((to / g) as usize, (from / g) as usize);
    let m = up.max(down);
    let half = 10 * m;
    let beta = 5.0;
    let cutoff = 1.0 / m as f64;
    let h: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let n = i as f64 - half as f64;
            let sinc = if n == 0.0 {
                1.0
            } else {
                (PI * cutoff * n).sin() / (PI * cutoff * n)
            };
            let r = n / half as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
            cutoff * sinc * w * up as f64
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|o| {
            // position in the zero-stuffed signal
            let center = (o * down) as isize;
            let mut acc = 0.0;
            let lo = center - half as isize;
            let hi = center + half as isize;
            // only multiples of `up` carry input samples
            let first = lo.div_euclid(up as isize)
                + if lo.rem_euclid(up as isize) == 0 {
                    0
                } else {
                    1
                };
            let mut j = first;
            while j * up as isize <= hi {
                if j >= 0 && (j as usize) < x.len() {
                    let tap = (center - j * up as isize + half as isize) as usize;
                    acc += h[tap] * x[j as usize];
                }
                j += 1;
            }
            acc
        })
        .collect()
}

fn hann_inner(n: usize) -> Vec<f64> {
    // hanning(n + 2)[1:-1]
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = hann_inner(N_FRAME);
    let starts: Vec<usize> = (0..x.len().saturating_sub(N_FRAME)).step_by(hop).collect();
    let energy = |s: &[f64], i: usize| {
        let e: f64 = (0..N_FRAME).map(|k| (w[k] * s[i + k]).powi(2)).sum();
        20.0 * (e.sqrt() + EPS).log10()
    };
    let ex: Vec<f64> = starts.iter().map(|&i| energy(x, i)).collect();
    let max = ex.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&ex)
        .filter(|(_, &e)| e > max - DYN_RANGE)
        .map(|(&i, _)| i)
        .collect();
    let ola = |s: &[f64]| {
        if kept.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (kept.len() - 1) * hop + N_FRAME];
        for (f, &i) in kept.iter().enumerate() {
            for k in 0..N_FRAME {
                out[f * hop + k] += w[k] * s[i + k];
            }
        }
        out
    };
    (ola(x), ola(y))
}

/// Magnitude-squared one-sided spectra of 50%-overlapping Hann frames.
fn power_frames(x: &[f64]) -> Vec<Vec<f64>> {
    let hop = N_FRAME / 2;
    let w = hann_inner(N_FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    (0..x.len().saturating_sub(N_FRAME))
        .step_by(hop)
        .map(|i| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for k in 0..N_FRAME {
                buf[k] = Complex64::new(w[k] * x[i + k], 0.0);
            }
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// `(lo, hi)` FFT-bin ranges of the third-octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins)
        .map(|i| i as f64 * FS as f64 / NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (f[a] - target).powi(2).total_cmp(&(f[b] - target).powi(2)))
            .unwrap()
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn band_envelopes(frames: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            frames
                .iter()
                .map(|p| p[lo..hi].iter().sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn stoi(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    if reference.sample_rate() != estimate.sample_rate() {
        return Err(Error::SampleRateMismatch(
            reference.sample_rate(),
            estimate.sample_rate(),
        ));
    }
    let fs = reference.sample_rate();
    let min_len = (fs as f64 * 0.384).ceil() as usize;
    if reference.len() < min_len {
        return Err(Error::TooShort {
            needed: min_len,
            got: reference.len(),
        });
    }
    if reference.samples().iter().all(|v| *v == 0.0) {
        return Err(Error::Silent("reference"));
    }
    let x = resample(reference.samples(), fs, FS);
    let y = resample(estimate.samples(), fs, FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xt = band_envelopes(&power_frames(&x), &bands);
    let yt = band_envelopes(&power_frames(&y), &bands);
    let frames = xt[0].len();
    if frames < N {
        return Err(Error::TooShort {
            needed: N,
            got: frames,
        });
    }
    let clip = 10f64.powf(-BETA / 20.0);
    let mut total = 0.0;
    let segments = frames - N + 1;
    for m in N..=frames {
        for j in 0..NUM_BANDS {
            let xs = &xt[j][m - N..m];
            let ys = &yt[j][m - N..m];
            let c = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * c).min(xv * (1.0 + clip)))
                .collect();
            let center = |v: &[f64]| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let d: Vec<f64> = v.iter().map(|a| a - mean).collect();
                let n = norm(&d) + EPS;
                d.into_iter().map(|a| a / n).collect::<Vec<_>>()
            };
            let (xn, yn) = (center(xs), center(&yp));
            total += xn.iter().zip(&yn).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (NUM_BANDS * segments) as f64)
}
