use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::substream;

const FS: f64 = DEFAULT_SAMPLE_RATE as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    LowpassRumble,
    HighpassHiss,
    TonalHum,
    AmBurst,
    ImpulsiveClicks,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 5] = [
        NoiseFamily::LowpassRumble,
        NoiseFamily::HighpassHiss,
        NoiseFamily::TonalHum,
        NoiseFamily::AmBurst,
        NoiseFamily::ImpulsiveClicks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::LowpassRumble => "lowpass_rumble",
            NoiseFamily::HighpassHiss => "highpass_hiss",
            NoiseFamily::TonalHum => "tonal_hum",
            NoiseFamily::AmBurst => "am_burst",
            NoiseFamily::ImpulsiveClicks => "impulsive_clicks",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|f| *f == self).unwrap() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFamilySpec {
    pub family: NoiseFamily,
    pub variant_seed: u64,
    pub duration_s: f64,
    pub level_dbfs: f64,
}

/// Fundamental of the hum family.
pub const HUM_F0: f64 = 120.0;

struct OnePole {
    a: f64,
    y: f64,
}

impl OnePole {
    fn lowpass(fc: f64) -> Self {
        Self {
            a: 1.0 - (-2.0 * PI * fc / FS).exp(),
            y: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        self.y += self.a * (x - self.y);
        self.y
    }
}

/// Cascade of `order` one-pole lowpass sections.
fn lowpass(x: &[f64], fc: f64, order: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for _ in 0..order {
        let mut f = OnePole::lowpass(fc);
        out.iter_mut().for_each(|v| *v = f.step(*v));
    }
    out
}

/// Constant-skirt RBJ band-pass biquad.
fn bandpass(x: &[f64], f0: f64, q: f64) -> Vec<f64> {
    let w = 2.0 * PI * f0 / FS;
    let alpha = w.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn white<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rumble<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let fc = rng.gen_range(80.0..200.0);
    lowpass(&white(n + 2000, rng), fc, 4)[2000..].to_vec()
}

fn hiss<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let fc = rng.gen_range(2000.0..4000.0);
    let x = white(n + 2000, rng);
    let low = lowpass(&x, fc, 3);
    x.iter().zip(&low).skip(2000).map(|(a, b)| a - b).collect()
}

fn hum<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let harmonics = 8;
    let tilt = rng.gen_range(0.5..1.5);
    let amps: Vec<f64> = (1..=harmonics)
        .map(|k| rng.gen_range(0.5..1.0) / (k as f64).powf(tilt))
        .collect();
    let phases: Vec<f64> = (0..harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let floor = lowpass(&white(n, rng), 1000.0, 2);
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            let tone: f64 = (0..harmonics)
                .map(|k| amps[k] * (2.0 * PI * HUM_F0 * (k + 1) as f64 * t + phases[k]).sin())
                .sum();
            tone + 0.05 * floor[i]
        })
        .collect()
}

fn burst<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let f0 = rng.gen_range(600.0..1500.0);
    let rate = rng.gen_range(1.0..4.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let band = bandpass(&white(n + 2000, rng), f0, 1.5);
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            let m = 0.5 + 0.5 * (2.0 * PI * rate * t + phase).sin();
            band[i + 2000] * (0.05 + m * m)
        })
        .collect()
}

fn clicks<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let rate = rng.gen_range(20.0..50.0);
    let decay = rng.gen_range(0.002..0.006) * FS;
    let mut out = lowpass(&white(n, rng), 3000.0, 1)
        .into_iter()
        .map(|v| 0.03 * v)
        .collect::<Vec<_>>();
    let mut t = 0.0;
    loop {
        // exponential inter-arrival times make the click train Poisson
        t += -(1.0 - rng.gen::<f64>()).ln() / rate * FS;
        let start = t as usize;
        if start >= n {
            break;
        }
        let amp = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let len = (6.0 * decay) as usize;
        for j in 0..len.min(n - start) {
            out[start + j] += amp * (-(j as f64) / decay).exp() * rng.gen_range(-1.0..1.0);
        }
    }
    out
}

/// Deterministic noise of the given family, scaled to `level_dbfs` RMS.
pub fn gen_noise(spec: &NoiseFamilySpec) -> Result<Waveform> {
    if !(spec.duration_s > 0.0) || !spec.duration_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "duration {} must be positive",
            spec.duration_s
        )));
    }
    if !spec.level_dbfs.is_finite() || spec.level_dbfs > 0.0 {
        return Err(Error::InvalidConfig(format!(
            "level {} dBFS must be finite and <= 0",
            spec.level_dbfs
        )));
    }
    let n = ((spec.duration_s * FS).round() as usize).max(1);
    let mut rng = substream(spec.variant_seed, 100 + spec.family.index());
    let raw = match spec.family {
        NoiseFamily::LowpassRumble => rumble(n, &mut rng),
        NoiseFamily::HighpassHiss => hiss(n, &mut rng),
        NoiseFamily::TonalHum => hum(n, &mut rng),
        NoiseFamily::AmBurst => burst(n, &mut rng),
        NoiseFamily::ImpulsiveClicks => clicks(n, &mut rng),
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::Silent("generated noise"));
    }
    let g = 10f64.powf(spec.level_dbfs / 20.0) / rms;
    let samples: Vec<f64> = raw.iter().map(|v| v * g).collect();
    if samples.iter().any(|v| v.abs() > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level {} dBFS clips for {}",
            spec.level_dbfs,
            spec.family.name()
        )));
    }
    Waveform::from_samples(samples)
}

#[cfg(test)]
pub(crate) fn spectral_centroid(x: &[f64]) -> f64 {
    use crate::dsp::{StftConfig, StftPlan};
    let plan = StftPlan::new(StftConfig::new(1024, 512).unwrap()).unwrap();
    let spec = plan.forward(x);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, c) in spec.data.iter().enumerate() {
        let k = (i % spec.bins) as f64;
        let p = c.norm_sqr();
        num += k * FS / 1024.0 * p;
        den += p;
    }
    num / den
}
