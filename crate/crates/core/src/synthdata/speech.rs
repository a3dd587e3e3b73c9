use std::f64::consts::PI;

use rand::Rng;

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::substream;

const FS: f64 = DEFAULT_SAMPLE_RATE as f64;
const LEVEL_DBFS: f64 = -22.0;

/// Resonance weight of harmonic frequency `f` under formants `(center, bandwidth)`.
fn formant_weight(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(j, (c, b))| {
            let d = (f - c) / b;
            (0.5f64).powi(j as i32) / (1.0 + d * d)
        })
        .sum()
}

/// Voiced, syllable-gated harmonic signal standing in for clean speech.
pub fn gen_speech_proxy(seed: u64, duration_s: f64) -> Result<Waveform> {
    if !(duration_s >= 0.5) || !duration_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "speech duration {duration_s} below 0.5 s"
        )));
    }
    let n = (duration_s * FS).round() as usize;
    let mut rng = substream(seed, 7);
    let f_base = rng.gen_range(100.0..220.0);
    let (v1, v2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let syll_rate = rng.gen_range(3.0..5.0);
    let syll_phase = rng.gen_range(0.0..1.0);
    let cycles = (duration_s * syll_rate).ceil() as usize + 2;
    let gates: Vec<f64> = (0..cycles)
        .map(|_| {
            if rng.gen_bool(0.85) {
                rng.gen_range(0.6..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let f_phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let f_rates: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / FS;
        let f0 = (f_base
            * (1.0
                + 0.15 * (2.0 * PI * 0.7 * t + v1).sin()
                + 0.05 * (2.0 * PI * 2.3 * t + v2).sin()))
        .clamp(90.0, 300.0);
        phase += 2.0 * PI * f0 / FS;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let formants = [
            (
                550.0 + 200.0 * (2.0 * PI * f_rates[0] * t + f_phases[0]).sin(),
                120.0,
            ),
            (
                1500.0 + 500.0 * (2.0 * PI * f_rates[1] * t + f_phases[1]).sin(),
                180.0,
            ),
            (
                2600.0 + 200.0 * (2.0 * PI * f_rates[2] * t + f_phases[2]).sin(),
                250.0,
            ),
        ];
        let harmonics = (3800.0 / f0) as usize;
        let mut v = 0.0;
        for k in 1..=harmonics {
            v += formant_weight(k as f64 * f0, &formants) * (k as f64 * phase).sin();
        }
        let pos = syll_rate * t + syll_phase;
        let gate = gates[pos.floor() as usize];
        let env = (PI * pos.fract()).sin().powf(0.7) * gate;
        out.push(v * env + 1e-3 * rng.gen_range(-1.0..1.0));
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let g = 10f64.powf(LEVEL_DBFS / 20.0) / rms;
    let mut samples: Vec<f64> = out.into_iter().map(|v| v * g).collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        samples.iter_mut().for_each(|v| *v *= 0.95 / peak);
    }
    Waveform::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{StftConfig, StftPlan};
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    #[test]
    fn deterministic() {
        let a = gen_speech_proxy(3, 1.0).unwrap();
        assert_eq!(a, gen_speech_proxy(3, 1.0).unwrap());
        assert_ne!(a, gen_speech_proxy(4, 1.0).unwrap());
        assert_eq!(a.len(), 16000);
        assert!(a.samples().iter().all(|v| v.abs() <= 1.0));
        assert!(gen_speech_proxy(0, 0.4).is_err());
    }

    #[test]
    fn energy_mostly_below_4k() {
        for seed in 0..3 {
            let x = gen_speech_proxy(seed, 2.0).unwrap();
            let plan = StftPlan::new(StftConfig::new(512, 256).unwrap()).unwrap();
            let spec = plan.forward(x.samples());
            let (mut lo, mut hi) = (0.0, 0.0);
            for (i, c) in spec.data.iter().enumerate() {
                if (i % spec.bins) * 16000 / 512 < 4000 {
                    lo += c.norm_sqr();
                } else {
                    hi += c.norm_sqr();
                }
            }
            assert!(lo > hi, "seed {seed}");
        }
    }

    #[test]
    fn modulation_peak_is_syllabic() {
        for seed in 0..5 {
            let x = gen_speech_proxy(seed, 4.0).unwrap();
            // 100 Hz frame-energy envelope
            let env: Vec<f64> = x
                .samples()
                .chunks(160)
                .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
                .collect();
            let mean = env.iter().sum::<f64>() / env.len() as f64;
            let n = 1024;
            let mut buf: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new(env.get(i).map_or(0.0, |v| v - mean), 0.0))
                .collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            let hz = |k: usize| k as f64 * 100.0 / n as f64;
            let peak = (1..n / 2)
                .filter(|&k| hz(k) >= 0.5 && hz(k) <= 30.0)
                .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
                .unwrap();
            assert!((2.0..=8.0).contains(&hz(peak)), "seed {seed}: {}", hz(peak));
        }
    }
}
