//! Spectral convergence, log-magnitude and multi-resolution STFT losses, with
//! gradients with respect to the estimate.

use serde::{Deserialize, Serialize};

use super::stft::{Spectrogram, StftConfig, StftPlan};
use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiResConfig {
    pub resolutions: Vec<StftConfig>,
    pub log_floor: f64,
}

impl Default for MultiResConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![
                StftConfig {
                    fft_size: 512,
                    hop: 128,
                },
                StftConfig {
                    fft_size: 1024,
                    hop: 256,
                },
                StftConfig {
                    fft_size: 2048,
                    hop: 512,
                },
            ],
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl MultiResConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::InvalidConfig("at least one STFT resolution".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log floor must be positive".into()));
        }
        self.resolutions.iter().try_for_each(StftConfig::validate)
    }
}

/// `|| |Y| - |Yh| ||_F / || |Y| ||_F`.
pub fn spectral_convergence(y: &Spectrogram, yh: &Spectrogram) -> Result<f64> {
    y.same_shape(yh)?;
    sc_from_mags(&y.magnitudes(), &yh.magnitudes())
}

fn sc_from_mags(a: &[f64], b: &[f64]) -> Result<f64> {
    let den = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Mean over time-frequency bins of `|log(|Y| + eps) - log(|Yh| + eps)|`.
pub fn log_magnitude_loss(y: &Spectrogram, yh: &Spectrogram, eps: f64) -> Result<f64> {
    y.same_shape(yh)?;
    Ok(mag_from_mags(&y.magnitudes(), &yh.magnitudes(), eps))
}

fn mag_from_mags(a: &[f64], b: &[f64], eps: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x + eps).ln() - (y + eps).ln()).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// `(1/T) ||y - yh||_1`.
pub fn time_domain_l1(y: &[f64], yh: &[f64]) -> Result<f64> {
    if y.len() != yh.len() {
        return Err(Error::LengthMismatch(y.len(), yh.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    Ok(y.iter().zip(yh).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Precomputed FFT plans for a [`MultiResConfig`]; reuse across training steps.
#[derive(Clone)]
pub struct MultiResLoss {
    plans: Vec<StftPlan>,
    log_floor: f64,
}

impl MultiResLoss {
    pub fn new(cfg: &MultiResConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plans: cfg
                .resolutions
                .iter()
                .map(|&r| StftPlan::new(r))
                .collect::<Result<_>>()?,
            log_floor: cfg.log_floor,
        })
    }

    /// Per-resolution `(spectral_convergence, log_magnitude)` pairs.
    pub fn terms(&self, y: &[f64], yh: &[f64]) -> Result<Vec<(f64, f64)>> {
        if y.len() != yh.len() {
            return Err(Error::LengthMismatch(y.len(), yh.len()));
        }
        self.plans
            .iter()
            .map(|p| {
                let a = p.forward(y).magnitudes();
                let b = p.forward(yh).magnitudes();
                Ok((sc_from_mags(&a, &b)?, mag_from_mags(&a, &b, self.log_floor)))
            })
            .collect()
    }

    pub fn stft_loss(&self, y: &[f64], yh: &[f64]) -> Result<f64> {
        Ok(self.terms(y, yh)?.iter().map(|(sc, mag)| sc + mag).sum())
    }

    pub fn objective(&self, y: &[f64], yh: &[f64]) -> Result<f64> {
        Ok(time_domain_l1(y, yh)? + self.stft_loss(y, yh)?)
    }

    /// Objective value and its gradient with respect to `yh`.
    pub fn objective_and_grad(&self, y: &[f64], yh: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = y.len();
        let mut total = time_domain_l1(y, yh)?;
        let mut grad: Vec<f64> = y
            .iter()
            .zip(yh)
            .map(|(a, b)| sign(b - a) / t as f64)
            .collect();
        let eps = self.log_floor;
        for plan in &self.plans {
            let a = plan.forward(y).magnitudes();
            let spec_h = plan.forward(yh);
            let b = spec_h.magnitudes();
            let den = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if den == 0.0 {
                return Err(Error::ZeroReference);
            }
            let num = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let n_bins = a.len() as f64;
            total += num / den + mag_from_mags(&a, &b, eps);
            let grad_mag: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(&ai, &bi)| {
                    let sc = if num > 0.0 {
                        (bi - ai) / (num * den)
                    } else {
                        0.0
                    };
                    let mag = sign((bi + eps).ln() - (ai + eps).ln()) / (n_bins * (bi + eps));
                    sc + mag
                })
                .collect();
            plan.magnitude_backward(&spec_h, &grad_mag, &mut grad);
        }
        Ok((total, grad))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(y: &Waveform, yh: &Waveform) -> Result<()> {
    if y.len() != yh.len() {
        return Err(Error::LengthMismatch(y.len(), yh.len()));
    }
    Ok(())
}

/// Sum over resolutions of spectral convergence plus log-magnitude loss.
pub fn multi_res_stft_loss(y: &Waveform, yh: &Waveform, cfg: &MultiResConfig) -> Result<f64> {
    check_lengths(y, yh)?;
    MultiResLoss::new(cfg)?.stft_loss(y.samples(), yh.samples())
}

/// Waveform training objective: mean absolute error plus the multi-resolution STFT loss.
pub fn extractor_objective(y: &Waveform, yh: &Waveform, cfg: &MultiResConfig) -> Result<f64> {
    check_lengths(y, yh)?;
    MultiResLoss::new(cfg)?.objective(y.samples(), yh.samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::stft;
    use crate::rng::seeded;
    use rand::Rng;
    use rustfft::num_complex::Complex64;

    fn spec_from_mags(mags: &[f64], frames: usize) -> Spectrogram {
        Spectrogram {
            frames,
            bins: mags.len() / frames,
            data: mags.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
            config: StftConfig {
                fft_size: 2,
                hop: 1,
            },
        }
    }

    fn random_signal(seed: u64, n: usize) -> Vec<f64> {
        let mut r = seeded(seed);
        (0..n).map(|_| r.gen_range(-0.5..0.5)).collect()
    }

    fn wf(v: Vec<f64>) -> Waveform {
        Waveform::from_samples(v).unwrap()
    }

    #[test]
    fn spectral_convergence_hand_cases() {
        let y = spec_from_mags(&[3.0, 4.0], 1);
        assert_eq!(spectral_convergence(&y, &y).unwrap(), 0.0);
        assert_eq!(
            spectral_convergence(&y, &spec_from_mags(&[0.0, 0.0], 1)).unwrap(),
            1.0
        );
        assert!(
            (spectral_convergence(&y, &spec_from_mags(&[3.0, 0.0], 1)).unwrap() - 0.8).abs()
                < 1e-15
        );
        assert!(matches!(
            spectral_convergence(&spec_from_mags(&[0.0, 0.0], 1), &y),
            Err(Error::ZeroReference)
        ));
        assert!(spectral_convergence(&y, &spec_from_mags(&[1.0, 2.0, 3.0, 4.0], 2)).is_err());
    }

    #[test]
    fn log_magnitude_hand_cases() {
        let y = spec_from_mags(&[1.0, 1.0], 1);
        assert_eq!(log_magnitude_loss(&y, &y, 1e-7).unwrap(), 0.0);
        let e2 = spec_from_mags(&[std::f64::consts::E.powi(2), 1.0], 1);
        assert!((log_magnitude_loss(&y, &e2, 1e-300).unwrap() - 1.0).abs() < 1e-12);
        let big = spec_from_mags(&[2.0, 5.0, 7.0], 1);
        let scaled = spec_from_mags(
            &[
                2.0 * std::f64::consts::E,
                5.0 * std::f64::consts::E,
                7.0 * std::f64::consts::E,
            ],
            1,
        );
        assert!((log_magnitude_loss(&big, &scaled, 1e-300).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_signals_give_zero() {
        let y = wf(random_signal(1, 4096));
        let cfg = MultiResConfig::default();
        assert_eq!(multi_res_stft_loss(&y, &y, &cfg).unwrap(), 0.0);
        assert_eq!(extractor_objective(&y, &y, &cfg).unwrap(), 0.0);
        assert!(extractor_objective(&y, &wf(vec![0.0; 10]), &cfg).is_err());
    }

    #[test]
    fn time_term_of_constant_offset() {
        let c = -0.25;
        assert_eq!(time_domain_l1(&[0.0; 100], &[c; 100]).unwrap(), 0.25);
    }

    #[test]
    fn multi_resolution_is_sum_of_single_resolutions() {
        let y = wf(random_signal(2, 5000));
        let yh = wf(random_signal(3, 5000));
        let cfg = MultiResConfig::default();
        let total = multi_res_stft_loss(&y, &yh, &cfg).unwrap();
        let mut by_hand = 0.0;
        for r in &cfg.resolutions {
            let a = stft(&y, *r).unwrap();
            let b = stft(&yh, *r).unwrap();
            by_hand += spectral_convergence(&a, &b).unwrap()
                + log_magnitude_loss(&a, &b, cfg.log_floor).unwrap();
        }
        assert!((total - by_hand).abs() <= 1e-12);

        let single = MultiResConfig {
            resolutions: vec![cfg.resolutions[0]],
            ..cfg.clone()
        };
        let a = stft(&y, cfg.resolutions[0]).unwrap();
        let b = stft(&yh, cfg.resolutions[0]).unwrap();
        let expect =
            spectral_convergence(&a, &b).unwrap() + log_magnitude_loss(&a, &b, 1e-7).unwrap();
        assert!((multi_res_stft_loss(&y, &yh, &single).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_componentwise_oracle() {
        let y = random_signal(4, 3000);
        let yh = random_signal(5, 3000);
        let cfg = MultiResConfig::default();
        let mut l1 = 0.0;
        for i in 0..y.len() {
            l1 += (y[i] - yh[i]).abs();
        }
        l1 /= y.len() as f64;
        let stft_part = multi_res_stft_loss(&wf(y.clone()), &wf(yh.clone()), &cfg).unwrap();
        let got = extractor_objective(&wf(y), &wf(yh), &cfg).unwrap();
        assert!((got - (l1 + stft_part)).abs() <= 1e-10);
    }

    #[test]
    fn sign_flip_symmetry_and_phase_invariance() {
        let y = random_signal(6, 3000);
        let yh = random_signal(7, 3000);
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let cfg = MultiResConfig::default();
        let a = extractor_objective(&wf(y.clone()), &wf(yh.clone()), &cfg).unwrap();
        let b = extractor_objective(&wf(neg(&y)), &wf(neg(&yh)), &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);

        let sy = stft(&wf(y), cfg.resolutions[0]).unwrap();
        let mut sh = stft(&wf(yh), cfg.resolutions[0]).unwrap();
        let before = spectral_convergence(&sy, &sh).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        sh.data.iter_mut().for_each(|c| *c *= rot);
        assert!((spectral_convergence(&sy, &sh).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn losses_are_continuous() {
        let y = random_signal(8, 3000);
        let yh = random_signal(9, 3000);
        let loss = MultiResLoss::new(&MultiResConfig::default()).unwrap();
        let base = loss.objective(&y, &yh).unwrap();
        let mut r = seeded(10);
        let bumped: Vec<f64> = yh.iter().map(|v| v + r.gen_range(-1e-6..1e-6)).collect();
        let moved = loss.objective(&y, &bumped).unwrap();
        assert!((moved - base).abs() < 1e-3);
        assert!(base > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // residuals kept away from the |.| kinks so central differences are valid
        let yh = random_signal(11, 2500);
        let y: Vec<f64> = yh.iter().map(|v| 3.0 * v + 2.0).collect();
        let loss = MultiResLoss::new(&MultiResConfig::default()).unwrap();
        let (_, grad) = loss.objective_and_grad(&y, &yh).unwrap();
        let h = 1e-5;
        for &i in &[0usize, 17, 400, 1023, 1500, 2048, 2499] {
            let mut p = yh.clone();
            p[i] += h;
            let up = loss.objective(&y, &p).unwrap();
            p[i] -= 2.0 * h;
            let down = loss.objective(&y, &p).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
            assert!(rel < 1e-5, "sample {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}
