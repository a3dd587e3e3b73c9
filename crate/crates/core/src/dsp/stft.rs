use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// One STFT resolution: a periodic Hann window of `fft_size` samples advanced by `hop`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        let cfg = Self { fft_size, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "hop {} outside (0, {}]",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples (right-padded to one frame if shorter).
    pub fn frame_count(&self, len: usize) -> usize {
        (len.max(self.fft_size) - self.fft_size) / self.hop + 1
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex one-sided STFT, row-major `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn same_shape(&self, other: &Spectrogram) -> Result<()> {
        if self.frames != other.frames || self.bins != other.bins {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram {}x{} vs {}x{}",
                self.frames, self.bins, other.frames, other.bins
            )));
        }
        Ok(())
    }
}

/// Forward and inverse FFT plans plus the analysis window for one resolution.
#[derive(Clone)]
pub struct StftPlan {
    pub config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: hann_window(config.fft_size),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn forward(&self, x: &[f64]) -> Spectrogram {
        let n = self.config.fft_size;
        let bins = self.config.bins();
        let frames = self.config.frame_count(x.len());
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = x.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(s * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Spectrogram {
            frames,
            bins,
            data,
            config: self.config,
        }
    }

    /// Backpropagates a gradient with respect to the magnitudes of `spec` (computed from a
    /// signal of `len` samples) into that signal. The result is added into `grad`.
    pub(crate) fn magnitude_backward(
        &self,
        spec: &Spectrogram,
        grad_mag: &[f64],
        grad: &mut [f64],
    ) {
        let n = self.config.fft_size;
        let bins = spec.bins;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for t in 0..spec.frames {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let mut any = false;
            for k in 0..bins {
                let g = grad_mag[t * bins + k];
                let z = spec.data[t * bins + k];
                let mag = z.norm();
                if g != 0.0 && mag > 0.0 {
                    buf[k] = z * (g / mag);
                    any = true;
                }
            }
            if !any {
                continue;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.config.hop;
            for i in 0..n {
                if let Some(slot) = grad.get_mut(start + i) {
                    *slot += self.window[i] * buf[i].re;
                }
            }
        }
    }
}

/// Hann-windowed one-sided STFT without centering. Signals shorter than one
/// frame are zero-padded on the right.
pub fn stft(w: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    Ok(StftPlan::new(cfg)?.forward(w.samples()))
}
