use rand::Rng;

use super::Waveform;
use crate::error::{Error, Result};

/// (1/N) sum of squared samples.
pub fn mean_power(w: &Waveform) -> Result<f64> {
    w.ensure_non_empty()?;
    Ok(w.samples().iter().map(|s| s * s).sum::<f64>() / w.len() as f64)
}

/// Crop (or tile, then crop) `noise` to exactly `target_len` samples at a random offset.
pub fn fit_length<R: Rng + ?Sized>(
    noise: &Waveform,
    target_len: usize,
    rng: &mut R,
) -> Result<Waveform> {
    noise.ensure_non_empty()?;
    if target_len == 0 {
        return Err(Error::InvalidConfig(
            "target length must be positive".into(),
        ));
    }
    let n = noise.len();
    let src = noise.samples();
    if n >= target_len {
        let offset = rng.gen_range(0..=n - target_len);
        return Ok(noise.slice(offset, offset + target_len));
    }
    let tiled_len = target_len.div_ceil(n) * n;
    let offset = rng.gen_range(0..=tiled_len - target_len);
    let samples = (0..target_len).map(|i| src[(offset + i) % n]).collect();
    Ok(noise.with_samples(samples))
}

/// A noisy mixture together with the noise exactly as it appears in it.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub noisy: Waveform,
    pub gain: f64,
    /// `gain * fit_length(noise)`, the additive noise component of `noisy`.
    pub noise: Waveform,
}

/// `noisy = speech + g * noise` with `g` chosen so the mean-power SNR equals `snr_db`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    speech: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if speech.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch(
            speech.sample_rate(),
            noise.sample_rate(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr".into()));
    }
    let p_s = mean_power(speech)?;
    if p_s <= 0.0 {
        return Err(Error::Silent("speech"));
    }
    let fitted = fit_length(noise, speech.len(), rng)?;
    let p_n = mean_power(&fitted)?;
    if p_n <= 0.0 {
        return Err(Error::Silent("noise"));
    }
    let gain = (p_s / p_n * 10f64.powf(-snr_db / 10.0)).sqrt();
    let scaled = fitted.scaled(gain);
    let noisy = speech.with_samples(
        speech
            .samples()
            .iter()
            .zip(scaled.samples())
            .map(|(s, n)| s + n)
            .collect(),
    );
    Ok(Mixture {
        noisy,
        gain,
        noise: scaled,
    })
}

/// `10 log10(P_speech / P_noise)`.
pub fn measured_snr_db(speech: &Waveform, noise: &Waveform) -> Result<f64> {
    Ok(10.0 * (mean_power(speech)? / mean_power(noise)?).log10())
}

/// Contiguous excerpt with length uniform in `[min_len, min(max_len, len(w))]` and uniform offset.
pub fn random_segment<R: Rng + ?Sized>(
    w: &Waveform,
    min_len: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Waveform> {
    if min_len == 0 {
        return Err(Error::InvalidConfig(
            "segment min_len must be positive".into(),
        ));
    }
    if min_len > max_len {
        return Err(Error::InvalidConfig(format!(
            "segment min_len {min_len} > max_len {max_len}"
        )));
    }
    if w.len() < min_len {
        return Err(Error::TooShort {
            needed: min_len,
            got: w.len(),
        });
    }
    let len = rng.gen_range(min_len..=max_len.min(w.len()));
    let offset = rng.gen_range(0..=w.len() - len);
    Ok(w.slice(offset, offset + len))
}
