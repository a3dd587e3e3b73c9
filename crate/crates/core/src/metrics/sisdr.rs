use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Reported value for an exact projection; negated for a zero estimate.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant SDR in dB, capped to `[-100, 100]`.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_sdr_slices(reference.samples(), estimate.samples())
}

pub fn si_sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::ZeroReference);
    }
    let a = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| r * e)
        .sum::<f64>()
        / rr;
    let (mut tt, mut ee) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let t = a * r;
        tt += t * t;
        ee += (e - t) * (e - t);
    }
    if tt == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if ee == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (tt / ee).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}
