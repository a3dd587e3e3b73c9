use rand::Rng;

use crate::audio::{mix_at_snr, Mixture, Waveform};
use crate::error::{Error, Result};
use crate::metrics::TestItem;

/// SNRs of the target test mixtures.
pub const TEST_SNR_LEVELS: [f64; 4] = [-5.0, 0.0, 5.0, 10.0];

/// The one accessible noisy utterance: `speech` plus the adaptation half of
/// the target noise at 0 dB. `Mixture::noise` is its true noise.
pub fn query_mixture<R: Rng + ?Sized>(
    target_first_half: &Waveform,
    speech: &Waveform,
    rng: &mut R,
) -> Result<Mixture> {
    mix_at_snr(speech, target_first_half, 0.0, rng)
}

/// Every test utterance mixed with the held-out half of the target noise at
/// every level of `snrs`.
pub fn target_test_set<R: Rng + ?Sized>(
    target_second_half: &Waveform,
    test_speech: &[(String, Waveform)],
    condition: &str,
    snrs: &[f64],
    rng: &mut R,
) -> Result<Vec<TestItem>> {
    if test_speech.is_empty() || snrs.is_empty() {
        return Err(Error::InvalidConfig("empty test speech or SNR list".into()));
    }
    let mut items = Vec::with_capacity(test_speech.len() * snrs.len());
    for &snr in snrs {
        for (id, clean) in test_speech {
            let m = mix_at_snr(clean, target_second_half, snr, rng)?;
            items.push(TestItem {
                id: format!("{id}@{snr}"),
                noisy: m.noisy,
                clean: clean.clone(),
                condition: condition.to_string(),
                snr_db: snr,
            });
        }
    }
    Ok(items)
}
