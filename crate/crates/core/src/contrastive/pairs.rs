use rand::Rng;

use super::ContrastiveConfig;
use crate::audio::{fit_length, mix_at_snr, random_segment, Waveform};
use crate::error::{Error, Result};

/// Two excerpts of the same noise signal, each possibly mixed with speech.
#[derive(Clone, Debug)]
pub struct PretextPair {
    pub x_q: Waveform,
    pub x_k: Waveform,
    pub source_id: String,
    /// SNR of the speech mix applied to each side, if any.
    pub q_mix_snr: Option<f64>,
    pub k_mix_snr: Option<f64>,
}

fn one_side<R: Rng + ?Sized>(
    src: &Waveform,
    speech: &[Waveform],
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<(Waveform, Option<f64>)> {
    let seg = random_segment(src, cfg.segment_min, cfg.segment_max, rng)?;
    if !rng.gen_bool(cfg.speech_mix_prob) {
        return Ok((seg, None));
    }
    if speech.is_empty() {
        return Err(Error::InvalidConfig("speech corpus is empty".into()));
    }
    let utt = &speech[rng.gen_range(0..speech.len())];
    let excerpt = fit_length(utt, seg.len(), rng)?;
    let snr = cfg.mix_snr_levels[rng.gen_range(0..cfg.mix_snr_levels.len())];
    let mix = mix_at_snr(&excerpt, &seg, snr, rng)?;
    Ok((mix.noisy, Some(snr)))
}

/// Draws a query/key pair from `noise`. Noise shorter than `segment_max` is
/// tiled first so segment lengths cover the whole configured range.
pub fn make_pair<R: Rng + ?Sized>(
    noise: &Waveform,
    source_id: &str,
    speech: &[Waveform],
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<PretextPair> {
    noise.ensure_non_empty()?;
    let tiled;
    let src = if noise.len() < cfg.segment_max {
        tiled = fit_length(noise, cfg.segment_max, rng)?;
        &tiled
    } else {
        noise
    };
    let (x_q, q_mix_snr) = one_side(src, speech, cfg, rng)?;
    let (x_k, k_mix_snr) = one_side(src, speech, cfg, rng)?;
    Ok(PretextPair {
        x_q,
        x_k,
        source_id: source_id.to_string(),
        q_mix_snr,
        k_mix_snr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::measured_snr_db;
    use crate::rng::seeded;

    fn wave(seed: u64, n: usize) -> Waveform {
        let mut r = seeded(seed);
        Waveform::from_samples((0..n).map(|_| r.gen_range(-0.3..0.3)).collect()).unwrap()
    }

    fn small_cfg(p: f64) -> ContrastiveConfig {
        ContrastiveConfig {
            speech_mix_prob: p,
            segment_min: 2400,
            segment_max: 8000,
            ..ContrastiveConfig::default()
        }
    }

    fn is_excerpt(seg: &Waveform, src: &Waveform) -> bool {
        let n = src.len();
        (0..n).any(|off| {
            seg.samples()
                .iter()
                .enumerate()
                .all(|(i, v)| *v == src.samples()[(off + i) % n])
        })
    }

    #[test]
    fn pure_noise_pairs_come_from_the_source() {
        let noise = wave(1, 3000);
        let cfg = small_cfg(0.0);
        let mut r = seeded(2);
        for _ in 0..20 {
            let p = make_pair(&noise, "n0", &[], &cfg, &mut r).unwrap();
            for seg in [&p.x_q, &p.x_k] {
                assert!((2400..=8000).contains(&seg.len()));
                assert!(is_excerpt(seg, &noise));
            }
            assert!(p.q_mix_snr.is_none() && p.k_mix_snr.is_none());
        }
    }

    #[test]
    fn always_mixed_pairs_hit_drawn_snr() {
        let noise = wave(3, 9000);
        let speech = vec![wave(4, 5000), wave(5, 12000)];
        let cfg = small_cfg(1.0);
        let mut r = seeded(6);
        for _ in 0..20 {
            // replay the same draws to recover the segment and speech excerpt
            let mut replay = r.clone();
            let p = make_pair(&noise, "n0", &speech, &cfg, &mut r).unwrap();
            let seg = random_segment(&noise, 2400, 8000, &mut replay).unwrap();
            replay.gen_bool(1.0);
            let utt = &speech[replay.gen_range(0..speech.len())];
            let excerpt = fit_length(utt, seg.len(), &mut replay).unwrap();
            let snr = cfg.mix_snr_levels[replay.gen_range(0..cfg.mix_snr_levels.len())];
            assert_eq!(Some(snr), p.q_mix_snr);
            let noise_part: Vec<f64> = p
                .x_q
                .samples()
                .iter()
                .zip(excerpt.samples())
                .map(|(y, s)| y - s)
                .collect();
            let measured =
                measured_snr_db(&excerpt, &Waveform::from_samples(noise_part).unwrap()).unwrap();
            assert!((measured - snr).abs() < 1e-6, "{measured} vs {snr}");
            assert!(p.k_mix_snr.is_some());
        }
    }

    #[test]
    fn mixing_frequency_is_half() {
        let noise = wave(7, 300);
        let speech = vec![wave(8, 400)];
        let cfg = ContrastiveConfig {
            segment_min: 100,
            segment_max: 200,
            encoder: crate::models::EncoderConfig {
                fft_size: 64,
                hop: 32,
                bands: 16,
                ..crate::models::EncoderConfig::small()
            },
            ..ContrastiveConfig::default()
        };
        let mut r = seeded(9);
        let n = 10_000;
        let (mut q, mut k) = (0, 0);
        for _ in 0..n {
            let p = make_pair(&noise, "n", &speech, &cfg, &mut r).unwrap();
            q += p.q_mix_snr.is_some() as usize;
            k += p.k_mix_snr.is_some() as usize;
        }
        for c in [q, k] {
            assert!((c as f64 / n as f64 - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn empty_corpus_errors_when_mixing() {
        let noise = wave(1, 9000);
        let mut r = seeded(0);
        assert!(make_pair(&noise, "n", &[], &small_cfg(1.0), &mut r).is_err());
    }
}
