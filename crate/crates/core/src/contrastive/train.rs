use rand::seq::index::sample;
use rand::Rng;

use super::nce::{info_nce_with_grad, negative_layout, Negative};
use super::pairs::make_pair;
use super::queue::NegativeQueue;
use super::ContrastiveConfig;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::models::{
    encoder_backward, encoder_forward, encoder_forward_cached, init_encoder_params,
    momentum_update, AdamConfig, AdamState, Embedding, FeatureExtractor, ParamSet,
};

/// Result of [`train_retrieval`].
#[derive(Clone, Debug)]
pub struct RetrievalTraining {
    /// Query-encoder parameters, the ones used for retrieval.
    pub params: ParamSet,
    pub key_params: ParamSet,
    /// Mean batch loss of every step, starting at step 1.
    pub losses: Vec<f64>,
}

/// Trains the query encoder with InfoNCE over in-batch and queued negatives.
/// The key encoder follows by momentum only. Pass `init` to continue from
/// existing parameters; otherwise they are drawn from `rng`.
pub fn train_retrieval<R: Rng + ?Sized>(
    noises: &[(String, Waveform)],
    speech: &[Waveform],
    cfg: &ContrastiveConfig,
    init: Option<ParamSet>,
    rng: &mut R,
) -> Result<RetrievalTraining> {
    cfg.validate()?;
    if noises.len() < 2 {
        return Err(Error::InvalidConfig(
            "contrastive training needs at least two noise signals".into(),
        ));
    }
    if cfg.batch > noises.len() {
        return Err(Error::InvalidConfig(format!(
            "batch {} exceeds the {} available noise sources",
            cfg.batch,
            noises.len()
        )));
    }
    let enc = cfg.encoder;
    let mut theta_q = match init {
        Some(p) => {
            p.check_same_layout(&init_encoder_params(&enc, &mut crate::rng::seeded(0))?)?;
            p
        }
        None => init_encoder_params(&enc, rng)?,
    };
    let mut theta_k = theta_q.clone();
    let mut adam = AdamState::new(&theta_q, AdamConfig::with_lr(cfg.lr));
    let mut queue = NegativeQueue::new(cfg.queue_capacity)?;
    let features = FeatureExtractor::new(&enc)?;
    let b = cfg.batch;
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let picks = sample(rng, noises.len(), b).into_vec();
        let mut queries = Vec::with_capacity(b);
        let mut keys = Vec::with_capacity(b);
        for &i in &picks {
            let (id, noise) = &noises[i];
            let pair = make_pair(noise, id, speech, cfg, rng)?;
            let fq = features.features(pair.x_q.samples())?;
            let fk = features.features(pair.x_k.samples())?;
            queries.push(encoder_forward_cached(&theta_q, &enc, &fq)?);
            keys.push(encoder_forward(&theta_k, &enc, &fk)?);
        }
        let queued: Vec<&Embedding> = queue.iter().collect();
        let mut d_q = vec![vec![0.0; enc.embed_dim]; b];
        let mut loss = 0.0;
        for i in 0..b {
            let layout = negative_layout(step, b, queued.len(), i, cfg.queue_start_step)?;
            let negs: Vec<&Embedding> = layout
                .iter()
                .map(|n| match *n {
                    Negative::Query(j) => &queries[j].0,
                    Negative::Key(j) => &keys[j],
                    Negative::Queued(j) => queued[j],
                })
                .collect();
            let g = info_nce_with_grad(&queries[i].0, &keys[i], &negs, cfg.tau)?;
            loss += g.loss / b as f64;
            for (a, v) in d_q[i].iter_mut().zip(&g.d_q) {
                *a += v / b as f64;
            }
            // negatives produced by the query encoder carry gradient as well
            for (n, w) in layout.iter().zip(&g.neg_weights) {
                if let Negative::Query(j) = *n {
                    let qi = queries[i].0.as_slice();
                    for (a, v) in d_q[j].iter_mut().zip(qi) {
                        *a += w * v / b as f64;
                    }
                }
            }
        }
        let mut grad = theta_q.zeros_like();
        for ((_, cache), d) in queries.iter().zip(&d_q) {
            encoder_backward(&theta_q, &enc, cache, d, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("contrastive loss at step {step}")));
        }
        adam.update(&mut theta_q, &grad)?;
        theta_k = momentum_update(&theta_k, &theta_q, cfg.momentum)?;
        if step >= cfg.queue_start_step {
            for k in keys {
                queue.push(k);
            }
        }
        losses.push(loss);
    }
    Ok(RetrievalTraining {
        params: theta_q,
        key_params: theta_k,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::EncoderConfig;
    use crate::rng::seeded;

    fn tone(f: f64, n: usize, seed: u64) -> Waveform {
        let mut r = seeded(seed);
        Waveform::from_samples(
            (0..n)
                .map(|i| {
                    0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()
                        + r.gen_range(-0.02..0.02)
                })
                .collect(),
        )
        .unwrap()
    }

    fn tiny_cfg(steps: usize) -> ContrastiveConfig {
        ContrastiveConfig {
            batch: 4,
            steps,
            queue_start_step: 3,
            queue_capacity: 16,
            segment_min: 2048,
            segment_max: 4096,
            encoder: EncoderConfig {
                recurrent_layers: 1,
                hidden: 4,
                embed_dim: 8,
                fft_size: 256,
                hop: 128,
                bands: 8,
            },
            ..ContrastiveConfig::default()
        }
    }

    fn pool() -> Vec<(String, Waveform)> {
        (0..6)
            .map(|i| (format!("n{i}"), tone(200.0 + 350.0 * i as f64, 6000, i)))
            .collect()
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let cfg = tiny_cfg(0);
        let out = train_retrieval(&pool(), &[], &cfg, None, &mut seeded(1)).unwrap();
        let init = init_encoder_params(&cfg.encoder, &mut seeded(1)).unwrap();
        assert_eq!(out.params, init);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn deterministic_and_finite() {
        let cfg = tiny_cfg(6);
        let speech = vec![tone(150.0, 5000, 9)];
        let a = train_retrieval(&pool(), &speech, &cfg, None, &mut seeded(2)).unwrap();
        let b = train_retrieval(&pool(), &speech, &cfg, None, &mut seeded(2)).unwrap();
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert_eq!(a.losses, b.losses);
        assert!(a.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
        assert_ne!(a.params, a.key_params);
    }

    #[test]
    fn first_loss_near_uniform_logit_value() {
        let cfg = tiny_cfg(1);
        let speech = vec![tone(150.0, 5000, 9)];
        let out = train_retrieval(&pool(), &speech, &cfg, None, &mut seeded(4)).unwrap();
        let negatives = 2 * (cfg.batch - 1);
        let expected = ((negatives + 1) as f64).ln();
        assert!(
            (out.losses[0] - expected).abs() <= 0.2 * expected,
            "{}",
            out.losses[0]
        );
    }

    #[test]
    fn queue_is_inert_before_switch_over() {
        let speech = vec![tone(150.0, 5000, 9)];
        let with_queue = tiny_cfg(5);
        let without = ContrastiveConfig {
            queue_start_step: 1000,
            queue_capacity: 1,
            ..tiny_cfg(5)
        };
        let a = train_retrieval(&pool(), &speech, &with_queue, None, &mut seeded(3)).unwrap();
        let b = train_retrieval(&pool(), &speech, &without, None, &mut seeded(3)).unwrap();
        let start = with_queue.queue_start_step;
        assert_eq!(a.losses[..start], b.losses[..start]);
        assert_ne!(a.losses[start + 1], b.losses[start + 1]);
    }

    #[test]
    fn rejects_undersized_pools() {
        let cfg = tiny_cfg(1);
        let one = vec![pool().remove(0)];
        assert!(train_retrieval(&one, &[], &cfg, None, &mut seeded(0)).is_err());
        let three: Vec<_> = pool().into_iter().take(3).collect();
        assert!(train_retrieval(&three, &[], &cfg, None, &mut seeded(0)).is_err());
    }
}
