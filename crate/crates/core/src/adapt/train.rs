use rand::Rng;

use super::sampler::{sample_noise_ref, CollaborativeSampler, NoisePool};
use super::{AdaptConfig, PretrainConfig};
use crate::audio::{fit_length, mix_at_snr, random_segment, Waveform};
use crate::dsp::MultiResLoss;
use crate::error::{Error, Result};
use crate::models::{
    extractor_forward, init_waveform_params, AdamConfig, AdamState, ExtractorConfig, Objective,
    ParamSet, WaveformObjective,
};

/// Runs the noise extractor on the query. Output length equals input length.
pub fn extract_pseudo_noise(
    extractor: &ParamSet,
    cfg: &ExtractorConfig,
    query_noisy: &Waveform,
) -> Result<Waveform> {
    extractor_forward(extractor, cfg, query_noisy)
}

/// One training example: a clean clip, the mixture and the noise as mixed.
struct Example {
    clean: Vec<f64>,
    noisy: Vec<f64>,
    noise: Vec<f64>,
}

fn draw_example<R: Rng + ?Sized>(
    speech: &Waveform,
    noise: &Waveform,
    snr_levels: &[f64],
    clip_len: usize,
    rng: &mut R,
) -> Result<Example> {
    let clean = if speech.len() >= clip_len {
        random_segment(speech, clip_len, clip_len, rng)?
    } else {
        fit_length(speech, clip_len, rng)?
    };
    let snr = snr_levels[rng.gen_range(0..snr_levels.len())];
    let m = mix_at_snr(&clean, noise, snr, rng)?;
    Ok(Example {
        clean: clean.into_samples(),
        noisy: m.noisy.into_samples(),
        noise: m.noise.into_samples(),
    })
}

fn pick<'a, R: Rng + ?Sized>(items: &'a [Waveform], rng: &mut R) -> &'a Waveform {
    &items[rng.gen_range(0..items.len())]
}

struct Trainer<'a> {
    cfg: ExtractorConfig,
    loss: &'a MultiResLoss,
    params: ParamSet,
    adam: AdamState,
}

impl Trainer<'_> {
    fn step(&mut self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<f64> {
        let obj = WaveformObjective {
            config: self.cfg,
            loss: self.loss,
            inputs,
            targets,
        };
        let (loss, grad) = obj.loss_and_grad(&self.params)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        self.adam.update(&mut self.params, &grad)?;
        Ok(loss)
    }
}

/// Pretrained extractor and enhancement model with per-step batch losses.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub extractor: ParamSet,
    pub se: ParamSet,
    pub extractor_losses: Vec<f64>,
    pub se_losses: Vec<f64>,
}

/// Trains the extractor (target: the noise as mixed) and the enhancement
/// model (target: clean speech) on the same mixtures.
pub fn pretrain<R: Rng + ?Sized>(
    speech: &[Waveform],
    noise: &[Waveform],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Pretrained> {
    cfg.validate()?;
    if speech.is_empty() || noise.is_empty() {
        return Err(Error::InvalidConfig(
            "pretraining needs speech and noise signals".into(),
        ));
    }
    let loss = MultiResLoss::new(&cfg.loss)?;
    let ext = init_waveform_params(&cfg.model, rng)?;
    let se = init_waveform_params(&cfg.model, rng)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut extractor = Trainer {
        cfg: cfg.model,
        loss: &loss,
        adam: AdamState::new(&ext, adam),
        params: ext,
    };
    let mut enhancer = Trainer {
        cfg: cfg.model,
        loss: &loss,
        adam: AdamState::new(&se, adam),
        params: se,
    };
    let mut extractor_losses = Vec::with_capacity(cfg.steps);
    let mut se_losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let s = pick(speech, rng);
            let n = pick(noise, rng);
            batch.push(draw_example(s, n, &cfg.snr_levels, cfg.clip_len, rng)?);
        }
        let noisy: Vec<Vec<f64>> = batch.iter().map(|e| e.noisy.clone()).collect();
        let (clean, noise_t): (Vec<_>, Vec<_>) =
            batch.into_iter().map(|e| (e.clean, e.noise)).unzip();
        extractor_losses.push(extractor.step(noisy.clone(), noise_t)?);
        se_losses.push(enhancer.step(noisy, clean)?);
    }
    Ok(Pretrained {
        extractor: extractor.params,
        se: enhancer.params,
        extractor_losses,
        se_losses,
    })
}

#[derive(Clone, Debug)]
pub struct Adapted {
    pub params: ParamSet,
    pub losses: Vec<f64>,
}

/// Fine-tunes `se_init` with the pretraining enhancement loss on mixtures
/// whose noise is drawn afresh from `sampler` for every example.
pub fn adapt<R: Rng + ?Sized>(
    se_init: &ParamSet,
    sampler: &CollaborativeSampler,
    pool: &NoisePool,
    speech: &[Waveform],
    cfg: &AdaptConfig,
    rng: &mut R,
) -> Result<Adapted> {
    cfg.validate()?;
    if speech.is_empty() {
        return Err(Error::InvalidConfig(
            "adaptation needs speech signals".into(),
        ));
    }
    se_init.check_same_layout(&init_waveform_params(
        &cfg.model,
        &mut crate::rng::seeded(0),
    )?)?;
    let loss = MultiResLoss::new(&cfg.loss)?;
    let mut trainer = Trainer {
        cfg: cfg.model,
        loss: &loss,
        adam: AdamState::new(se_init, AdamConfig::with_lr(cfg.lr)),
        params: se_init.clone(),
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch);
        let mut targets = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let s = pick(speech, rng);
            let n = sample_noise_ref(sampler, pool, rng)?;
            let e = draw_example(s, n, &cfg.snr_levels, cfg.clip_len, rng)?;
            inputs.push(e.noisy);
            targets.push(e.clean);
        }
        losses.push(trainer.step(inputs, targets)?);
    }
    Ok(Adapted {
        params: trainer.params,
        losses,
    })
}

/// Batch loss of `params` on an explicit set of pairs, for checking targets.
#[cfg(test)]
fn batch_loss(
    cfg: &ExtractorConfig,
    loss: &MultiResLoss,
    params: &ParamSet,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
) -> f64 {
    let obj = WaveformObjective {
        config: *cfg,
        loss,
        inputs: x,
        targets: y,
    };
    obj.loss(params).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::synthdata::{gen_noise, gen_speech_proxy, NoiseFamily, NoiseFamilySpec};

    fn noise(f: NoiseFamily, seed: u64) -> Waveform {
        gen_noise(&NoiseFamilySpec {
            family: f,
            variant_seed: seed,
            duration_s: 1.0,
            level_dbfs: -26.0,
        })
        .unwrap()
    }

    fn tiny_pretrain(steps: usize) -> PretrainConfig {
        PretrainConfig {
            steps,
            batch: 2,
            clip_len: 4000,
            lr: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_return_initial_params() {
        let speech = vec![gen_speech_proxy(1, 1.0).unwrap()];
        let noises = vec![noise(NoiseFamily::HighpassHiss, 1)];
        let cfg = tiny_pretrain(0);
        let out = pretrain(&speech, &noises, &cfg, &mut seeded(3)).unwrap();
        let mut r = seeded(3);
        assert_eq!(
            out.extractor,
            init_waveform_params(&cfg.model, &mut r).unwrap()
        );
        assert_eq!(out.se, init_waveform_params(&cfg.model, &mut r).unwrap());

        let sampler = CollaborativeSampler::new(Some(noises[0].clone()), vec![], 0.0).unwrap();
        let acfg = AdaptConfig {
            steps: 0,
            ..Default::default()
        };
        let a = adapt(
            &out.se,
            &sampler,
            &NoisePool::default(),
            &speech,
            &acfg,
            &mut seeded(0),
        )
        .unwrap();
        assert_eq!(a.params, out.se);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let speech = vec![gen_speech_proxy(1, 1.0).unwrap()];
        let noises = vec![noise(NoiseFamily::LowpassRumble, 2)];
        let cfg = tiny_pretrain(2);
        let a = pretrain(&speech, &noises, &cfg, &mut seeded(9)).unwrap();
        let b = pretrain(&speech, &noises, &cfg, &mut seeded(9)).unwrap();
        assert_eq!(a.extractor, b.extractor);
        assert_eq!(a.se, b.se);
        assert_eq!(a.se_losses, b.se_losses);
        assert!(pretrain(&[], &noises, &cfg, &mut seeded(9)).is_err());
    }

    #[test]
    fn extractor_target_is_the_mixed_noise() {
        let speech = gen_speech_proxy(4, 1.0).unwrap();
        let n = noise(NoiseFamily::AmBurst, 4);
        let e = draw_example(&speech, &n, &[3.0], 4000, &mut seeded(1)).unwrap();
        for i in 0..e.noisy.len() {
            assert!((e.noisy[i] - e.clean[i] - e.noise[i]).abs() < 1e-15);
        }
        // A model whose output equals g*n has zero loss against that target.
        let loss = MultiResLoss::new(&crate::dsp::MultiResConfig::default()).unwrap();
        assert_eq!(loss.objective(&e.noise, &e.noise).unwrap(), 0.0);
        let measured = crate::audio::measured_snr_db(
            &Waveform::from_samples(e.clean.clone()).unwrap(),
            &Waveform::from_samples(e.noise.clone()).unwrap(),
        )
        .unwrap();
        assert!((measured - 3.0).abs() < 1e-9);
    }

    #[test]
    fn pseudo_noise_shape_and_determinism() {
        let cfg = ExtractorConfig::default();
        let p = init_waveform_params(&cfg, &mut seeded(0)).unwrap();
        let z = Waveform::zeros(3000, 16_000);
        let a = extract_pseudo_noise(&p, &cfg, &z).unwrap();
        assert_eq!(a.len(), 3000);
        assert_eq!(a, extract_pseudo_noise(&p, &cfg, &z).unwrap());
        let q = noise(NoiseFamily::TonalHum, 5);
        assert_eq!(extract_pseudo_noise(&p, &cfg, &q).unwrap().len(), q.len());
    }

    #[test]
    fn adaptation_lowers_loss_on_its_noise() {
        let speech: Vec<_> = (0..3).map(|i| gen_speech_proxy(i, 1.0).unwrap()).collect();
        let n = noise(NoiseFamily::HighpassHiss, 11);
        let model = ExtractorConfig::default();
        let init = init_waveform_params(&model, &mut seeded(2)).unwrap();
        let sampler = CollaborativeSampler::new(Some(n.clone()), vec![], 0.0).unwrap();
        let cfg = AdaptConfig {
            steps: 30,
            batch: 2,
            clip_len: 4000,
            lr: 3e-3,
            ..Default::default()
        };
        let mut r = seeded(77);
        let held: Vec<Example> = (0..4)
            .map(|i| draw_example(&speech[i % 3], &n, &[0.0], 4000, &mut r).unwrap())
            .collect();
        let x: Vec<_> = held.iter().map(|e| e.noisy.clone()).collect();
        let y: Vec<_> = held.iter().map(|e| e.clean.clone()).collect();
        let loss = MultiResLoss::new(&cfg.loss).unwrap();
        let before = batch_loss(&model, &loss, &init, x.clone(), y.clone());
        let out = adapt(
            &init,
            &sampler,
            &NoisePool::default(),
            &speech,
            &cfg,
            &mut seeded(5),
        )
        .unwrap();
        let after = batch_loss(&model, &loss, &out.params, x, y);
        assert!(after < before, "{before} -> {after}");
        assert_eq!(out.losses.len(), 30);
    }
}
