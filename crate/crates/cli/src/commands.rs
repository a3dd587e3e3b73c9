use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use nastar::adapt::{
    nastar_pipeline, pretrain, query_mixture, target_test_set, AblationMode, Extractor,
    NoisePool, PipelineConfig, PipelineInputs, Retriever,
};
use nastar::audio::{load_wav, read_manifest, save_wav, Waveform};
use nastar::contrastive::train_retrieval;
use nastar::metrics::{
    compare_runs, evaluate, evaluate_with, load_test_set, write_test_set, CompareOptions,
    MetricReport, PairLevel,
};
use nastar::models::{retrieval_embed, EncoderConfig, ExtractorConfig};
use nastar::retrieval::{
    build_index_from_manifest, encoder_fingerprint, top_k, EmbeddingIndex, RelevantCohort,
};
use nastar::rng::{seeded, substream};
use nastar::synthdata::{gen_corpus, target_id, NoiseFamily};

use crate::config::ExperimentConfig;
use crate::run::{
    default_out, load_model, parent_dir, read_json, record_for_file, save_model, write_json,
    OutputLock, RunRecord,
};
use crate::{Command, Common, Level, Mode};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData {
            out,
            families,
            variants,
            speech_count,
            test_speech_count,
            common,
        } => {
            let mut cfg = load(&common)?;
            cfg.corpus.seed = cfg.seed;
            set(&mut cfg.corpus.families, families);
            set(&mut cfg.corpus.variants_per_family, variants);
            set(&mut cfg.corpus.speech_count, speech_count);
            set(&mut cfg.corpus.test_speech_count, test_speech_count);
            synth_data(&cfg, &out.unwrap_or_else(|| default_out("synth-data", None)))
        }
        Command::Pretrain {
            speech,
            noise,
            exclude_family,
            out,
            schedule,
            common,
        } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.pretrain.steps, schedule.steps);
            set(&mut cfg.pretrain.lr, schedule.lr);
            set(&mut cfg.pretrain.batch, schedule.batch);
            let out = out.unwrap_or_else(|| default_out("pretrain", None));
            pretrain_cmd(&cfg, &speech, &noise, &exclude_family, &out)
        }
        Command::TrainRetrieval {
            noise,
            speech,
            out,
            schedule,
            common,
        } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.contrastive.steps, schedule.steps);
            set(&mut cfg.contrastive.lr, schedule.lr);
            set(&mut cfg.contrastive.batch, schedule.batch);
            let out = out.unwrap_or_else(|| default_out("train-retrieval", None));
            train_retrieval_cmd(&cfg, &noise, &speech, &out)
        }
        Command::BuildIndex {
            noise,
            encoder,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let out = out.unwrap_or_else(|| parent_dir(&encoder).join("noise.idx"));
            build_index_cmd(&cfg, &noise, &encoder, &out)
        }
        Command::ExtractNoise {
            extractor,
            query,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let out = out.unwrap_or_else(|| default_out("extract-noise", Some("pseudo_noise.wav")));
            extract_noise_cmd(&cfg, &extractor, &query, &out)
        }
        Command::Retrieve {
            query,
            index,
            encoder,
            k,
            out,
            common,
        } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.k, k);
            let encoder = encoder.unwrap_or_else(|| parent_dir(&index).join("encoder.ckpt"));
            let out = out.unwrap_or_else(|| default_out("retrieve", Some("cohort.json")));
            retrieve_cmd(&cfg, &query, &index, &encoder, &out)
        }
        Command::Adapt {
            mode,
            se,
            extractor,
            encoder,
            index,
            noise,
            speech,
            query,
            reference_noise,
            alpha,
            k,
            out,
            schedule,
            common,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = mode {
                cfg.mode = ablation(m);
            }
            set(&mut cfg.alpha, alpha);
            set(&mut cfg.k, k);
            set(&mut cfg.adapt.steps, schedule.steps);
            set(&mut cfg.adapt.lr, schedule.lr);
            set(&mut cfg.adapt.batch, schedule.batch);
            let encoder = encoder.or_else(|| index.as_ref().map(|i| parent_dir(i).join("encoder.ckpt")));
            let out = out.unwrap_or_else(|| default_out("adapt", None));
            adapt_cmd(
                &cfg,
                &AdaptPaths {
                    se,
                    extractor,
                    encoder,
                    index,
                    noise,
                    speech,
                    query,
                    reference_noise,
                },
                &out,
            )
        }
        Command::Evaluate {
            testset,
            model,
            noisy,
            name,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let out = out.unwrap_or_else(|| default_out("evaluate", None));
            evaluate_cmd(&cfg, &testset, model.as_deref().filter(|_| !noisy), name, &out)
        }
        Command::Report {
            runs,
            noisy,
            ptn,
            ttest,
            ttest_against,
            level,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let against = if ttest {
                ttest_against.or_else(|| ptn.clone())
            } else {
                None
            };
            report_cmd(
                &cfg,
                &runs,
                noisy.as_deref(),
                ptn.as_deref(),
                ttest.then_some(against).flatten().as_deref(),
                ttest,
                level,
                out.as_deref(),
            )
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    set(&mut cfg.seed, common.seed);
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn ablation(m: Mode) -> AblationMode {
    match m {
        Mode::Nastar => AblationMode::Nastar,
        Mode::Extr => AblationMode::Extr,
        Mode::Gt => AblationMode::Gt,
        Mode::All => AblationMode::All,
        Mode::Retv => AblationMode::Retv,
        Mode::Opt => AblationMode::Opt,
    }
}

fn load_signals(manifest: &Path) -> Result<Vec<(String, Option<String>, Waveform)>> {
    read_manifest(manifest)
        .with_context(|| format!("reading manifest {}", manifest.display()))?
        .into_iter()
        .map(|e| {
            let w = load_wav(&e.path).with_context(|| format!("loading {}", e.path.display()))?;
            Ok((e.id, e.family, w))
        })
        .collect()
}

fn load_waveforms(manifest: &Path) -> Result<Vec<Waveform>> {
    Ok(load_signals(manifest)?.into_iter().map(|(_, _, w)| w).collect())
}

fn synth_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(out)?;
    let corpus = gen_corpus(out, &cfg.corpus)?;
    let mut record = RunRecord::new("synth-data", Some(cfg.seed), &cfg.corpus)?;
    let test_speech: Vec<(String, Waveform)> = load_signals(&corpus.test_speech_manifest)?
        .into_iter()
        .map(|(id, _, w)| (id, w))
        .collect();
    let query_speech = &test_speech
        .first()
        .context("corpus has no test speech")?
        .1;
    let targets = read_manifest(&corpus.target_manifest)?;
    let target = |f: NoiseFamily, part: &str| -> Result<Waveform> {
        let id = target_id(f, part);
        let e = targets
            .iter()
            .find(|e| e.id == id)
            .with_context(|| format!("missing target {id}"))?;
        Ok(load_wav(&e.path)?)
    };
    for (i, &f) in NoiseFamily::ALL[..cfg.corpus.families].iter().enumerate() {
        let dir = out.join("experiments").join(f.name());
        std::fs::create_dir_all(&dir)?;
        let q = query_mixture(&target(f, "first")?, query_speech, &mut substream(cfg.seed, 10 + i as u64))?;
        save_wav(&q.noisy, dir.join("query.wav"))?;
        save_wav(&q.noise, dir.join("query_noise.wav"))?;
        let items = target_test_set(
            &target(f, "second")?,
            &test_speech,
            f.name(),
            &cfg.test_snr_levels,
            &mut substream(cfg.seed, 20 + i as u64),
        )?;
        let ts = write_test_set(&dir, "testset", &items)?;
        for p in [dir.join("query.wav"), dir.join("query_noise.wav"), ts] {
            record.output(&p)?;
        }
    }
    for p in [
        &corpus.noise_manifest,
        &corpus.speech_manifest,
        &corpus.test_speech_manifest,
        &corpus.target_manifest,
    ] {
        record.output(p)?;
    }
    record.save(&out.join("run.json"))?;
    println!("corpus written to {}", out.display());
    Ok(())
}

fn pretrain_cmd(
    cfg: &ExperimentConfig,
    speech: &Path,
    noise: &Path,
    exclude: &[String],
    out: &Path,
) -> Result<()> {
    for f in exclude {
        if NoiseFamily::from_name(f).is_none() {
            bail!("unknown noise family {f:?}");
        }
    }
    let _lock = OutputLock::acquire(out)?;
    let speech_w = load_waveforms(speech)?;
    let noise_w: Vec<Waveform> = load_signals(noise)?
        .into_iter()
        .filter(|(_, fam, _)| fam.as_ref().is_none_or(|f| !exclude.contains(f)))
        .map(|(_, _, w)| w)
        .collect();
    if noise_w.is_empty() {
        bail!("no noise signals left after exclusions");
    }
    let trained = pretrain(&speech_w, &noise_w, &cfg.pretrain, &mut seeded(cfg.seed))?;
    let mut record = RunRecord::new(
        "pretrain",
        Some(cfg.seed),
        &serde_json::json!({ "pretrain": cfg.pretrain, "exclude_family": exclude }),
    )?;
    record.input(speech)?;
    record.input(noise)?;
    let ext = out.join("extractor.ckpt");
    let se = out.join("se.ckpt");
    save_model(&trained.extractor, &cfg.pretrain.model, &ext)?;
    save_model(&trained.se, &cfg.pretrain.model, &se)?;
    let losses = out.join("losses.json");
    write_json(
        &losses,
        &serde_json::json!({ "extractor": trained.extractor_losses, "se": trained.se_losses }),
    )?;
    for p in [&ext, &se, &losses] {
        record.output(p)?;
    }
    record.save(&out.join("run.json"))?;
    println!("extractor and enhancement checkpoints written to {}", out.display());
    Ok(())
}

fn train_retrieval_cmd(cfg: &ExperimentConfig, noise: &Path, speech: &Path, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(out)?;
    let noises: Vec<(String, Waveform)> = load_signals(noise)?
        .into_iter()
        .map(|(id, _, w)| (id, w))
        .collect();
    let speech_w = load_waveforms(speech)?;
    let trained = train_retrieval(&noises, &speech_w, &cfg.contrastive, None, &mut seeded(cfg.seed))?;
    let mut record = RunRecord::new("train-retrieval", Some(cfg.seed), &cfg.contrastive)?;
    record.input(noise)?;
    record.input(speech)?;
    let enc = out.join("encoder.ckpt");
    save_model(&trained.params, &cfg.contrastive.encoder, &enc)?;
    let losses = out.join("losses.json");
    write_json(&losses, &trained.losses)?;
    record.output(&enc)?;
    record.output(&losses)?;
    record.save(&out.join("run.json"))?;
    println!("encoder written to {}", enc.display());
    Ok(())
}

fn build_index_cmd(cfg: &ExperimentConfig, noise: &Path, encoder: &Path, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(&parent_dir(out))?;
    let (params, enc_cfg): (_, EncoderConfig) = load_model(encoder)?;
    let index = build_index_from_manifest(noise, &params, &enc_cfg)?;
    index.save(out)?;
    let mut record = RunRecord::new("build-index", Some(cfg.seed), &enc_cfg)?;
    record.input(noise)?;
    record.input(encoder)?;
    record.output(out)?;
    record.save(&record_for_file(out))?;
    println!("indexed {} signals into {}", index.len(), out.display());
    Ok(())
}

fn extract_noise_cmd(cfg: &ExperimentConfig, extractor: &Path, query: &Path, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(&parent_dir(out))?;
    let (params, model): (_, ExtractorConfig) = load_model(extractor)?;
    let q = load_wav(query)?;
    let pseudo = nastar::adapt::extract_pseudo_noise(&params, &model, &q)?;
    save_wav(&pseudo, out)?;
    let mut record = RunRecord::new("extract-noise", Some(cfg.seed), &model)?;
    record.input(extractor)?;
    record.input(query)?;
    record.output(out)?;
    record.save(&record_for_file(out))?;
    println!("pseudo-noise written to {}", out.display());
    Ok(())
}

fn load_retriever(encoder: &Path, index: &Path) -> Result<(nastar::models::ParamSet, EncoderConfig, EmbeddingIndex)> {
    let (params, enc_cfg): (_, EncoderConfig) = load_model(encoder)?;
    let idx = EmbeddingIndex::load(index).with_context(|| format!("loading index {}", index.display()))?;
    idx.check_fingerprint(&encoder_fingerprint(&params))
        .with_context(|| format!("index {} was built with a different encoder", index.display()))?;
    Ok((params, enc_cfg, idx))
}

fn retrieve_cmd(cfg: &ExperimentConfig, query: &Path, index: &Path, encoder: &Path, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(&parent_dir(out))?;
    let (params, enc_cfg, idx) = load_retriever(encoder, index)?;
    let q = load_wav(query)?;
    let cohort = top_k(&idx, &retrieval_embed(&params, &enc_cfg, &q)?, cfg.k)?;
    cohort.save(out)?;
    let mut record = RunRecord::new("retrieve", Some(cfg.seed), &serde_json::json!({ "k": cfg.k }))?;
    record.input(query)?;
    record.input(index)?;
    record.input(encoder)?;
    record.output(out)?;
    record.save(&record_for_file(out))?;
    println!("{} entries written to {}", cohort.entries.len(), out.display());
    Ok(())
}

struct AdaptPaths {
    se: PathBuf,
    extractor: Option<PathBuf>,
    encoder: Option<PathBuf>,
    index: Option<PathBuf>,
    noise: PathBuf,
    speech: PathBuf,
    query: PathBuf,
    reference_noise: Option<PathBuf>,
}

fn adapt_cmd(cfg: &ExperimentConfig, paths: &AdaptPaths, out: &Path) -> Result<()> {
    let mode = cfg.mode;
    let _lock = OutputLock::acquire(out)?;
    let (se, model): (_, ExtractorConfig) = load_model(&paths.se)?;
    let mut adapt_cfg = cfg.adapt.clone();
    adapt_cfg.model = model;
    let extractor = match &paths.extractor {
        Some(p) => Some(load_model::<ExtractorConfig>(p)?),
        None => None,
    };
    let retriever = match (&paths.encoder, &paths.index) {
        (Some(e), Some(i)) if mode.uses_retrieval() => Some(load_retriever(e, i)?),
        _ => None,
    };
    let query = load_wav(&paths.query)?;
    let reference = match &paths.reference_noise {
        Some(p) => Some(load_wav(p)?),
        None => None,
    };
    let pool = NoisePool::load(&paths.noise, None)?;
    let speech = load_waveforms(&paths.speech)?;
    let inputs = PipelineInputs {
        query_noisy: &query,
        extractor: extractor.as_ref().map(|(p, c)| Extractor {
            params: p,
            config: *c,
        }),
        retriever: retriever.as_ref().map(|(p, c, i)| Retriever {
            encoder: p,
            config: *c,
            index: i,
        }),
        pool: &pool,
        speech: &speech,
        reference_noise: reference.as_ref(),
    };
    let pcfg = PipelineConfig {
        mode,
        alpha: cfg.alpha,
        k: cfg.k,
        seed: cfg.seed,
        adapt: adapt_cfg,
    };
    let result = nastar_pipeline(&se, &inputs, &pcfg)?;

    let mut record = RunRecord::new("adapt", Some(cfg.seed), &pcfg)?;
    let mut in_paths = vec![&paths.se, &paths.noise, &paths.speech, &paths.query];
    in_paths.extend(paths.reference_noise.iter());
    in_paths.extend(paths.extractor.iter());
    if retriever.is_some() {
        in_paths.extend(paths.encoder.iter());
        in_paths.extend(paths.index.iter());
    }
    for p in in_paths {
        record.input(p)?;
    }
    let mut written = Vec::new();
    if let Some(p) = &result.pseudo_noise {
        let path = out.join("pseudo_noise.wav");
        save_wav(p, &path)?;
        written.push(path);
    }
    if !result.manifest.cohort.is_empty() {
        let path = out.join("cohort.json");
        RelevantCohort {
            k: result.manifest.cohort.len(),
            entries: result.manifest.cohort.clone(),
        }
        .save(&path)?;
        written.push(path);
    }
    let losses = out.join("losses.json");
    write_json(&losses, &result.losses)?;
    written.push(losses);
    let ckpt = out.join("adapted.ckpt");
    let mut manifest = result.manifest.clone();
    manifest.checkpoint = Some(ckpt.clone());
    let manifest_path = out.join("adapt.json");
    manifest.save(&manifest_path)?;
    written.push(manifest_path);
    save_model(&result.adapted, &model, &ckpt)?;
    written.push(ckpt.clone());
    for p in &written {
        record.output(p)?;
    }
    record.save(&out.join("run.json"))?;
    println!(
        "mode {} (alpha {}): adapted checkpoint written to {}",
        mode.name(),
        manifest.alpha,
        ckpt.display()
    );
    Ok(())
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    testset: &Path,
    model: Option<&Path>,
    name: Option<String>,
    out: &Path,
) -> Result<()> {
    let _lock = OutputLock::acquire(out)?;
    let items = load_test_set(testset)?;
    let report = match model {
        Some(path) => {
            let (params, model_cfg): (_, ExtractorConfig) = load_model(path)?;
            evaluate(&params, &model_cfg, &items)?
        }
        None => evaluate_with(&items, |w| Ok(w.clone()))?,
    };
    let name = name.unwrap_or_else(|| {
        out.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    let mut record = RunRecord::new(
        "evaluate",
        Some(cfg.seed),
        &serde_json::json!({ "model": model, "noisy": model.is_none() }),
    )?;
    record.name = Some(name);
    record.input(testset)?;
    if let Some(p) = model {
        record.input(p)?;
    }
    let files = [
        (out.join("report.json"), report.to_json()?),
        (out.join("report.csv"), report.to_csv()),
        (out.join("report.txt"), report.table()),
    ];
    for (path, text) in &files {
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        record.output(path)?;
    }
    record.save(&out.join("run.json"))?;
    print!("{}", report.table());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report_cmd(
    cfg: &ExperimentConfig,
    runs: &[PathBuf],
    noisy: Option<&str>,
    ptn: Option<&str>,
    against: Option<&str>,
    ttest: bool,
    level: Level,
    out: Option<&Path>,
) -> Result<()> {
    let mut loaded = Vec::new();
    for dir in runs {
        let report = MetricReport::from_json(
            &std::fs::read_to_string(dir.join("report.json"))
                .with_context(|| format!("{} is not an evaluation run", dir.display()))?,
        )?;
        let record: Option<RunRecord> = read_json(&dir.join("run.json")).ok();
        let name = record
            .and_then(|r| r.name)
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| dir.display().to_string());
        loaded.push((name, report));
    }
    let first = loaded.first().map(|(n, _)| n.clone());
    let against = if ttest {
        against.map(str::to_string).or(first)
    } else {
        None
    };
    let cmp = compare_runs(
        &loaded,
        &CompareOptions {
            noisy,
            ptn,
            ttest_against: against.as_deref(),
            level: match level {
                Level::Group => PairLevel::Group,
                Level::Utterance => PairLevel::Utterance,
            },
        },
    )?;
    let table = cmp.table();
    print!("{table}");
    if let Some(out) = out {
        let _lock = OutputLock::acquire(out)?;
        let mut record = RunRecord::new(
            "report",
            Some(cfg.seed),
            &serde_json::json!({ "noisy": noisy, "ptn": ptn, "ttest": against }),
        )?;
        for dir in runs {
            record.input(&dir.join("report.json"))?;
        }
        let json = out.join("comparison.json");
        let txt = out.join("table.txt");
        std::fs::write(&json, cmp.to_json()?)?;
        std::fs::write(&txt, &table)?;
        record.output(&json)?;
        record.output(&txt)?;
        record.save(&out.join("run.json"))?;
    }
    Ok(())
}
