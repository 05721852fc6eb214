use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{build_eval_set, generate_synthetic_corpus, Corpus, EvalSet, SyntheticSpec};
use crate::metrics::si_sdr;

fn tiny_model() -> ExtractorConfig {
    ExtractorConfig {
        n_filters: 8,
        kernel_len: 8,
        bottleneck_ch: 4,
        conv_ch: 8,
        n_repeats: 1,
        blocks_per_repeat: 2,
        embed_dim: 4,
        fusion_block_index: 1,
        n_outputs: 1,
    }
}

fn corpus(seed: u64, speakers: usize) -> Corpus {
    generate_synthetic_corpus(
        &SyntheticSpec {
            n_speakers: speakers,
            utts_per_speaker: 3,
            duration_s: 0.3,
            sample_rate_hz: 8000,
        },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn tiny_run(objective: Objective) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        steps_per_epoch: 2,
        batch_size: 2,
        segment_s: 0.1,
        valid_samples: 2,
        ..TrainConfig::new(objective)
    }
}

fn params(model: &ExtractorConfig, seed: u64) -> ModelParams {
    ModelParams::init(model, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn eval_set() -> EvalSet {
    build_eval_set(&corpus(3, 4), None, 3, 2, None, 5).unwrap()
}

#[test]
fn recipe_defaults() {
    let base = TrainConfig::new(Objective::Supervised);
    let t = TrainConfig::recipe(Recipe::Testset, &base);
    assert_eq!((t.objective, t.epochs, t.lr_initial), (Objective::Samom, 20, 1e-4));
    assert_eq!((t.lr_schedule, t.lr_halve_patience_epochs), (LrSchedule::Plateau, 2));
    let c = TrainConfig::recipe(Recipe::Crossdomain, &base);
    assert_eq!((c.objective, c.epochs, c.lr_initial), (Objective::Samom, 20, 1e-3));
    assert_eq!(c.lr_schedule, LrSchedule::FixedMilestone);
    assert_eq!(c.milestone_epochs, Some(vec![18]));
    t.validate().unwrap();
    c.validate().unwrap();
}

#[test]
fn config_validation() {
    let ok = TrainConfig::new(Objective::Samom);
    ok.validate_for(&tiny_model()).unwrap();
    let milestone_missing = TrainConfig {
        lr_schedule: LrSchedule::FixedMilestone,
        ..ok.clone()
    };
    assert!(matches!(milestone_missing.validate(), Err(EngineError::Config(_))));
    let milestone_unused = TrainConfig {
        milestone_epochs: Some(vec![3]),
        ..ok.clone()
    };
    assert!(milestone_unused.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { lr_initial: -1.0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig {
        grad_clip_norm: Some(0.0),
        ..ok.clone()
    }
    .validate()
    .is_err());
    // Objective, policy and model must agree.
    assert!(TrainConfig::new(Objective::Pit).validate_for(&tiny_model()).is_err());
    TrainConfig::new(Objective::Pit)
        .validate_for(&tiny_model().with_outputs(2))
        .unwrap();
    assert!(TrainConfig::new(Objective::Mixit).validate_for(&tiny_model()).is_err());
    TrainConfig::new(Objective::Mixit)
        .validate_for(&tiny_model().with_outputs(4))
        .unwrap();
    let noisy_sup = TrainConfig {
        policy: Some(Objective::NoisySemisup.default_policy()),
        ..TrainConfig::new(Objective::Supervised)
    };
    noisy_sup.validate_for(&tiny_model()).unwrap();
    let wrong = TrainConfig {
        policy: Some(Objective::Samom.default_policy()),
        ..TrainConfig::new(Objective::NoisySemisup)
    };
    assert!(wrong.validate_for(&tiny_model()).is_err());
}

#[test]
fn config_parses_from_toml_and_rejects_unknown_keys() {
    let text = r#"
        objective = "samom"
        epochs = 3
        steps_per_epoch = 10
        segment_s = 0.5
        lr_initial = 0.001
        lr_halve_patience_epochs = 10
        seed = 4
        policy = { kind = "mom", n_sams = 2, speakers_per_sam = 2 }
    "#;
    let cfg: TrainConfig = toml::from_str(text).unwrap();
    assert_eq!(cfg.batch_size, 8);
    assert_eq!(cfg.grad_clip_norm, Some(5.0));
    assert_eq!(cfg.lr_schedule, LrSchedule::Plateau);
    assert_eq!(
        cfg.policy,
        Some(SamplePolicy::Mom {
            n_sams: 2,
            speakers_per_sam: 2
        })
    );
    let off: TrainConfig = toml::from_str(&format!("{text}\ngrad_clip_norm = false\n")).unwrap();
    assert_eq!(off.grad_clip_norm, None);
    assert_eq!(toml::from_str::<TrainConfig>(&toml::to_string(&off).unwrap()).unwrap(), off);
    let int: TrainConfig = toml::from_str(&format!("{text}\ngrad_clip_norm = 3\n")).unwrap();
    assert_eq!(int.grad_clip_norm, Some(3.0));
    let bad = format!("{text}\nlearning_rate = 0.1\n");
    assert!(toml::from_str::<TrainConfig>(&bad).is_err());
}

#[test]
fn every_objective_trains_a_few_steps() {
    let c = corpus(1, 4);
    let v = corpus(2, 4);
    let model = tiny_model();
    for (objective, m) in [
        (Objective::Supervised, model.clone()),
        (Objective::Pit, model.with_outputs(2)),
        (Objective::Mixit, model.with_outputs(4)),
        (Objective::Samom, model.clone()),
        (Objective::NoisySemisup, model.clone()),
    ] {
        let cfg = tiny_run(objective);
        let out = train(&cfg, &m, params(&m, 0), TrainSource::Corpus(&c), TrainSource::Corpus(&v), None).unwrap();
        assert_eq!(out.state.step, 4);
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.log.len(), 6);
        assert!(out.log[0].starts_with("step=1 epoch=1 lr=1e-3 loss="), "{}", out.log[0]);
        assert!(out.history.iter().all(|h| h.valid_loss.is_finite()));
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_are_byte_identical() {
    let c = corpus(1, 4);
    let v = corpus(2, 4);
    let model = tiny_model();
    let cfg = tiny_run(Objective::Samom);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train(&cfg, &model, params(&model, 7), TrainSource::Corpus(&c), TrainSource::Corpus(&v), Some(d.path())).unwrap();
    }
    for name in ["last.ckpt", "best.ckpt", "train.log"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let seq = TrainConfig {
        sequential: true,
        ..cfg.clone()
    };
    let d = tempfile::tempdir().unwrap();
    train(&seq, &model, params(&model, 7), TrainSource::Corpus(&c), TrainSource::Corpus(&v), Some(d.path())).unwrap();
    assert_eq!(
        std::fs::read(d.path().join("last.ckpt")).unwrap(),
        std::fs::read(dirs[0].path().join("last.ckpt")).unwrap()
    );
    let ck = Checkpoint::load(&dirs[0].path().join("last.ckpt")).unwrap();
    assert_eq!(ck.step, 4);
    assert!(ck.optimizer.is_some());
    assert_eq!(ck.to_bytes(), std::fs::read(dirs[0].path().join("last.ckpt")).unwrap());
}

#[test]
fn validation_corpus_does_not_touch_the_parameter_trajectory() {
    let c = corpus(1, 4);
    let model = tiny_model();
    // Patience beyond the run length: no halving decision can diverge.
    let cfg = TrainConfig {
        lr_halve_patience_epochs: 50,
        ..tiny_run(Objective::Samom)
    };
    let a = train(&cfg, &model, params(&model, 1), TrainSource::Corpus(&c), TrainSource::Corpus(&corpus(2, 4)), None)
        .unwrap();
    let b = train(&cfg, &model, params(&model, 1), TrainSource::Corpus(&c), TrainSource::Corpus(&corpus(9, 5)), None)
        .unwrap();
    assert_eq!(a.state.params, b.state.params);
    assert_ne!(a.history[0].valid_loss, b.history[0].valid_loss);
}

#[test]
fn nan_loss_aborts_with_a_state_dump() {
    let c = corpus(1, 4);
    let model = tiny_model();
    let cfg = TrainConfig {
        lr_initial: 1e300,
        grad_clip_norm: None,
        ..tiny_run(Objective::Samom)
    };
    let d = tempfile::tempdir().unwrap();
    let err = train(&cfg, &model, params(&model, 1), TrainSource::Corpus(&c), TrainSource::Corpus(&c), Some(d.path()))
        .unwrap_err();
    let EngineError::NonFinite { dump, .. } = err else {
        panic!("expected a non-finite abort, got {err}");
    };
    let dump = dump.expect("state dumped");
    assert!(dump.ends_with("nan_state.ckpt"));
    // The pre-step parameters overflow f32, so only the container is checked.
    assert!(std::fs::read(&dump).unwrap().starts_with(b"SAMOMCKP"));
}

#[test]
fn undersized_corpus_is_rejected() {
    let c = corpus(1, 3);
    let model = tiny_model();
    let err = train(
        &tiny_run(Objective::Samom),
        &model,
        params(&model, 1),
        TrainSource::Corpus(&c),
        TrainSource::Corpus(&c),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::Corpus(CorpusError::InsufficientSpeakers { needed: 4, available: 3 })));
}

#[test]
fn passthrough_scores_zero_improvement() {
    let r = evaluate(Estimator::Passthrough, &eval_set()).unwrap();
    assert_eq!(r.per_utterance.len(), 6);
    assert!(r.per_utterance.iter().all(|s| s.si_sdri_db == 0.0 && s.sdri_db == 0.0));
    assert_eq!(r.si_sdri_db, 0.0);
}

#[test]
fn oracle_scores_the_clamp_ceiling() {
    let set = eval_set();
    let r = evaluate(Estimator::Oracle, &set).unwrap();
    let mut k = 0;
    for m in &set.mixtures {
        for src in m.sources.as_ref().unwrap() {
            let expected = 60.0 - si_sdr(src.samples(), m.mixture.samples(), -60.0).unwrap();
            assert!((r.per_utterance[k].si_sdri_db - expected).abs() < 1e-9);
            k += 1;
        }
    }
    let mean = r.per_utterance.iter().map(|s| s.si_sdri_db).sum::<f64>() / k as f64;
    assert!((r.si_sdri_db - mean).abs() < 1e-12);
}

#[test]
fn model_evaluation_covers_every_speaker_and_bss_mapping_is_injective() {
    let set = eval_set();
    let model = tiny_model();
    let e = evaluate_detailed(
        Estimator::Model {
            config: &model,
            params: &params(&model, 2),
        },
        &set,
    )
    .unwrap();
    assert_eq!(e.estimates.len(), 6);
    assert_eq!(e.estimates[0].waveform.len(), set.mixtures[0].mixture.len());
    let bss = model.with_outputs(4);
    let e = evaluate_detailed(
        Estimator::Model {
            config: &bss,
            params: &params(&bss, 2),
        },
        &set,
    )
    .unwrap();
    for pair in e.estimates.chunks(2) {
        assert_ne!(pair[0].waveform, pair[1].waveform);
    }
}

#[test]
fn missing_enrollment_names_the_mixture() {
    let mut set = eval_set();
    let key = set.enrollments.keys().next().unwrap().clone();
    set.enrollments.remove(&key);
    let model = tiny_model();
    let err = evaluate(
        Estimator::Model {
            config: &model,
            params: &params(&model, 2),
        },
        &set,
    )
    .unwrap_err();
    assert!(err.to_string().contains(&key.0), "{err}");
}
