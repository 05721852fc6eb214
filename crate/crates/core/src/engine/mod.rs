//! Training loop, learning-rate schedules, checkpointing, the two
//! adaptation recipes, and evaluation on full-length mixtures.

mod evaluate;
mod optim;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{make_epoch, Constituent, CorpusError, EpochStream, SamPool, SamplePolicy, TrainSource, TrainingSample};
use crate::metrics::MetricError;
use crate::model::{
    Checkpoint, CheckpointError, ExtractionGraph, ExtractorConfig, ModelError, ModelParams, SeparationGraph,
};
use crate::objectives::{
    mixit_graded, noisy_semisup_graded, pit_graded, samom_graded, supervised_graded, supervised_multi_graded,
    GradedLoss, LossValue, ObjectiveError,
};

pub use evaluate::{evaluate, evaluate_detailed, Estimate, Estimator, Evaluation};
pub use optim::{clip_global_norm, Adam, EpochVerdict, Schedule};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training log: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite {what} at step {step} (epoch {epoch}){}", dump.as_ref().map(|p| format!("; state dumped to {}", p.display())).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        step: u64,
        epoch: usize,
        dump: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Supervised,
    Pit,
    Mixit,
    Samom,
    NoisySemisup,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Supervised => "supervised",
            Objective::Pit => "pit",
            Objective::Mixit => "mixit",
            Objective::Samom => "samom",
            Objective::NoisySemisup => "noisy_semisup",
        }
    }

    /// Two-speaker SAMs, two SAMs per mixture of mixtures, one interferer
    /// plus noise at 5 dB for the noisy setups.
    pub fn default_policy(self) -> SamplePolicy {
        match self {
            Objective::Supervised | Objective::Pit => SamplePolicy::Sam { speakers: 2 },
            Objective::Mixit | Objective::Samom => SamplePolicy::Mom {
                n_sams: 2,
                speakers_per_sam: 2,
            },
            Objective::NoisySemisup => SamplePolicy::Noisy {
                interferers: 1,
                snr_db: 5.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Plateau,
    FixedMilestone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Weakly-supervised adaptation on the unlabeled test mixtures.
    Testset,
    /// Fine-tuning on a labeled target-domain corpus.
    Crossdomain,
}

impl Recipe {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "testset" => Some(Recipe::Testset),
            "crossdomain" => Some(Recipe::Crossdomain),
            _ => None,
        }
    }
}

fn default_batch_size() -> usize {
    8
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

/// A number, or `false` for no clipping (`true` means the default).
mod clip_norm {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Clip {
        Norm(f64),
        Enabled(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_f64(*n),
            None => s.serialize_bool(false),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Clip::deserialize(d)? {
            Clip::Norm(n) => Some(n),
            Clip::Enabled(true) => super::default_clip(),
            Clip::Enabled(false) => None,
        })
    }
}

fn default_valid_samples() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub segment_s: f64,
    pub lr_initial: f64,
    pub lr_halve_patience_epochs: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// 1-based epochs at whose start the rate halves; fixed_milestone only.
    #[serde(default)]
    pub milestone_epochs: Option<Vec<usize>>,
    pub seed: u64,
    /// Global-norm clip; `None` turns clipping off (`false` in a run file).
    #[serde(default = "default_clip", with = "clip_norm")]
    pub grad_clip_norm: Option<f64>,
    /// How training samples are drawn; the objective's default when absent.
    #[serde(default)]
    pub policy: Option<SamplePolicy>,
    /// Size of the fixed validation set drawn once from the validation source.
    #[serde(default = "default_valid_samples")]
    pub valid_samples: usize,
    /// Per-source random gain range in dB applied before mixing.
    #[serde(default)]
    pub gain_db: Option<(f64, f64)>,
    /// Process a batch one sample at a time instead of in parallel. Results
    /// are identical; peak memory is lower.
    #[serde(default)]
    pub sequential: bool,
}

impl TrainConfig {
    /// Full-scale settings: 100 epochs of Adam at 1e-3, halved after 10
    /// epochs without validation improvement, on 3-second crops.
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            epochs: 100,
            steps_per_epoch: 1000,
            batch_size: default_batch_size(),
            segment_s: 3.0,
            lr_initial: 1e-3,
            lr_halve_patience_epochs: 10,
            lr_schedule: LrSchedule::Plateau,
            milestone_epochs: None,
            seed: 0,
            grad_clip_norm: default_clip(),
            policy: None,
            valid_samples: default_valid_samples(),
            gain_db: None,
            sequential: false,
        }
    }

    /// `base` with the recipe's objective and schedule. Test-set
    /// adaptation: 20 epochs at 1e-4, halved after 2 stale epochs.
    /// Cross-domain: 20 epochs at 1e-3, halved once at epoch 18.
    pub fn recipe(recipe: Recipe, base: &TrainConfig) -> Self {
        let policy = match base.policy {
            Some(p @ SamplePolicy::Mom { .. }) => Some(p),
            _ => None,
        };
        let common = Self {
            objective: Objective::Samom,
            epochs: 20,
            policy,
            ..base.clone()
        };
        match recipe {
            Recipe::Testset => Self {
                lr_initial: 1e-4,
                lr_halve_patience_epochs: 2,
                lr_schedule: LrSchedule::Plateau,
                milestone_epochs: None,
                ..common
            },
            Recipe::Crossdomain => Self {
                lr_initial: 1e-3,
                lr_schedule: LrSchedule::FixedMilestone,
                milestone_epochs: Some(vec![18]),
                ..common
            },
        }
    }

    pub fn policy(&self) -> SamplePolicy {
        self.policy.unwrap_or_else(|| self.objective.default_policy())
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        for (name, v) in [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("lr_halve_patience_epochs", self.lr_halve_patience_epochs),
            ("valid_samples", self.valid_samples),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("segment_s", self.segment_s), ("lr_initial", self.lr_initial)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        match (self.lr_schedule, &self.milestone_epochs) {
            (LrSchedule::FixedMilestone, None) => return bad("fixed_milestone needs milestone_epochs".into()),
            (LrSchedule::FixedMilestone, Some(m)) if m.is_empty() || m.contains(&0) => {
                return bad("milestone_epochs must be a non-empty list of 1-based epochs".into())
            }
            (LrSchedule::Plateau, Some(_)) => {
                return bad("milestone_epochs is only valid with lr_schedule = fixed_milestone".into())
            }
            _ => {}
        }
        if let Some((lo, hi)) = self.gain_db {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("gain_db range [{lo}, {hi}] is not ordered"));
            }
        }
        Ok(())
    }

    /// Checks that the objective, sample policy and model agree.
    pub fn validate_for(&self, model: &ExtractorConfig) -> Result<(), EngineError> {
        self.validate()?;
        model.validate()?;
        let policy = self.policy();
        let fits = match (self.objective, policy) {
            (Objective::Supervised, SamplePolicy::Sam { .. } | SamplePolicy::Noisy { .. }) => model.is_extractor(),
            (Objective::Samom, SamplePolicy::Mom { .. }) => model.is_extractor(),
            (Objective::NoisySemisup, SamplePolicy::Noisy { .. }) => model.is_extractor(),
            (Objective::Pit, SamplePolicy::Sam { speakers }) => model.n_outputs == speakers && speakers >= 2,
            (Objective::Mixit, SamplePolicy::Mom { n_sams, .. }) => !model.is_extractor() && model.n_outputs >= n_sams,
            _ => false,
        };
        if !fits {
            return Err(EngineError::Config(format!(
                "objective {} cannot train a {}-output model on {policy:?} samples",
                self.objective.name(),
                model.n_outputs
            )));
        }
        Ok(())
    }
}

/// Everything that changes during a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    /// 1-based index of the current (or last finished) epoch; 0 before training.
    pub epoch: usize,
    pub schedule: Schedule,
    pub params: ModelParams,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, params: ModelParams) -> Self {
        Self {
            step: 0,
            epoch: 0,
            schedule: Schedule::new(cfg.lr_initial),
            optimizer: Adam::new(&params),
            params,
        }
    }

    pub fn checkpoint(&self, model: &ExtractorConfig) -> Checkpoint {
        Checkpoint {
            config: model.clone(),
            step: self.step,
            params: self.params.clone(),
            optimizer: Some(self.optimizer.moments().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used for every step of this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub verdict: EpochVerdict,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub best_params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Every log line written, in order.
    pub log: Vec<String>,
}

impl TrainOutcome {
    pub fn best_validation(&self) -> f64 {
        self.state.schedule.best_validation
    }
}

fn source(c: &Constituent) -> Result<&[f64], EngineError> {
    c.source
        .as_ref()
        .map(|w| w.samples())
        .ok_or_else(|| EngineError::Config(format!("SAM constituent {} carries no source", c.speaker_id)))
}

/// Loss of one sample under `objective`, plus parameter gradients when asked.
pub fn sample_loss(
    objective: Objective,
    params: &ModelParams,
    model: &ExtractorConfig,
    sample: &TrainingSample,
    with_grad: bool,
) -> Result<(LossValue, Option<ModelParams>), EngineError> {
    let mismatch = || {
        EngineError::Config(format!(
            "objective {} does not apply to this sample type",
            objective.name()
        ))
    };
    let input = sample.input().samples();
    let extract = |enrollments: Vec<&[f64]>, score: &dyn Fn(&[&[f64]]) -> Result<GradedLoss, ObjectiveError>| {
        let g = ExtractionGraph::forward(params, model, input, &enrollments)?;
        let l = score(&g.outputs())?;
        let grads = with_grad.then(|| {
            let mut grads = params.zeros_like();
            g.backward(params, model, &l.grads, &mut grads);
            grads
        });
        Ok::<_, EngineError>((l.loss, grads))
    };
    let separate = |score: &dyn Fn(&[&[f64]]) -> Result<GradedLoss, ObjectiveError>| {
        let g = SeparationGraph::forward(params, model, input)?;
        let l = score(&g.outputs())?;
        let grads = with_grad.then(|| {
            let mut grads = params.zeros_like();
            g.backward(params, model, &l.grads, &mut grads);
            grads
        });
        Ok::<_, EngineError>((l.loss, grads))
    };
    match (objective, sample) {
        (Objective::Samom, TrainingSample::Mom(m)) => {
            let enrollments = m
                .sams
                .iter()
                .flat_map(|s| s.constituents.iter().map(|c| c.enrollment.samples()))
                .collect();
            let sizes: Vec<usize> = m.sams.iter().map(|s| s.n_speakers()).collect();
            let sams: Vec<&[f64]> = m.sams.iter().map(|s| s.mixture.samples()).collect();
            extract(enrollments, &|outs| {
                let mut groups = Vec::with_capacity(sizes.len());
                let mut at = 0;
                for &k in &sizes {
                    groups.push(outs[at..at + k].to_vec());
                    at += k;
                }
                samom_graded(&sams, &groups)
            })
        }
        (Objective::Mixit, TrainingSample::Mom(m)) => {
            let sams: Vec<&[f64]> = m.sams.iter().map(|s| s.mixture.samples()).collect();
            separate(&|outs| Ok(mixit_graded(&sams, outs)?.graded))
        }
        (Objective::Pit, TrainingSample::Sam(s)) => {
            let refs = s.constituents.iter().map(source).collect::<Result<Vec<_>, _>>()?;
            separate(&|outs| Ok(pit_graded(&refs, outs)?.graded))
        }
        (Objective::Supervised, TrainingSample::Sam(s)) => {
            let refs = s.constituents.iter().map(source).collect::<Result<Vec<_>, _>>()?;
            let enrollments = s.constituents.iter().map(|c| c.enrollment.samples()).collect();
            extract(enrollments, &|outs| supervised_multi_graded(&refs, outs))
        }
        (Objective::Supervised, TrainingSample::Noisy(n)) => {
            let clean = n.clean_source.waveform.samples();
            extract(vec![n.target_enrollment.samples()], &|outs| supervised_graded(clean, outs[0]))
        }
        (Objective::NoisySemisup, TrainingSample::Noisy(n)) => {
            let clean = n.clean_source.waveform.samples();
            let residual = n.residual_target().samples();
            extract(vec![n.target_enrollment.samples()], &|outs| {
                noisy_semisup_graded(clean, residual, input, outs[0])
            })
        }
        _ => Err(mismatch()),
    }
}

/// Per-term means over a batch, with terms summed in sorted order.
fn mean_loss(losses: &[LossValue]) -> LossValue {
    let n = losses.len().max(1) as f64;
    let mean = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / n
    };
    let mut terms: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for l in losses {
        for (k, v) in &l.per_term {
            terms.entry(k.clone()).or_default().push(*v);
        }
    }
    LossValue {
        total: mean(losses.iter().map(|l| l.total).collect()),
        per_term: terms.into_iter().map(|(k, v)| (k, mean(v))).collect(),
    }
}

/// Mean loss and mean gradient of one batch. Samples are built and scored
/// in parallel unless `sequential`; gradients are reduced in sample order
/// either way, so the result does not depend on scheduling.
fn batch_step(
    cfg: &TrainConfig,
    params: &ModelParams,
    model: &ExtractorConfig,
    stream: &EpochStream,
    first_index: u64,
) -> Result<(LossValue, ModelParams), EngineError> {
    let one = |i: u64| -> Result<(LossValue, ModelParams), EngineError> {
        let sample = stream.sample(i)?;
        let (l, g) = sample_loss(cfg.objective, params, model, &sample, true)?;
        Ok((l, g.expect("gradient requested")))
    };
    let indices = first_index..first_index + cfg.batch_size as u64;
    let mut losses = Vec::with_capacity(cfg.batch_size);
    let mut total: Option<ModelParams> = None;
    let mut accumulate = |(l, g): (LossValue, ModelParams)| {
        losses.push(l);
        match total.as_mut() {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    };
    if cfg.sequential {
        for i in indices {
            accumulate(one(i)?);
        }
    } else {
        let results: Vec<_> = indices.into_par_iter().map(one).collect();
        for r in results {
            accumulate(r?);
        }
    }
    let mut grads = total.expect("batch_size checked positive");
    grads.scale(1.0 / cfg.batch_size as f64);
    Ok((mean_loss(&losses), grads))
}

fn validation_loss(
    cfg: &TrainConfig,
    params: &ModelParams,
    model: &ExtractorConfig,
    samples: &[TrainingSample],
) -> Result<f64, EngineError> {
    let losses = samples
        .par_iter()
        .map(|s| sample_loss(cfg.objective, params, model, s, false).map(|(l, _)| l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_loss(&losses).total)
}

/// The fixed held-out set: drawn once from `valid`, with a seed distinct
/// from every training epoch's.
pub fn validation_samples(cfg: &TrainConfig, valid: TrainSource) -> Result<Vec<TrainingSample>, EngineError> {
    const VALID_SALT: u64 = 0x7661_6c69_6473_6574;
    let stream = make_epoch(
        valid,
        cfg.policy(),
        cfg.valid_samples,
        1,
        cfg.segment_s,
        cfg.seed ^ VALID_SALT,
        u64::MAX,
        None,
    )?;
    (0..cfg.valid_samples as u64)
        .map(|i| stream.sample(i).map_err(EngineError::from))
        .collect()
}

struct RunLog {
    file: Option<std::fs::File>,
    lines: Vec<String>,
}

impl RunLog {
    fn open(out: Option<&Path>) -> Result<Self, EngineError> {
        let file = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(OpenOptions::new().create(true).append(true).open(dir.join("train.log"))?)
            }
            None => None,
        };
        Ok(Self { file, lines: Vec::new() })
    }

    fn line(&mut self, s: String) -> Result<(), EngineError> {
        log::debug!("{s}");
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{s}")?;
        }
        self.lines.push(s);
        Ok(())
    }
}

fn abort_non_finite(
    what: &'static str,
    state: &TrainState,
    model: &ExtractorConfig,
    out: Option<&Path>,
) -> EngineError {
    let dump = out.and_then(|dir| {
        let path = dir.join("nan_state.ckpt");
        state.checkpoint(model).save(&path).ok().map(|_| path)
    });
    EngineError::NonFinite {
        what,
        step: state.step,
        epoch: state.epoch,
        dump,
    }
}

/// Trains `params` from a fresh optimizer state.
///
/// Each epoch runs `steps_per_epoch` batches drawn from `train` under
/// `(seed, epoch)`, then scores the same objective on a fixed validation set
/// from `valid`. The learning rate follows `lr_schedule`. With `out`, the log
/// is appended to `train.log` and `best.ckpt` / `last.ckpt` are written
/// there. A non-finite loss or gradient aborts the run after dumping the
/// pre-step state to `nan_state.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    model: &ExtractorConfig,
    params: ModelParams,
    train: TrainSource,
    valid: TrainSource,
    out: Option<&Path>,
) -> Result<TrainOutcome, EngineError> {
    cfg.validate_for(model)?;
    params.validate(model)?;
    let valid_set = validation_samples(cfg, valid)?;
    let mut log = RunLog::open(out)?;
    let mut state = TrainState::new(cfg, params);
    let mut best_params = state.params.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        state.schedule.start_epoch(cfg, epoch);
        let lr = state.schedule.current_lr;
        let stream = make_epoch(
            train,
            cfg.policy(),
            cfg.batch_size,
            cfg.steps_per_epoch,
            cfg.segment_s,
            cfg.seed,
            epoch as u64,
            cfg.gain_db,
        )?;
        let mut epoch_losses = Vec::with_capacity(cfg.steps_per_epoch);
        for step in 0..cfg.steps_per_epoch {
            let first = (step * cfg.batch_size) as u64;
            let (loss, mut grads) = batch_step(cfg, &state.params, model, &stream, first)?;
            if !loss.total.is_finite() {
                return Err(abort_non_finite("loss", &state, model, out));
            }
            if !grads.all_finite() {
                return Err(abort_non_finite("gradient", &state, model, out));
            }
            if let Some(c) = cfg.grad_clip_norm {
                clip_global_norm(&mut grads, c);
            }
            state.optimizer.step(&mut state.params, &grads, lr);
            state.step += 1;
            epoch_losses.push(loss.total);
            log.line(format!(
                "step={} epoch={epoch} lr={lr:e} loss={:.6}{}",
                state.step,
                loss.total,
                loss.terms_kv()
            ))?;
        }
        let valid_loss = validation_loss(cfg, &state.params, model, &valid_set)?;
        if !valid_loss.is_finite() {
            return Err(abort_non_finite("validation loss", &state, model, out));
        }
        let verdict = state.schedule.end_epoch(cfg, valid_loss);
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        log.line(format!(
            "step={} epoch={epoch} lr={lr:e} loss={train_loss:.6} valid={valid_loss:.6}",
            state.step
        ))?;
        log::info!(
            "epoch {epoch}/{}: train {train_loss:.3} valid {valid_loss:.3} lr {lr:e}{}{}",
            cfg.epochs,
            if verdict.improved { " (best)" } else { "" },
            if verdict.halved { " (lr halved)" } else { "" }
        );
        if verdict.improved {
            best_params = state.params.clone();
            if let Some(dir) = out {
                state.checkpoint(model).save(&dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = out {
            state.checkpoint(model).save(&dir.join("last.ckpt"))?;
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            valid_loss,
            verdict,
        });
    }
    Ok(TrainOutcome {
        state,
        best_params,
        history,
        log: log.lines,
    })
}

/// Test-set adaptation: the remix objective on the weakly labelled pool,
/// with 10% of its SAMs held out for validation. Only mixture recordings
/// and enrollment utterances are touched.
pub fn adapt_testset(
    checkpoint: &Checkpoint,
    pool: &SamPool,
    base: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome, EngineError> {
    let cfg = TrainConfig::recipe(Recipe::Testset, base);
    let n_sams = match cfg.policy() {
        SamplePolicy::Mom { n_sams, .. } => n_sams,
        _ => unreachable!("recipes train on mixtures of mixtures"),
    };
    let (train_pool, valid_pool) = pool.split_fraction(0.1, n_sams)?;
    train(
        &cfg,
        &checkpoint.config,
        checkpoint.params.clone(),
        TrainSource::Sams(&train_pool),
        TrainSource::Sams(&valid_pool),
        out,
    )
}

/// Cross-domain fine-tuning with the remix objective on target-domain data.
pub fn adapt_crossdomain(
    checkpoint: &Checkpoint,
    train_source: TrainSource,
    valid_source: TrainSource,
    base: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome, EngineError> {
    let cfg = TrainConfig::recipe(Recipe::Crossdomain, base);
    train(
        &cfg,
        &checkpoint.config,
        checkpoint.params.clone(),
        train_source,
        valid_source,
        out,
    )
}

#[cfg(test)]
mod tests;
