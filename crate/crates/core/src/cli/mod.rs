//! `samom` command line: corpus synthesis, mixing, training, adaptation,
//! evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 gradient check failure, 2 usage, configuration
//! or data error, 3 training aborted on a non-finite value.

mod config;
pub mod spectrogram;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{
    apply_spectral_tilt, build_eval_set, generate_synthetic_corpus, load_eval_set, load_manifest, load_sam_manifest,
    write_corpus, write_eval_set, Corpus, CorpusError, SamPool, SyntheticSpec, TrainSource,
};
use crate::engine::{
    adapt_crossdomain, adapt_testset, evaluate_detailed, train, EngineError, Estimator, TrainOutcome,
};
use crate::gradcheck::{run_suites, GradcheckConfig, GradcheckError, Suite};
use crate::model::{Checkpoint, CheckpointError, ModelParams};
use crate::objectives::Fault;

pub use config::{DataConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Gradcheck(#[from] GradcheckError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed for: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradcheckFailed(_) => 1,
            CliError::Engine(EngineError::NonFinite { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "samom", version, about = "Weakly-supervised target-speaker extraction")]
struct Cli {
    /// Run file (TOML) for train, adapt and evaluate.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run file's seed; seeds synth and mix directly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the run file's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic speaker corpus (WAVs plus manifest).
    Synth(SynthArgs),
    /// Build full-length evaluation mixtures with an enrollment list.
    Mix(MixArgs),
    /// Train a model from the run file.
    Train,
    /// Adapt a trained model with the remix objective.
    Adapt(AdaptArgs),
    /// Score a model on full-length mixtures.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of every objective's gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    speakers: usize,
    /// Utterances per speaker
    #[arg(long)]
    utts: usize,
    /// Length of each utterance
    #[arg(long)]
    seconds: f64,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// First-order spectral tilt `y[n] = x[n] - c x[n-1]` applied to every
    /// utterance, for a shifted domain.
    #[arg(long, allow_hyphen_values = true)]
    tilt: Option<f64>,
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Corpus manifest to draw sources from.
    #[arg(long)]
    manifest: PathBuf,
    /// Number of mixtures to write
    #[arg(long)]
    mixtures: usize,
    #[arg(long, default_value_t = 2)]
    speakers_per_mixture: usize,
    /// Utterances per speaker reserved as enrollments and never mixed.
    #[arg(long, default_value_t = 2)]
    enroll_per_speaker: usize,
    /// Adds colored noise at this SNR relative to the mean speaker energy.
    #[arg(long, allow_hyphen_values = true)]
    noise_snr_db: Option<f64>,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RecipeArg {
    Testset,
    Crossdomain,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long, value_enum)]
    recipe: RecipeArg,
    /// Model to adapt; defaults to the run file's `data.init_checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model to score; defaults to the run file's `data.init_checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Enrollment list; overrides `data.eval_enrollments`.
    #[arg(long)]
    enrollments: Option<PathBuf>,
    /// Writes mixture, source and estimate spectrogram PNGs here.
    #[arg(long)]
    dump_spectrograms: Option<PathBuf>,
    /// Score the true sources instead of a model.
    #[arg(long, conflicts_with = "passthrough")]
    oracle: bool,
    /// Score the unprocessed mixture instead of a model.
    #[arg(long)]
    passthrough: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipResidual,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Limit to one objective: supervised, pit, mixit, samom, noisy_semisup.
    #[arg(long)]
    objective: Option<String>,
    /// Deliberately break a gradient to confirm the check catches it.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(cli: &Cli, from_config: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .ok_or_else(|| CliError::Config("an output directory is required (--out or out_dir)".into()))?;
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<(), CliError> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("synth needs --out".into()))?;
    if a.speakers < 2 {
        return Err(CliError::Config(format!("--speakers must be at least 2, got {}", a.speakers)));
    }
    if let Some(c) = a.tilt {
        if !(c.abs() < 1.0) {
            return Err(CliError::Config(format!("--tilt must lie in (-1, 1), got {c}")));
        }
    }
    let spec = SyntheticSpec {
        n_speakers: a.speakers,
        utts_per_speaker: a.utts,
        duration_s: a.seconds,
        sample_rate_hz: a.sample_rate,
    };
    let mut corpus = generate_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0)))
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(c) = a.tilt {
        corpus = corpus.map_waveforms(|w| apply_spectral_tilt(w, c))?;
    }
    let manifest = write_corpus(out, &corpus)?;
    println!("wrote {} utterances to {}", corpus.len(), manifest.display());
    Ok(())
}

fn cmd_mix(cli: &Cli, a: &MixArgs) -> Result<(), CliError> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("mix needs --out".into()))?;
    let corpus = load_manifest(&a.manifest, a.sample_rate)?;
    let (sources, enroll_pool) = corpus.split_per_speaker(a.enroll_per_speaker)?;
    let set = build_eval_set(
        &sources,
        Some(&enroll_pool),
        a.mixtures,
        a.speakers_per_mixture,
        a.noise_snr_db,
        cli.seed.unwrap_or(0),
    )?;
    let files = write_eval_set(out, &set)?;
    println!(
        "wrote {} mixtures: {}, {}, {}",
        set.mixtures.len(),
        files.mixtures.display(),
        files.enrollments.display(),
        files.enroll_pool.display()
    );
    Ok(())
}

/// Training corpus and a validation corpus, held out per speaker unless a
/// separate manifest is configured.
fn train_valid(data: &DataConfig) -> Result<(Corpus, Corpus), CliError> {
    let corpus = load_manifest(config::required(&data.train_manifest, "train_manifest")?, data.sample_rate_hz)?;
    match &data.valid_manifest {
        Some(v) => Ok((corpus, load_manifest(v, data.sample_rate_hz)?)),
        None => Ok(corpus.split_per_speaker(data.valid_holdout_per_speaker)?),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(path)?)
}

fn report_outcome(out: &Path, outcome: &TrainOutcome) {
    println!(
        "finished {} steps; best validation loss {:.4}; checkpoints in {}",
        outcome.state.step,
        outcome.best_validation(),
        out.display()
    );
}

fn cmd_train(cli: &Cli) -> Result<(), CliError> {
    let cfg = run_config(cli)?;
    let out = out_dir(cli, cfg.out_dir.as_deref())?;
    std::fs::write(out.join("run.toml"), cfg.to_toml()).map_err(io_err(&out))?;
    let (train_c, valid_c) = train_valid(&cfg.data)?;
    let params = match &cfg.data.init_checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config != cfg.model {
                return Err(CliError::Config(format!(
                    "{} was saved for a different model configuration",
                    p.display()
                )));
            }
            ck.params
        }
        None => ModelParams::init(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let outcome = train(
        &cfg.train,
        &cfg.model,
        params,
        TrainSource::Corpus(&train_c),
        TrainSource::Corpus(&valid_c),
        Some(&out),
    )?;
    report_outcome(&out, &outcome);
    Ok(())
}

fn cmd_adapt(cli: &Cli, a: &AdaptArgs) -> Result<(), CliError> {
    let cfg = run_config(cli)?;
    let ck_path = a
        .checkpoint
        .as_deref()
        .or(cfg.data.init_checkpoint.as_deref())
        .ok_or_else(|| CliError::Config("adapt needs --checkpoint or data.init_checkpoint".into()))?;
    let out = out_dir(cli, cfg.out_dir.as_deref())?;
    let ck = load_checkpoint(ck_path)?;
    let outcome = match a.recipe {
        RecipeArg::Testset => {
            let sr = cfg.data.sample_rate_hz;
            let records = load_sam_manifest(config::required(&cfg.data.adapt_mixtures, "adapt_mixtures")?, sr)?;
            let pool = load_manifest(config::required(&cfg.data.adapt_enroll_pool, "adapt_enroll_pool")?, sr)?;
            adapt_testset(&ck, &SamPool::new(records, pool)?, &cfg.train, Some(&out))?
        }
        RecipeArg::Crossdomain => {
            let (train_c, valid_c) = train_valid(&cfg.data)?;
            adapt_crossdomain(
                &ck,
                TrainSource::Corpus(&train_c),
                TrainSource::Corpus(&valid_c),
                &cfg.train,
                Some(&out),
            )?
        }
    };
    report_outcome(&out, &outcome);
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = run_config(cli)?;
    let data = &cfg.data;
    let enrollments = match &a.enrollments {
        Some(p) => p.as_path(),
        None => config::required(&data.eval_enrollments, "eval_enrollments")?,
    };
    let corpus = load_manifest(config::required(&data.eval_corpus, "eval_corpus")?, data.sample_rate_hz)?;
    let set = load_eval_set(
        config::required(&data.eval_mixtures, "eval_mixtures")?,
        enrollments,
        &corpus,
    )?;
    let ck = if a.oracle || a.passthrough {
        None
    } else {
        let path = a
            .checkpoint
            .as_deref()
            .or(data.init_checkpoint.as_deref())
            .ok_or_else(|| CliError::Config("evaluate needs --checkpoint, --oracle or --passthrough".into()))?;
        Some(load_checkpoint(path)?)
    };
    let est = match &ck {
        _ if a.oracle => Estimator::Oracle,
        _ if a.passthrough => Estimator::Passthrough,
        Some(ck) => Estimator::Model {
            config: &ck.config,
            params: &ck.params,
        },
        None => unreachable!("checkpoint loaded above"),
    };
    let result = evaluate_detailed(est, &set)?;
    print!("{}", result.report.to_table());
    if let Some(dir) = cli.out.as_deref().or(cfg.out_dir.as_deref()) {
        result.report.write(dir).map_err(io_err(dir))?;
    }
    if let Some(dir) = &a.dump_spectrograms {
        for m in &set.mixtures {
            let sub = dir.join(&m.mixture_id);
            std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            let png = |name: String, x: &[f64]| {
                let path = sub.join(name);
                spectrogram::write_png(&path, x).map_err(|e| CliError::Io {
                    path,
                    source: std::io::Error::other(e),
                })
            };
            png("mixture.png".into(), m.mixture.samples())?;
            for (s, src) in m.speaker_ids.iter().zip(m.sources.iter().flatten()) {
                png(format!("source_{s}.png"), src.samples())?;
            }
        }
        for e in &result.estimates {
            let path = dir.join(&e.mixture_id).join(format!("estimate_{}.png", e.speaker_id));
            spectrogram::write_png(&path, e.waveform.samples()).map_err(|err| CliError::Io {
                path: path.clone(),
                source: std::io::Error::other(err),
            })?;
        }
    }
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<(), CliError> {
    let suites = match &a.objective {
        Some(name) => vec![Suite::parse(name).map_err(|e| CliError::Config(e.to_string()))?],
        None => Suite::ALL.to_vec(),
    };
    let cfg = GradcheckConfig {
        seed: cli.seed.unwrap_or(0),
        fault: match a.inject_fault {
            Some(FaultArg::FlipResidual) => Fault::FlipResidualGradient,
            None => Fault::None,
        },
        ..GradcheckConfig::default()
    };
    let reports = run_suites(&suites, &cfg)?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.suite.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_target(false)
        .try_init();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::Mix(a) => cmd_mix(&cli, a),
        Command::Train => cmd_train(&cli),
        Command::Adapt(a) => cmd_adapt(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
