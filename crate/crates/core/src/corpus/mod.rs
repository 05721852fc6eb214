//! Speaker-labelled corpora and the training/evaluation samples built from
//! them: speaker-aware mixtures (SAMs), mixtures of SAMs, and the
//! clean-plus-noisy pairs of the semi-supervised setting.

mod epoch;
mod manifest;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::signal::{self, wav::WavError, MixMode, SignalError, Waveform};

pub use epoch::{
    build_eval_set, make_epoch, sample_rng, EpochStream, EvalMixture, EvalSet, SamPool,
    SamRecord, SamplePolicy, TrainSource, TrainingSample,
};
pub use manifest::{
    load_enrollment_list, load_eval_set, load_manifest, load_sam_manifest, write_corpus,
    write_eval_set, EnrollmentRow, EvalFiles,
};
pub use synth::{
    apply_spectral_tilt, colored_noise, draw_signatures, generate_synthetic_corpus, min_f0_spacing_hz,
    render_utterance, scale_to_snr, SpeakerSignature, SyntheticSpec,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}, row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("duplicate utterance id {0}")]
    DuplicateUtterance(String),
    #[error("utterance {0} has an empty speaker id")]
    EmptySpeaker(String),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("unknown utterance {0}")]
    UnknownUtterance(String),
    #[error(
        "speaker {0} has a single utterance; enrollment needs a different recording of the same speaker (add at least one more utterance)"
    )]
    SingleUtterance(String),
    #[error("speaker {0} appears more than once")]
    DuplicateSpeaker(String),
    #[error("need at least {needed} speakers, corpus has {available}")]
    InsufficientSpeakers { needed: usize, available: usize },
    #[error("a mixture of mixtures needs at least 2 SAMs, got {0}")]
    TooFewSams(usize),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("sample rate mismatch: corpus at {expected} Hz, waveform at {found} Hz")]
    SampleRate { expected: u32, found: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub waveform: Waveform,
}

/// Utterances grouped by speaker. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sample_rate_hz: u32,
    speakers: BTreeMap<String, Vec<Utterance>>,
}

impl Corpus {
    pub fn new(sample_rate_hz: u32, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut speakers: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
        for u in utterances {
            if u.speaker_id.is_empty() {
                return Err(CorpusError::EmptySpeaker(u.utterance_id));
            }
            if !seen.insert(u.utterance_id.clone()) {
                return Err(CorpusError::DuplicateUtterance(u.utterance_id));
            }
            if u.waveform.sample_rate_hz() != sample_rate_hz {
                return Err(CorpusError::SampleRate {
                    expected: sample_rate_hz,
                    found: u.waveform.sample_rate_hz(),
                });
            }
            speakers.entry(u.speaker_id.clone()).or_default().push(u);
        }
        Ok(Self {
            sample_rate_hz,
            speakers,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn speaker_ids(&self) -> Vec<&str> {
        self.speakers.keys().map(String::as_str).collect()
    }

    pub fn utterances_of(&self, speaker_id: &str) -> Result<&[Utterance], CorpusError> {
        self.speakers
            .get(speaker_id)
            .map(Vec::as_slice)
            .ok_or_else(|| CorpusError::UnknownSpeaker(speaker_id.to_string()))
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.speakers.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.speakers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn utterance(&self, utterance_id: &str) -> Result<&Utterance, CorpusError> {
        self.utterances()
            .find(|u| u.utterance_id == utterance_id)
            .ok_or_else(|| CorpusError::UnknownUtterance(utterance_id.to_string()))
    }

    /// Splits off the last `held_out` utterances of every speaker.
    pub fn split_per_speaker(&self, held_out: usize) -> Result<(Corpus, Corpus), CorpusError> {
        let mut keep = Vec::new();
        let mut rest = Vec::new();
        for utts in self.speakers.values() {
            if utts.len() <= held_out {
                return Err(CorpusError::Invalid(format!(
                    "cannot hold out {held_out} of {} utterances",
                    utts.len()
                )));
            }
            let cut = utts.len() - held_out;
            keep.extend_from_slice(&utts[..cut]);
            rest.extend_from_slice(&utts[cut..]);
        }
        Ok((
            Corpus::new(self.sample_rate_hz, keep)?,
            Corpus::new(self.sample_rate_hz, rest)?,
        ))
    }

    /// Keeps only the listed speakers.
    pub fn with_speakers(&self, ids: &[&str]) -> Result<Corpus, CorpusError> {
        let mut utts = Vec::new();
        for id in ids {
            utts.extend_from_slice(self.utterances_of(id)?);
        }
        Corpus::new(self.sample_rate_hz, utts)
    }

    /// Applies `f` to every waveform, keeping labels.
    pub fn map_waveforms<F>(&self, mut f: F) -> Result<Corpus, CorpusError>
    where
        F: FnMut(&Waveform) -> Result<Waveform, CorpusError>,
    {
        let mut utts = Vec::with_capacity(self.len());
        for u in self.utterances() {
            utts.push(Utterance {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                waveform: f(&u.waveform)?,
            });
        }
        Corpus::new(self.sample_rate_hz, utts)
    }
}

/// One constituent speaker of a SAM. `source` is only kept for evaluation
/// and supervised baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Constituent {
    pub speaker_id: String,
    pub enrollment_id: String,
    pub enrollment: Waveform,
    pub source_id: Option<String>,
    pub source: Option<Waveform>,
}

/// A mixture whose speakers are known and have enrollment utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerAwareMixture {
    pub mixture: Waveform,
    pub constituents: Vec<Constituent>,
    pub contains_noise: bool,
}

impl SpeakerAwareMixture {
    pub fn speaker_ids(&self) -> impl Iterator<Item = &str> {
        self.constituents.iter().map(|c| c.speaker_id.as_str())
    }

    pub fn n_speakers(&self) -> usize {
        self.constituents.len()
    }
}

/// Model input formed by summing two or more SAMs.
#[derive(Debug, Clone, PartialEq)]
pub struct MomSample {
    pub input: Waveform,
    pub sams: Vec<SpeakerAwareMixture>,
}

/// Clean single-speaker utterance plus a noisy SAM of other speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySemiSample {
    pub clean_source: Utterance,
    pub noisy_sam: SpeakerAwareMixture,
    pub input: Waveform,
    pub target_enrollment: Waveform,
}

impl NoisySemiSample {
    /// The part of the input that is not the target: `input - clean`.
    pub fn residual_target(&self) -> &Waveform {
        &self.noisy_sam.mixture
    }
}

/// A different utterance of `speaker_id`, drawn uniformly and cropped to
/// `segment` samples when given. A pool holding a single utterance is fine
/// as long as it is not the excluded one.
pub fn select_enrollment<R: Rng + ?Sized>(
    corpus: &Corpus,
    speaker_id: &str,
    exclude_utterance_id: &str,
    segment: Option<usize>,
    rng: &mut R,
) -> Result<Utterance, CorpusError> {
    let candidates: Vec<&Utterance> = corpus
        .utterances_of(speaker_id)?
        .iter()
        .filter(|u| u.utterance_id != exclude_utterance_id)
        .collect();
    let Some(&chosen) = candidates.choose(rng) else {
        return Err(CorpusError::SingleUtterance(speaker_id.to_string()));
    };
    let waveform = match segment {
        Some(len) => {
            let start = signal::random_start(chosen.waveform.len(), len, rng);
            chosen.waveform.segment(start, len)?
        }
        None => chosen.waveform.clone(),
    };
    Ok(Utterance {
        utterance_id: chosen.utterance_id.clone(),
        speaker_id: chosen.speaker_id.clone(),
        waveform,
    })
}

fn ensure_distinct<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateSpeaker(id.to_string()));
        }
    }
    Ok(())
}

/// Sums `utterances` into a SAM and draws one enrollment per speaker.
pub fn build_sam<R: Rng + ?Sized>(
    utterances: &[Utterance],
    corpus: &Corpus,
    rng: &mut R,
    keep_sources: bool,
    enroll_segment: Option<usize>,
) -> Result<SpeakerAwareMixture, CorpusError> {
    if utterances.is_empty() {
        return Err(CorpusError::Invalid("a SAM needs at least one utterance".into()));
    }
    ensure_distinct(utterances.iter().map(|u| u.speaker_id.as_str()))?;
    let refs: Vec<&Waveform> = utterances.iter().map(|u| &u.waveform).collect();
    let mixture = signal::mix(&refs, MixMode::Minimum)?;
    let mut constituents = Vec::with_capacity(utterances.len());
    for u in utterances {
        let e = select_enrollment(corpus, &u.speaker_id, &u.utterance_id, enroll_segment, rng)?;
        constituents.push(Constituent {
            speaker_id: u.speaker_id.clone(),
            enrollment_id: e.utterance_id,
            enrollment: e.waveform,
            source_id: keep_sources.then(|| u.utterance_id.clone()),
            source: keep_sources.then(|| u.waveform.slice(0, mixture.len())).transpose()?,
        });
    }
    Ok(SpeakerAwareMixture {
        mixture,
        constituents,
        contains_noise: false,
    })
}

/// Sums SAM mixtures into one input. Speakers must not repeat across SAMs.
pub fn build_mom(sams: Vec<SpeakerAwareMixture>) -> Result<MomSample, CorpusError> {
    if sams.len() < 2 {
        return Err(CorpusError::TooFewSams(sams.len()));
    }
    ensure_distinct(sams.iter().flat_map(|s| s.speaker_ids()))?;
    let refs: Vec<&Waveform> = sams.iter().map(|s| &s.mixture).collect();
    let input = signal::mix(&refs, MixMode::Minimum)?;
    Ok(MomSample { input, sams })
}

/// Clean target utterance plus a noisy SAM of `interferers` and `noise`.
pub fn build_noisy_pair<R: Rng + ?Sized>(
    clean: &Utterance,
    interferers: &[Utterance],
    noise: &Waveform,
    corpus: &Corpus,
    rng: &mut R,
    enroll_segment: Option<usize>,
) -> Result<NoisySemiSample, CorpusError> {
    if interferers.iter().any(|u| u.speaker_id == clean.speaker_id) {
        return Err(CorpusError::DuplicateSpeaker(clean.speaker_id.clone()));
    }
    let mut sam = build_sam(interferers, corpus, rng, false, enroll_segment)?;
    sam.mixture = signal::mix(&[&sam.mixture, noise], MixMode::Minimum)?;
    sam.contains_noise = true;
    let len = sam.mixture.len().min(clean.waveform.len());
    sam.mixture = sam.mixture.slice(0, len)?;
    let clean_source = Utterance {
        waveform: clean.waveform.slice(0, len)?,
        ..clean.clone()
    };
    let input = signal::mix(&[&clean_source.waveform, &sam.mixture], MixMode::Minimum)?;
    let enrollment = select_enrollment(corpus, &clean.speaker_id, &clean.utterance_id, enroll_segment, rng)?;
    Ok(NoisySemiSample {
        clean_source,
        noisy_sam: sam,
        input,
        target_enrollment: enrollment.waveform,
    })
}
