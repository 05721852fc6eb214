//! Replayable per-epoch sample streams and evaluation sets.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{colored_noise, scale_to_snr};
use super::{
    build_mom, build_noisy_pair, build_sam, select_enrollment, Constituent, Corpus, CorpusError,
    MomSample, NoisySemiSample, SpeakerAwareMixture, Utterance,
};
use crate::signal::{self, MixMode, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplePolicy {
    /// `n_sams` SAMs of `speakers_per_sam` speakers each, summed.
    Mom { n_sams: usize, speakers_per_sam: usize },
    /// A single SAM with its sources kept (supervised and PIT baselines).
    Sam { speakers: usize },
    /// A clean utterance plus interferers and colored noise.
    Noisy { interferers: usize, snr_db: f64 },
}

impl SamplePolicy {
    pub fn speakers_needed(&self) -> usize {
        match *self {
            SamplePolicy::Mom { n_sams, speakers_per_sam } => n_sams * speakers_per_sam,
            SamplePolicy::Sam { speakers } => speakers,
            SamplePolicy::Noisy { interferers, .. } => interferers + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingSample {
    Mom(MomSample),
    Sam(SpeakerAwareMixture),
    Noisy(NoisySemiSample),
}

impl TrainingSample {
    pub fn input(&self) -> &Waveform {
        match self {
            TrainingSample::Mom(m) => &m.input,
            TrainingSample::Sam(s) => &s.mixture,
            TrainingSample::Noisy(n) => &n.input,
        }
    }
}

/// A pre-mixed recording with its speakers listed but no sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SamRecord {
    pub sam_id: String,
    pub mixture: Waveform,
    pub speaker_ids: Vec<String>,
    /// Utterances mixed into the recording when known, so that enrollment
    /// never picks the same recording.
    pub utterance_ids: Vec<String>,
}

/// Weakly labelled data: SAM recordings plus enrollment utterances for their
/// speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct SamPool {
    pub records: Vec<SamRecord>,
    pub enrollments: Corpus,
}

impl SamPool {
    pub fn new(records: Vec<SamRecord>, enrollments: Corpus) -> Result<Self, CorpusError> {
        for r in &records {
            if r.mixture.sample_rate_hz() != enrollments.sample_rate_hz() {
                return Err(CorpusError::SampleRate {
                    expected: enrollments.sample_rate_hz(),
                    found: r.mixture.sample_rate_hz(),
                });
            }
            for s in &r.speaker_ids {
                enrollments.utterances_of(s)?;
            }
        }
        Ok(Self { records, enrollments })
    }

    /// Deterministic split holding out about `fraction` of the records as a
    /// second pool. The held-out pool always contains `min_disjoint` records
    /// with pairwise disjoint speakers (when the pool has them), so it can
    /// form at least one mixture of that many SAMs.
    pub fn split_fraction(&self, fraction: f64, min_disjoint: usize) -> Result<(SamPool, SamPool), CorpusError> {
        let n = self.records.len();
        let target = ((n as f64 * fraction).round() as usize).max(min_disjoint).clamp(1, n.saturating_sub(1).max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0x5a4d_504f_4f4c);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut held: BTreeSet<usize> = BTreeSet::new();
        let mut used: BTreeSet<&str> = BTreeSet::new();
        for &i in &idx {
            if held.len() == min_disjoint.min(target) {
                break;
            }
            let spk = &self.records[i].speaker_ids;
            if spk.iter().all(|s| !used.contains(s.as_str())) {
                used.extend(spk.iter().map(String::as_str));
                held.insert(i);
            }
        }
        for &i in &idx {
            if held.len() >= target {
                break;
            }
            held.insert(i);
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, r) in self.records.iter().enumerate() {
            if held.contains(&i) { b.push(r.clone()) } else { a.push(r.clone()) }
        }
        Ok((
            SamPool::new(a, self.enrollments.clone())?,
            SamPool::new(b, self.enrollments.clone())?,
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TrainSource<'a> {
    Corpus(&'a Corpus),
    Sams(&'a SamPool),
}

impl TrainSource<'_> {
    pub fn sample_rate_hz(&self) -> u32 {
        match self {
            TrainSource::Corpus(c) => c.sample_rate_hz(),
            TrainSource::Sams(p) => p.enrollments.sample_rate_hz(),
        }
    }
}

/// Generator for sample `index` of `epoch`; streams are replayable from
/// `(seed, epoch, index)` alone, whichever worker builds them.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ epoch) ^ index))
}

#[derive(Debug, Clone)]
pub struct EpochStream<'a> {
    source: TrainSource<'a>,
    policy: SamplePolicy,
    batch_size: usize,
    steps: usize,
    segment: usize,
    seed: u64,
    epoch: u64,
    gain_db: Option<(f64, f64)>,
    step: usize,
}

/// Stream of `steps` batches of `batch_size` samples, each cropped to
/// `segment_s` seconds. `gain_db` optionally scales every source by a
/// uniform random gain in that range before mixing.
#[allow(clippy::too_many_arguments)]
pub fn make_epoch<'a>(
    source: TrainSource<'a>,
    policy: SamplePolicy,
    batch_size: usize,
    steps: usize,
    segment_s: f64,
    seed: u64,
    epoch: u64,
    gain_db: Option<(f64, f64)>,
) -> Result<EpochStream<'a>, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::Invalid("batch_size must be positive".into()));
    }
    let segment = signal::segment_len(segment_s, source.sample_rate_hz())?;
    match (source, policy) {
        (TrainSource::Corpus(c), p) => {
            let needed = p.speakers_needed();
            if needed == 0 {
                return Err(CorpusError::Invalid("policy needs at least one speaker".into()));
            }
            if let SamplePolicy::Mom { n_sams, .. } = p {
                if n_sams < 2 {
                    return Err(CorpusError::TooFewSams(n_sams));
                }
            }
            if c.n_speakers() < needed {
                return Err(CorpusError::InsufficientSpeakers {
                    needed,
                    available: c.n_speakers(),
                });
            }
            for s in c.speaker_ids() {
                if c.utterances_of(s)?.len() < 2 {
                    return Err(CorpusError::SingleUtterance(s.to_string()));
                }
            }
        }
        (TrainSource::Sams(pool), SamplePolicy::Mom { n_sams, .. }) => {
            if n_sams < 2 {
                return Err(CorpusError::TooFewSams(n_sams));
            }
            if pool.records.len() < n_sams {
                return Err(CorpusError::Invalid(format!(
                    "pool has {} SAMs, need {n_sams} per sample",
                    pool.records.len()
                )));
            }
        }
        (TrainSource::Sams(_), _) => {
            return Err(CorpusError::Invalid(
                "pre-mixed SAM pools only support the mixture-of-mixtures policy".into(),
            ))
        }
    }
    Ok(EpochStream {
        source,
        policy,
        batch_size,
        steps,
        segment,
        seed,
        epoch,
        gain_db,
        step: 0,
    })
}

impl EpochStream<'_> {
    pub fn segment_len(&self) -> usize {
        self.segment
    }

    pub fn sample(&self, index: u64) -> Result<TrainingSample, CorpusError> {
        let mut rng = sample_rng(self.seed, self.epoch, index);
        match self.source {
            TrainSource::Corpus(c) => corpus_sample(c, self.policy, self.segment, self.gain_db, &mut rng),
            TrainSource::Sams(p) => {
                let SamplePolicy::Mom { n_sams, .. } = self.policy else {
                    unreachable!("checked in make_epoch")
                };
                pool_sample(p, n_sams, self.segment, &mut rng).map(TrainingSample::Mom)
            }
        }
    }
}

impl Iterator for EpochStream<'_> {
    type Item = Result<Vec<TrainingSample>, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.step >= self.steps {
            return None;
        }
        let base = (self.step * self.batch_size) as u64;
        self.step += 1;
        Some((0..self.batch_size as u64).map(|b| self.sample(base + b)).collect())
    }
}

fn crop_utterance<R: Rng + ?Sized>(
    u: &Utterance,
    segment: usize,
    gain_db: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Utterance, CorpusError> {
    let start = signal::random_start(u.waveform.len(), segment, rng);
    let mut waveform = u.waveform.segment(start, segment)?;
    if let Some((lo, hi)) = gain_db {
        let g = if hi > lo { rng.random_range(lo..hi) } else { lo };
        waveform = waveform.scaled(10f64.powf(g / 20.0))?;
    }
    Ok(Utterance {
        waveform,
        ..u.clone()
    })
}

fn draw_speakers<R: Rng + ?Sized>(c: &Corpus, n: usize, rng: &mut R) -> Vec<String> {
    c.speaker_ids()
        .choose_multiple(rng, n)
        .map(|s| s.to_string())
        .collect()
}

fn draw_crop<R: Rng + ?Sized>(
    c: &Corpus,
    speaker: &str,
    segment: usize,
    gain_db: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Utterance, CorpusError> {
    let u = c.utterances_of(speaker)?.choose(rng).expect("speaker has utterances");
    crop_utterance(u, segment, gain_db, rng)
}

fn corpus_sample<R: Rng + ?Sized>(
    c: &Corpus,
    policy: SamplePolicy,
    segment: usize,
    gain_db: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<TrainingSample, CorpusError> {
    let speakers = draw_speakers(c, policy.speakers_needed(), rng);
    let mut crops = Vec::with_capacity(speakers.len());
    for s in &speakers {
        crops.push(draw_crop(c, s, segment, gain_db, rng)?);
    }
    match policy {
        SamplePolicy::Mom { speakers_per_sam, .. } => {
            let mut sams = Vec::new();
            for group in crops.chunks(speakers_per_sam) {
                sams.push(build_sam(group, c, rng, true, Some(segment))?);
            }
            Ok(TrainingSample::Mom(build_mom(sams)?))
        }
        SamplePolicy::Sam { .. } => Ok(TrainingSample::Sam(build_sam(&crops, c, rng, true, Some(segment))?)),
        SamplePolicy::Noisy { snr_db, .. } => {
            let (clean, interferers) = crops.split_first().expect("at least one speaker");
            let refs: Vec<&Waveform> = interferers.iter().map(|u| &u.waveform).collect();
            let noise = colored_noise(segment, c.sample_rate_hz(), rng)?;
            let noise = if refs.is_empty() {
                scale_to_snr(&noise, &clean.waveform, snr_db)?
            } else {
                scale_to_snr(&noise, &signal::mix(&refs, MixMode::Minimum)?, snr_db)?
            };
            Ok(TrainingSample::Noisy(build_noisy_pair(clean, interferers, &noise, c, rng, Some(segment))?))
        }
    }
}

fn pool_sample<R: Rng + ?Sized>(
    pool: &SamPool,
    n_sams: usize,
    segment: usize,
    rng: &mut R,
) -> Result<MomSample, CorpusError> {
    for _ in 0..100 {
        let mut order: Vec<usize> = (0..pool.records.len()).collect();
        order.shuffle(rng);
        let mut used: BTreeSet<&str> = BTreeSet::new();
        let mut chosen = Vec::new();
        for i in order {
            let r = &pool.records[i];
            if r.speaker_ids.iter().all(|s| !used.contains(s.as_str())) {
                used.extend(r.speaker_ids.iter().map(String::as_str));
                chosen.push(r);
                if chosen.len() == n_sams {
                    break;
                }
            }
        }
        if chosen.len() < n_sams {
            continue;
        }
        let mut sams = Vec::with_capacity(n_sams);
        for r in chosen {
            let start = signal::random_start(r.mixture.len(), segment, rng);
            let mixture = r.mixture.segment(start, segment)?;
            let mut constituents = Vec::with_capacity(r.speaker_ids.len());
            for (k, s) in r.speaker_ids.iter().enumerate() {
                let exclude = r.utterance_ids.get(k).map(String::as_str).unwrap_or("");
                let e = select_enrollment(&pool.enrollments, s, exclude, Some(segment), rng)?;
                constituents.push(Constituent {
                    speaker_id: s.clone(),
                    enrollment_id: e.utterance_id,
                    enrollment: e.waveform,
                    source_id: None,
                    source: None,
                });
            }
            sams.push(SpeakerAwareMixture {
                mixture,
                constituents,
                contains_noise: false,
            });
        }
        return build_mom(sams);
    }
    Err(CorpusError::Invalid(format!(
        "could not find {n_sams} SAMs with disjoint speakers in the pool"
    )))
}

/// Full-length evaluation mixture. `sources` is absent when only the weak
/// labels were loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMixture {
    pub mixture_id: String,
    pub mixture: Waveform,
    pub speaker_ids: Vec<String>,
    pub utterance_ids: Vec<String>,
    pub sources: Option<Vec<Waveform>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub mixtures: Vec<EvalMixture>,
    /// `(mixture_id, speaker_id)` to enrollment utterance.
    pub enrollments: BTreeMap<(String, String), Utterance>,
}

impl EvalSet {
    pub fn enrollment(&self, mixture_id: &str, speaker_id: &str) -> Result<&Utterance, CorpusError> {
        self.enrollments
            .get(&(mixture_id.to_string(), speaker_id.to_string()))
            .ok_or_else(|| {
                CorpusError::Invalid(format!(
                    "no enrollment row for mixture {mixture_id}, speaker {speaker_id}"
                ))
            })
    }

    /// Enrollment utterances as a corpus, for use as an adaptation pool.
    pub fn enrollment_pool(&self, sample_rate_hz: u32) -> Result<Corpus, CorpusError> {
        let mut seen = BTreeSet::new();
        let utts = self
            .enrollments
            .values()
            .filter(|u| seen.insert(u.utterance_id.clone()))
            .cloned()
            .collect();
        Corpus::new(sample_rate_hz, utts)
    }

    /// The weak-label view: mixtures and speaker lists, no sources.
    pub fn sam_pool(&self, enrollments: Corpus) -> Result<SamPool, CorpusError> {
        let records = self
            .mixtures
            .iter()
            .map(|m| SamRecord {
                sam_id: m.mixture_id.clone(),
                mixture: m.mixture.clone(),
                speaker_ids: m.speaker_ids.clone(),
                utterance_ids: m.utterance_ids.clone(),
            })
            .collect();
        SamPool::new(records, enrollments)
    }
}

/// Builds `n_mixtures` full-length mixtures of `speakers_per_mixture`
/// speakers from `sources`. Enrollments come from `enroll_pool` when given,
/// otherwise from other utterances in `sources`. With `noise_snr_db`, colored
/// noise is added at that SNR relative to the mean per-speaker energy.
pub fn build_eval_set(
    sources: &Corpus,
    enroll_pool: Option<&Corpus>,
    n_mixtures: usize,
    speakers_per_mixture: usize,
    noise_snr_db: Option<f64>,
    seed: u64,
) -> Result<EvalSet, CorpusError> {
    if speakers_per_mixture == 0 || sources.n_speakers() < speakers_per_mixture {
        return Err(CorpusError::InsufficientSpeakers {
            needed: speakers_per_mixture.max(1),
            available: sources.n_speakers(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mixtures = Vec::with_capacity(n_mixtures);
    let mut enrollments = BTreeMap::new();
    for i in 0..n_mixtures {
        let mixture_id = format!("mix{i:04}");
        let speakers = draw_speakers(sources, speakers_per_mixture, &mut rng);
        let mut utts = Vec::with_capacity(speakers.len());
        for s in &speakers {
            utts.push(sources.utterances_of(s)?.choose(&mut rng).expect("non-empty").clone());
        }
        let refs: Vec<&Waveform> = utts.iter().map(|u| &u.waveform).collect();
        let clean = signal::mix(&refs, MixMode::Minimum)?;
        let len = clean.len();
        let mixture = match noise_snr_db {
            Some(snr) => {
                let mean_energy = refs.iter().map(|w| w.slice(0, len).map(|s| s.energy())).sum::<Result<f64, _>>()?
                    / refs.len() as f64;
                let noise = colored_noise(len, sources.sample_rate_hz(), &mut rng)?;
                let reference = Waveform::new(vec![(mean_energy / len as f64).sqrt(); len], sources.sample_rate_hz())?;
                let noise = scale_to_snr(&noise, &reference, snr)?;
                signal::mix(&[&clean, &noise], MixMode::Minimum)?
            }
            None => clean,
        };
        for u in &utts {
            let e = select_enrollment(enroll_pool.unwrap_or(sources), &u.speaker_id, &u.utterance_id, None, &mut rng)?;
            enrollments.insert((mixture_id.clone(), u.speaker_id.clone()), e);
        }
        mixtures.push(EvalMixture {
            mixture_id,
            mixture,
            speaker_ids: speakers,
            utterance_ids: utts.iter().map(|u| u.utterance_id.clone()).collect(),
            sources: Some(utts.iter().map(|u| u.waveform.slice(0, len)).collect::<Result<_, _>>()?),
        });
    }
    Ok(EvalSet { mixtures, enrollments })
}
