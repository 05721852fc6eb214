//! CSV manifests.
//!
//! * corpus: `utterance_id,speaker_id,path,duration_s`
//! * mixtures: `mixture_id,path,speaker_ids,utterance_ids` (ids `;`-separated)
//! * enrollments: `mixture_id,target_speaker_id,enrollment_utterance_id`
//!
//! Paths are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::epoch::{EvalMixture, EvalSet, SamRecord};
use super::{Corpus, CorpusError, Utterance};
use crate::signal::wav::{read_wav, write_wav};

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRow {
    utterance_id: String,
    speaker_id: String,
    path: String,
    duration_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MixtureRow {
    mixture_id: String,
    path: String,
    speaker_ids: String,
    utterance_ids: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentRow {
    pub mixture_id: String,
    pub target_speaker_id: String,
    pub enrollment_utterance_id: String,
}

/// Paths written by [`write_eval_set`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalFiles {
    pub mixtures: PathBuf,
    pub enrollments: PathBuf,
    /// Corpus manifest holding only the enrollment utterances.
    pub enroll_pool: PathBuf,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> CorpusError {
    CorpusError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn row_err(path: &Path, row: usize, message: impl ToString) -> CorpusError {
    CorpusError::Row {
        path: path.to_path_buf(),
        row,
        message: message.to_string(),
    }
}

/// Rows as typed records; row numbers count data rows from 1.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| manifest_err(path, e.to_string()))?;
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| manifest_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(manifest_err(
            path,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| row_err(path, i + 1, e)))
        .collect()
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn split_ids(s: &str) -> Vec<String> {
    s.split(';').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

pub fn load_manifest(path: &Path, sample_rate_hz: u32) -> Result<Corpus, CorpusError> {
    let rows: Vec<CorpusRow> = read_rows(path, &["utterance_id", "speaker_id", "path", "duration_s"])?;
    let dir = base_dir(path);
    let mut utts = Vec::with_capacity(rows.len());
    let mut seen = BTreeMap::new();
    for (i, row) in rows.into_iter().enumerate() {
        let n = i + 1;
        if row.speaker_id.is_empty() {
            return Err(row_err(path, n, "empty speaker_id"));
        }
        if let Some(prev) = seen.insert(row.utterance_id.clone(), n) {
            return Err(row_err(path, n, format!("duplicate utterance_id {} (first at row {prev})", row.utterance_id)));
        }
        let waveform = read_wav(&dir.join(&row.path), sample_rate_hz).map_err(|e| row_err(path, n, e))?;
        if (waveform.duration_s() - row.duration_s).abs() > 0.01 {
            log::warn!(
                "{}, row {n}: listed duration {} s, file holds {:.4} s",
                path.display(),
                row.duration_s,
                waveform.duration_s()
            );
        }
        utts.push(Utterance {
            utterance_id: row.utterance_id,
            speaker_id: row.speaker_id,
            waveform,
        });
    }
    Corpus::new(sample_rate_hz, utts)
}

fn io_err(path: &Path, e: impl ToString) -> CorpusError {
    manifest_err(path, e.to_string())
}

/// Writes `wav/<utterance_id>.wav` files and `manifest.csv` under `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf, CorpusError> {
    fs::create_dir_all(dir.join("wav")).map_err(|e| io_err(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| io_err(&manifest, e))?;
    for u in corpus.utterances() {
        let rel = format!("wav/{}.wav", u.utterance_id);
        write_wav(&dir.join(&rel), &u.waveform)?;
        w.serialize(CorpusRow {
            utterance_id: u.utterance_id.clone(),
            speaker_id: u.speaker_id.clone(),
            path: rel,
            duration_s: u.waveform.duration_s(),
        })
        .map_err(|e| io_err(&manifest, e))?;
    }
    w.flush().map_err(|e| io_err(&manifest, e))?;
    Ok(manifest)
}

/// Loads the mixture recordings and their speaker lists only.
pub fn load_sam_manifest(path: &Path, sample_rate_hz: u32) -> Result<Vec<SamRecord>, CorpusError> {
    let rows: Vec<MixtureRow> = read_rows(path, &["mixture_id", "path", "speaker_ids", "utterance_ids"])?;
    let dir = base_dir(path);
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let speaker_ids = split_ids(&row.speaker_ids);
            if speaker_ids.is_empty() {
                return Err(row_err(path, i + 1, "no speakers listed"));
            }
            let utterance_ids = split_ids(&row.utterance_ids);
            if !utterance_ids.is_empty() && utterance_ids.len() != speaker_ids.len() {
                return Err(row_err(path, i + 1, "speaker_ids and utterance_ids differ in count"));
            }
            Ok(SamRecord {
                sam_id: row.mixture_id,
                mixture: read_wav(&dir.join(&row.path), sample_rate_hz).map_err(|e| row_err(path, i + 1, e))?,
                speaker_ids,
                utterance_ids,
            })
        })
        .collect()
}

pub fn load_enrollment_list(path: &Path) -> Result<Vec<EnrollmentRow>, CorpusError> {
    read_rows(path, &["mixture_id", "target_speaker_id", "enrollment_utterance_id"])
}

/// Evaluation set from a mixture manifest and an enrollment list. Sources
/// and enrollment utterances are looked up in `corpus`.
pub fn load_eval_set(mixtures: &Path, enrollments: &Path, corpus: &Corpus) -> Result<EvalSet, CorpusError> {
    let records = load_sam_manifest(mixtures, corpus.sample_rate_hz())?;
    let rows = load_enrollment_list(enrollments)?;
    let mut enroll = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        let u = corpus
            .utterance(&r.enrollment_utterance_id)
            .map_err(|e| row_err(enrollments, i + 1, e))?;
        if u.speaker_id != r.target_speaker_id {
            return Err(row_err(
                enrollments,
                i + 1,
                format!("utterance {} belongs to {}, not {}", u.utterance_id, u.speaker_id, r.target_speaker_id),
            ));
        }
        enroll.insert((r.mixture_id, r.target_speaker_id), u.clone());
    }
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        for s in &rec.speaker_ids {
            if !enroll.contains_key(&(rec.sam_id.clone(), s.clone())) {
                return Err(manifest_err(
                    enrollments,
                    format!("missing enrollment row for mixture {} speaker {s}", rec.sam_id),
                ));
            }
        }
        if rec.utterance_ids.is_empty() {
            return Err(manifest_err(mixtures, format!("mixture {} lists no source utterances", rec.sam_id)));
        }
        let len = rec.mixture.len();
        let sources = rec
            .utterance_ids
            .iter()
            .map(|id| {
                let w = &corpus.utterance(id)?.waveform;
                Ok(w.slice(0, len.min(w.len()))?)
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        if sources.iter().any(|s| s.len() != len) {
            return Err(manifest_err(mixtures, format!("mixture {} is longer than its sources", rec.sam_id)));
        }
        out.push(EvalMixture {
            mixture_id: rec.sam_id,
            mixture: rec.mixture,
            speaker_ids: rec.speaker_ids,
            utterance_ids: rec.utterance_ids,
            sources: Some(sources),
        });
    }
    Ok(EvalSet {
        mixtures: out,
        enrollments: enroll,
    })
}

/// Writes `mixtures.csv` with `mix/<id>.wav`, `enrollments.csv`, and a
/// corpus manifest `enroll_pool/manifest.csv` holding copies of the
/// enrollment utterances.
pub fn write_eval_set(dir: &Path, set: &EvalSet) -> Result<EvalFiles, CorpusError> {
    fs::create_dir_all(dir.join("mix")).map_err(|e| io_err(dir, e))?;
    let files = EvalFiles {
        mixtures: dir.join("mixtures.csv"),
        enrollments: dir.join("enrollments.csv"),
        enroll_pool: dir.join("enroll_pool").join("manifest.csv"),
    };
    let mut w = csv::Writer::from_path(&files.mixtures).map_err(|e| io_err(&files.mixtures, e))?;
    for m in &set.mixtures {
        let rel = format!("mix/{}.wav", m.mixture_id);
        write_wav(&dir.join(&rel), &m.mixture)?;
        w.serialize(MixtureRow {
            mixture_id: m.mixture_id.clone(),
            path: rel,
            speaker_ids: m.speaker_ids.join(";"),
            utterance_ids: m.utterance_ids.join(";"),
        })
        .map_err(|e| io_err(&files.mixtures, e))?;
    }
    w.flush().map_err(|e| io_err(&files.mixtures, e))?;

    let mut w = csv::Writer::from_path(&files.enrollments).map_err(|e| io_err(&files.enrollments, e))?;
    for ((mixture_id, speaker), u) in &set.enrollments {
        w.serialize(EnrollmentRow {
            mixture_id: mixture_id.clone(),
            target_speaker_id: speaker.clone(),
            enrollment_utterance_id: u.utterance_id.clone(),
        })
        .map_err(|e| io_err(&files.enrollments, e))?;
    }
    w.flush().map_err(|e| io_err(&files.enrollments, e))?;

    let sr = set
        .mixtures
        .first()
        .map(|m| m.mixture.sample_rate_hz())
        .ok_or_else(|| CorpusError::Invalid("empty evaluation set".into()))?;
    write_corpus(&dir.join("enroll_pool"), &set.enrollment_pool(sr)?)?;
    Ok(files)
}
