//! Scoring on full-length evaluation mixtures.

use rayon::prelude::*;

use crate::corpus::{EvalMixture, EvalSet};
use crate::metrics::{si_sdr, MetricReport, UtteranceScore, DEFAULT_FLOOR_DB};
use crate::model::{extract, separate_bss, ExtractorConfig, ModelParams};
use crate::signal::Waveform;

use super::EngineError;

/// What produces the estimates.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    /// A trained network. Extractors are run once per listed speaker with
    /// that speaker's enrollment; blind separators once per mixture, with
    /// outputs matched to speakers by the injective mapping of highest total
    /// SI-SDR.
    Model {
        config: &'a ExtractorConfig,
        params: &'a ModelParams,
    },
    /// Returns the mixture unchanged.
    Passthrough,
    /// Returns the true source.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mixture_id: String,
    pub speaker_id: String,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// One per scored (mixture, speaker), in report order.
    pub estimates: Vec<Estimate>,
}

/// Output index for each reference maximizing the summed SI-SDR; the first
/// best mapping in lexicographic order wins ties.
fn best_injective_mapping(scores: &[Vec<f64>]) -> Vec<usize> {
    fn search(scores: &[Vec<f64>], k: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>)) {
        if k == scores.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                search(scores, k + 1, used, cur, acc + scores[k][j], best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let m = scores.first().map_or(0, Vec::len);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    search(scores, 0, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best);
    best.1
}

fn estimates_for(est: Estimator, set: &EvalSet, m: &EvalMixture) -> Result<Vec<Waveform>, EngineError> {
    let sources = m.sources.as_ref().ok_or_else(|| {
        EngineError::Config(format!("mixture {} has no reference sources to score against", m.mixture_id))
    })?;
    match est {
        Estimator::Passthrough => Ok(vec![m.mixture.clone(); sources.len()]),
        Estimator::Oracle => Ok(sources.clone()),
        Estimator::Model { config, params } if config.is_extractor() => m
            .speaker_ids
            .iter()
            .map(|s| {
                let e = set.enrollment(&m.mixture_id, s)?;
                Ok(extract(params, config, &m.mixture, &e.waveform)?)
            })
            .collect(),
        Estimator::Model { config, params } => {
            let outs = separate_bss(params, config, &m.mixture)?;
            if outs.len() < sources.len() {
                return Err(EngineError::Config(format!(
                    "{} outputs cannot cover the {} speakers of {}",
                    outs.len(),
                    sources.len(),
                    m.mixture_id
                )));
            }
            let scores = sources
                .iter()
                .map(|r| outs.iter().map(|o| si_sdr(r.samples(), o.samples(), DEFAULT_FLOOR_DB)).collect())
                .collect::<Result<Vec<Vec<f64>>, _>>()?;
            Ok(best_injective_mapping(&scores).into_iter().map(|j| outs[j].clone()).collect())
        }
    }
}

/// Scores every (mixture, speaker) of `set` on the full-length mixture.
pub fn evaluate_detailed(est: Estimator, set: &EvalSet) -> Result<Evaluation, EngineError> {
    let per_mixture = set
        .mixtures
        .par_iter()
        .map(|m| {
            let estimates = estimates_for(est, set, m)?;
            let sources = m.sources.as_ref().expect("checked in estimates_for");
            let mut out = Vec::with_capacity(estimates.len());
            for ((s, r), e) in m.speaker_ids.iter().zip(sources).zip(estimates) {
                let score = UtteranceScore::compute(
                    format!("{}/{s}", m.mixture_id),
                    r.samples(),
                    e.samples(),
                    m.mixture.samples(),
                    DEFAULT_FLOOR_DB,
                )?;
                out.push((
                    score,
                    Estimate {
                        mixture_id: m.mixture_id.clone(),
                        speaker_id: s.clone(),
                        waveform: e,
                    },
                ));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let (scores, estimates) = per_mixture.into_iter().flatten().unzip();
    Ok(Evaluation {
        report: MetricReport::from_scores(scores),
        estimates,
    })
}

pub fn evaluate(est: Estimator, set: &EvalSet) -> Result<MetricReport, EngineError> {
    Ok(evaluate_detailed(est, set)?.report)
}
