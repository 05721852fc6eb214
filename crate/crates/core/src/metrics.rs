//! Scale-invariant SDR, plain SDR, their improvement forms and the
//! aggregated evaluation report.
//!
//! SI-SDR is evaluated literally, without mean removal:
//!
//! ```text
//! alpha = <x, x_hat> / ||x||^2
//! si_sdr = 10 log10( ||alpha x||^2 / ||alpha x - x_hat||^2 )
//! ```
//!
//! and clamped to `[floor_db, -floor_db]`. Inside the clamp the value is
//! exact and differentiable; at the clamp the gradient is zero. "SDR" here is
//! the plain energy ratio `||x||^2 / ||x - x_hat||^2`, not the filtered
//! BSS-eval variant.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Default lower clamp for SI-SDR and SDR, in dB.
pub const DEFAULT_FLOOR_DB: f64 = -60.0;

const DB_PER_NEPER_POWER: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference and estimate lengths differ ({reference} vs {estimate})")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("reference signal is identically zero")]
    ZeroReference,
    #[error("signals must be non-empty")]
    Empty,
    #[error("floor must be negative and finite, got {0}")]
    InvalidFloor(f64),
}

fn check(reference: &[f64], estimate: &[f64], floor_db: f64) -> Result<f64, MetricError> {
    if reference.len() != estimate.len() {
        return Err(MetricError::LengthMismatch {
            reference: reference.len(),
            estimate: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(floor_db < 0.0) || !floor_db.is_finite() {
        return Err(MetricError::InvalidFloor(floor_db));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(ref_energy)
}

/// Energy ratio in dB with the degenerate cases resolved to the clamps:
/// zero target energy is the floor, zero error energy the ceiling.
fn clamped_ratio_db(target: f64, error: f64, floor_db: f64) -> (f64, bool) {
    if target == 0.0 {
        return (floor_db, true);
    }
    if error == 0.0 {
        return (-floor_db, true);
    }
    let db = 10.0 * (target / error).log10();
    if db <= floor_db {
        (floor_db, true)
    } else if db >= -floor_db {
        (-floor_db, true)
    } else {
        (db, false)
    }
}

pub fn si_sdr(reference: &[f64], estimate: &[f64], floor_db: f64) -> Result<f64, MetricError> {
    si_sdr_parts(reference, estimate, floor_db).map(|p| p.value)
}

struct SiSdrParts {
    value: f64,
    clamped: bool,
    cross: f64,
    alpha: f64,
    error_energy: f64,
}

fn si_sdr_parts(reference: &[f64], estimate: &[f64], floor_db: f64) -> Result<SiSdrParts, MetricError> {
    let ref_energy = check(reference, estimate, floor_db)?;
    let cross: f64 = reference.iter().zip(estimate).map(|(x, y)| x * y).sum();
    let alpha = cross / ref_energy;
    let target = alpha * alpha * ref_energy;
    let error_energy: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| {
            let e = alpha * x - y;
            e * e
        })
        .sum();
    let (value, clamped) = clamped_ratio_db(target, error_energy, floor_db);
    Ok(SiSdrParts {
        value,
        clamped,
        cross,
        alpha,
        error_energy,
    })
}

/// SI-SDR together with its gradient with respect to `estimate`.
pub fn si_sdr_with_grad(
    reference: &[f64],
    estimate: &[f64],
    floor_db: f64,
) -> Result<(f64, Vec<f64>), MetricError> {
    let p = si_sdr_parts(reference, estimate, floor_db)?;
    if p.clamped {
        return Ok((p.value, vec![0.0; estimate.len()]));
    }
    // d/dx_hat = (20 / ln 10) [ x / <x, x_hat> + (alpha x - x_hat) / ||alpha x - x_hat||^2 ]
    let k = 2.0 * DB_PER_NEPER_POWER;
    let grad = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| k * (x / p.cross + (p.alpha * x - y) / p.error_energy))
        .collect();
    Ok((p.value, grad))
}

/// Negative SI-SDR at the default floor; the training loss.
pub fn neg_si_sdr_loss(reference: &[f64], estimate: &[f64]) -> Result<f64, MetricError> {
    Ok(-si_sdr(reference, estimate, DEFAULT_FLOOR_DB)?)
}

/// Negative SI-SDR and its gradient with respect to `estimate`.
pub fn neg_si_sdr_loss_with_grad(
    reference: &[f64],
    estimate: &[f64],
) -> Result<(f64, Vec<f64>), MetricError> {
    let (v, mut g) = si_sdr_with_grad(reference, estimate, DEFAULT_FLOOR_DB)?;
    g.iter_mut().for_each(|x| *x = -*x);
    Ok((-v, g))
}

/// Plain signal-to-distortion ratio, clamped like [`si_sdr`].
pub fn sdr(reference: &[f64], estimate: &[f64], floor_db: f64) -> Result<f64, MetricError> {
    let ref_energy = check(reference, estimate, floor_db)?;
    let error: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(clamped_ratio_db(ref_energy, error, floor_db).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SiSdr,
    Sdr,
}

impl Metric {
    pub fn eval(self, reference: &[f64], estimate: &[f64], floor_db: f64) -> Result<f64, MetricError> {
        match self {
            Metric::SiSdr => si_sdr(reference, estimate, floor_db),
            Metric::Sdr => sdr(reference, estimate, floor_db),
        }
    }
}

/// `metric(reference, estimate) - metric(reference, input_mixture)`.
pub fn improvement(
    reference: &[f64],
    estimate: &[f64],
    input_mixture: &[f64],
    metric: Metric,
    floor_db: f64,
) -> Result<f64, MetricError> {
    if input_mixture.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            reference: reference.len(),
            estimate: input_mixture.len(),
        });
    }
    Ok(metric.eval(reference, estimate, floor_db)? - metric.eval(reference, input_mixture, floor_db)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub si_sdri_db: f64,
    pub sdri_db: f64,
}

impl UtteranceScore {
    /// Scores one estimate against its reference and the unprocessed input.
    pub fn compute(
        utterance_id: impl Into<String>,
        reference: &[f64],
        estimate: &[f64],
        mixture: &[f64],
        floor_db: f64,
    ) -> Result<Self, MetricError> {
        let si_sdr_db = si_sdr(reference, estimate, floor_db)?;
        let sdr_db = sdr(reference, estimate, floor_db)?;
        Ok(Self {
            utterance_id: utterance_id.into(),
            si_sdr_db,
            sdr_db,
            si_sdri_db: improvement(reference, estimate, mixture, Metric::SiSdr, floor_db)?,
            sdri_db: improvement(reference, estimate, mixture, Metric::Sdr, floor_db)?,
        })
    }
}

/// Aggregated evaluation results. Aggregates are arithmetic means of the
/// per-utterance improvements.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub si_sdri_db: f64,
    pub sdri_db: f64,
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub per_utterance: Vec<UtteranceScore>,
}

impl MetricReport {
    pub fn from_scores(per_utterance: Vec<UtteranceScore>) -> Self {
        let n = per_utterance.len().max(1) as f64;
        let mean = |f: fn(&UtteranceScore) -> f64| per_utterance.iter().map(f).sum::<f64>() / n;
        Self {
            si_sdri_db: mean(|s| s.si_sdri_db),
            sdri_db: mean(|s| s.sdri_db),
            si_sdr_db: mean(|s| s.si_sdr_db),
            sdr_db: mean(|s| s.sdr_db),
            per_utterance,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_utterance
            .iter()
            .map(|s| s.utterance_id.len())
            .max()
            .unwrap_or(0)
            .max(12);
        let _ = writeln!(
            out,
            "{:<width$} {:>10} {:>10} {:>10} {:>10}",
            "utterance", "si_sdr", "sdr", "si_sdri", "sdri"
        );
        for s in &self.per_utterance {
            let _ = writeln!(
                out,
                "{:<width$} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                s.utterance_id, s.si_sdr_db, s.sdr_db, s.si_sdri_db, s.sdri_db
            );
        }
        let _ = writeln!(
            out,
            "{:<width$} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            "mean", self.si_sdr_db, self.sdr_db, self.si_sdri_db, self.sdri_db
        );
        out
    }

    /// One `key=value` per line.
    pub fn to_key_value(&self) -> String {
        format!(
            "count={}\nsi_sdri_db={:.6}\nsdri_db={:.6}\nsi_sdr_db={:.6}\nsdr_db={:.6}\n",
            self.per_utterance.len(),
            self.si_sdri_db,
            self.sdri_db,
            self.si_sdr_db,
            self.sdr_db
        )
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_table())?;
        std::fs::write(dir.join("metrics.kv"), self.to_key_value())
    }
}
