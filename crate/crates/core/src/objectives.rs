//! Training objectives built on negative SI-SDR: supervised extraction,
//! permutation-invariant (PIT), mixture-invariant (MixIT), the SAM remix
//! loss, and the semi-supervised noisy loss.
//!
//! Every objective has a closure-free `*_graded` form that works on
//! estimate slices and also returns the gradient of the total with respect
//! to each estimate, which is what the training loop back-propagates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{MomSample, NoisySemiSample};
use crate::metrics::{neg_si_sdr_loss_with_grad, MetricError};
use crate::model::ModelError;
use crate::signal::Waveform;

pub const MAX_PIT_SOURCES: usize = 6;
pub const MAX_MIXIT_OUTPUTS: usize = 8;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expected {expected} estimates, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("{what}: {count} exceeds the enumeration limit {limit}")]
    TooMany { what: &'static str, count: usize, limit: usize },
    #[error("MixIT needs at least as many estimates ({estimates}) as mixtures ({mixtures})")]
    TooFewEstimates { mixtures: usize, estimates: usize },
    #[error("extractor returned {found} samples for a {expected}-sample input")]
    OutputLength { expected: usize, found: usize },
    #[error("nothing to evaluate")]
    Empty,
}

/// Scalar loss with its named parts. Each objective documents how `total`
/// combines `per_term`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_term: BTreeMap<String, f64>,
}

impl LossValue {
    fn mean_of(terms: Vec<(String, f64)>) -> Self {
        let mut values: Vec<f64> = terms.iter().map(|t| t.1).collect();
        // Sorted summation keeps the mean independent of term order.
        values.sort_by(f64::total_cmp);
        let total = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            total,
            per_term: terms.into_iter().collect(),
        }
    }

    /// ` name=value` pairs for log lines.
    pub fn terms_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.per_term {
            let _ = write!(s, " {k}={v:.6}");
        }
        s
    }
}

/// A loss plus `d total / d estimate` for every estimate, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedLoss {
    pub loss: LossValue,
    pub grads: Vec<Vec<f64>>,
}

fn scaled(mut g: Vec<f64>, k: f64) -> Vec<f64> {
    g.iter_mut().for_each(|v| *v *= k);
    g
}

/// `total = per_term["sup"] = neg_si_sdr_loss(target, estimate)`.
pub fn supervised_graded(target: &[f64], estimate: &[f64]) -> Result<GradedLoss, ObjectiveError> {
    let (l, g) = neg_si_sdr_loss_with_grad(target, estimate)?;
    Ok(GradedLoss {
        loss: LossValue::mean_of(vec![("sup".into(), l)]),
        grads: vec![g],
    })
}

/// Supervised loss over several targets at once: `total` is the mean of
/// `per_term["sup{k}"]`.
pub fn supervised_multi_graded(targets: &[&[f64]], estimates: &[&[f64]]) -> Result<GradedLoss, ObjectiveError> {
    if targets.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    if targets.len() != estimates.len() {
        return Err(ObjectiveError::CountMismatch {
            expected: targets.len(),
            found: estimates.len(),
        });
    }
    let k = targets.len() as f64;
    let mut terms = Vec::with_capacity(targets.len());
    let mut grads = Vec::with_capacity(targets.len());
    for (i, (t, e)) in targets.iter().zip(estimates).enumerate() {
        let (l, g) = neg_si_sdr_loss_with_grad(t, e)?;
        terms.push((format!("sup{i}"), l));
        grads.push(scaled(g, 1.0 / k));
    }
    Ok(GradedLoss {
        loss: LossValue::mean_of(terms),
        grads,
    })
}

pub fn supervised_loss(target: &Waveform, estimate: &Waveform) -> Result<LossValue, ObjectiveError> {
    Ok(supervised_graded(target.samples(), estimate.samples())?.loss)
}

/// All permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..k).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    pub graded: GradedLoss,
    /// Reference `k` is matched with estimate `permutation[k]`.
    pub permutation: Vec<usize>,
}

/// `total = min_π (1/K) Σ_k l(ref_k, est_π(k))`; `per_term["ref{k}"]` holds
/// the matched per-reference losses. Ties go to the lexicographically first
/// permutation.
pub fn pit_graded(references: &[&[f64]], estimates: &[&[f64]]) -> Result<PitResult, ObjectiveError> {
    let k = references.len();
    if k == 0 {
        return Err(ObjectiveError::Empty);
    }
    if estimates.len() != k {
        return Err(ObjectiveError::CountMismatch {
            expected: k,
            found: estimates.len(),
        });
    }
    if k > MAX_PIT_SOURCES {
        return Err(ObjectiveError::TooMany {
            what: "PIT sources",
            count: k,
            limit: MAX_PIT_SOURCES,
        });
    }
    // Pairwise losses, computed once.
    let mut pair = vec![vec![(0.0, Vec::new()); k]; k];
    for (r, row) in pair.iter_mut().enumerate() {
        for (e, cell) in row.iter_mut().enumerate() {
            *cell = neg_si_sdr_loss_with_grad(references[r], estimates[e])?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(k) {
        let total = p.iter().enumerate().map(|(r, &e)| pair[r][e].0).sum::<f64>() / k as f64;
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, p));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let mut grads = vec![Vec::new(); k];
    let mut terms = Vec::with_capacity(k);
    for (r, &e) in perm.iter().enumerate() {
        terms.push((format!("ref{r}"), pair[r][e].0));
        grads[e] = scaled(pair[r][e].1.clone(), 1.0 / k as f64);
    }
    Ok(PitResult {
        graded: GradedLoss {
            loss: LossValue::mean_of(terms),
            grads,
        },
        permutation: perm,
    })
}

pub fn pit_loss(references: &[Waveform], estimates: &[Waveform]) -> Result<(LossValue, Vec<usize>), ObjectiveError> {
    let r: Vec<&[f64]> = references.iter().map(Waveform::samples).collect();
    let e: Vec<&[f64]> = estimates.iter().map(Waveform::samples).collect();
    let out = pit_graded(&r, &e)?;
    Ok((out.graded.loss, out.permutation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixitResult {
    pub graded: GradedLoss,
    /// Estimate `m` is assigned to mixture `assignment[m]`.
    pub assignment: Vec<usize>,
}

impl MixitResult {
    /// The assignment as an `N × M` 0/1 matrix.
    pub fn matrix(&self, n_mixtures: usize) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.assignment.len()]; n_mixtures];
        for (m, &i) in self.assignment.iter().enumerate() {
            a[i][m] = 1;
        }
        a
    }
}

/// `total = min_A (1/N) Σ_i l(mix_i, Σ_m A[i,m] est_m)` over 0/1 matrices
/// with one 1 per column; `per_term["mix{i}"]` holds each mixture's loss.
/// Assignments are enumerated as base-N numbers with estimate 0 most
/// significant; ties go to the first one.
pub fn mixit_graded(mixtures: &[&[f64]], estimates: &[&[f64]]) -> Result<MixitResult, ObjectiveError> {
    let n = mixtures.len();
    let m = estimates.len();
    if n == 0 {
        return Err(ObjectiveError::Empty);
    }
    if m < n {
        return Err(ObjectiveError::TooFewEstimates {
            mixtures: n,
            estimates: m,
        });
    }
    if m > MAX_MIXIT_OUTPUTS {
        return Err(ObjectiveError::TooMany {
            what: "MixIT outputs",
            count: m,
            limit: MAX_MIXIT_OUTPUTS,
        });
    }
    let len = mixtures[0].len();
    let mut assignment = vec![0usize; m];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut remix = vec![vec![0.0; len]; n];
    loop {
        remix.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        for (e, &i) in assignment.iter().enumerate() {
            if estimates[e].len() != len {
                return Err(MetricError::LengthMismatch {
                    reference: len,
                    estimate: estimates[e].len(),
                }
                .into());
            }
            remix[i].iter_mut().zip(estimates[e]).for_each(|(r, v)| *r += v);
        }
        let mut total = 0.0;
        for i in 0..n {
            total += crate::metrics::neg_si_sdr_loss(mixtures[i], &remix[i])?;
        }
        total /= n as f64;
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, assignment.clone()));
        }
        // Increment, last estimate least significant.
        let mut pos = m;
        loop {
            if pos == 0 {
                let (_, a) = best.expect("at least one assignment");
                return mixit_finish(mixtures, estimates, a);
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < n {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

fn mixit_finish(mixtures: &[&[f64]], estimates: &[&[f64]], assignment: Vec<usize>) -> Result<MixitResult, ObjectiveError> {
    let n = mixtures.len();
    let len = mixtures[0].len();
    let mut remix = vec![vec![0.0; len]; n];
    for (e, &i) in assignment.iter().enumerate() {
        remix[i].iter_mut().zip(estimates[e]).for_each(|(r, v)| *r += v);
    }
    let mut terms = Vec::with_capacity(n);
    let mut mix_grads = Vec::with_capacity(n);
    for i in 0..n {
        let (l, g) = neg_si_sdr_loss_with_grad(mixtures[i], &remix[i])?;
        terms.push((format!("mix{i}"), l));
        mix_grads.push(scaled(g, 1.0 / n as f64));
    }
    let grads = assignment.iter().map(|&i| mix_grads[i].clone()).collect();
    Ok(MixitResult {
        graded: GradedLoss {
            loss: LossValue::mean_of(terms),
            grads,
        },
        assignment,
    })
}

pub fn mixit_loss(mixtures: &[Waveform], estimates: &[Waveform]) -> Result<(LossValue, Vec<usize>), ObjectiveError> {
    let r: Vec<&[f64]> = mixtures.iter().map(Waveform::samples).collect();
    let e: Vec<&[f64]> = estimates.iter().map(Waveform::samples).collect();
    let out = mixit_graded(&r, &e)?;
    Ok((out.graded.loss, out.assignment))
}

/// Remix loss from per-constituent estimates: SAM `i`'s estimates are summed
/// and compared with `sams[i]`; `total` is the mean of `per_term["sam{i}"]`.
/// Gradients come back flattened SAM-major, constituent-minor.
pub fn samom_graded(sams: &[&[f64]], estimates: &[Vec<&[f64]>]) -> Result<GradedLoss, ObjectiveError> {
    let n = sams.len();
    if n == 0 {
        return Err(ObjectiveError::Empty);
    }
    if estimates.len() != n {
        return Err(ObjectiveError::CountMismatch {
            expected: n,
            found: estimates.len(),
        });
    }
    let mut terms = Vec::with_capacity(n);
    let mut grads = Vec::new();
    for (i, (y, group)) in sams.iter().zip(estimates).enumerate() {
        if group.is_empty() {
            return Err(ObjectiveError::Empty);
        }
        let len = group[0].len();
        let mut remix = vec![0.0; len];
        for e in group {
            if e.len() != len {
                return Err(ObjectiveError::OutputLength {
                    expected: len,
                    found: e.len(),
                });
            }
            remix.iter_mut().zip(e.iter()).for_each(|(r, v)| *r += v);
        }
        let target = &y[..len.min(y.len())];
        let (l, g) = neg_si_sdr_loss_with_grad(target, &remix)?;
        terms.push((format!("sam{i}"), l));
        let g = scaled(g, 1.0 / n as f64);
        grads.extend(std::iter::repeat_n(g, group.len()));
    }
    Ok(GradedLoss {
        loss: LossValue::mean_of(terms),
        grads,
    })
}

/// Extracts every constituent of every SAM from `sample.input` with its
/// enrollment, remixes per SAM and scores against the SAM mixtures. Returns
/// the estimates grouped like `sample.sams`.
pub fn samom_loss<F>(sample: &MomSample, mut extractor: F) -> Result<(LossValue, Vec<Vec<Waveform>>), ObjectiveError>
where
    F: FnMut(&Waveform, &Waveform) -> Result<Waveform, ModelError>,
{
    let len = sample.input.len();
    let mut estimates = Vec::with_capacity(sample.sams.len());
    for sam in &sample.sams {
        let mut group = Vec::with_capacity(sam.constituents.len());
        for c in &sam.constituents {
            let est = extractor(&sample.input, &c.enrollment)?;
            if est.len() != len {
                return Err(ObjectiveError::OutputLength {
                    expected: len,
                    found: est.len(),
                });
            }
            group.push(est);
        }
        estimates.push(group);
    }
    let sams: Vec<&[f64]> = sample.sams.iter().map(|s| s.mixture.samples()).collect();
    let groups: Vec<Vec<&[f64]>> = estimates
        .iter()
        .map(|g| g.iter().map(Waveform::samples).collect())
        .collect();
    Ok((samom_graded(&sams, &groups)?.loss, estimates))
}

/// Deliberate gradient bugs, used to show the gradient checker catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flips the sign of the residual term's gradient in the noisy loss.
    FlipResidualGradient,
}

/// `total = (per_term["target"] + per_term["residual"]) / 2` with
/// `target = l(clean, estimate)` and
/// `residual = l(residual_target, input - estimate)`.
pub fn noisy_semisup_graded(
    clean: &[f64],
    residual_target: &[f64],
    input: &[f64],
    estimate: &[f64],
) -> Result<GradedLoss, ObjectiveError> {
    noisy_semisup_graded_with_fault(clean, residual_target, input, estimate, Fault::None)
}

pub fn noisy_semisup_graded_with_fault(
    clean: &[f64],
    residual_target: &[f64],
    input: &[f64],
    estimate: &[f64],
    fault: Fault,
) -> Result<GradedLoss, ObjectiveError> {
    if input.len() != estimate.len() {
        return Err(ObjectiveError::OutputLength {
            expected: input.len(),
            found: estimate.len(),
        });
    }
    let (lt, gt) = neg_si_sdr_loss_with_grad(clean, estimate)?;
    let residual: Vec<f64> = input.iter().zip(estimate).map(|(y, s)| y - s).collect();
    let (lr, gr) = neg_si_sdr_loss_with_grad(residual_target, &residual)?;
    let sign = if fault == Fault::FlipResidualGradient { 1.0 } else { -1.0 };
    let grad = gt.iter().zip(&gr).map(|(a, b)| 0.5 * (a + sign * b)).collect();
    Ok(GradedLoss {
        loss: LossValue {
            total: 0.5 * (lt + lr),
            per_term: [("target".to_string(), lt), ("residual".to_string(), lr)].into(),
        },
        grads: vec![grad],
    })
}

pub fn noisy_semisup_loss<F>(sample: &NoisySemiSample, mut extractor: F) -> Result<(LossValue, Waveform), ObjectiveError>
where
    F: FnMut(&Waveform, &Waveform) -> Result<Waveform, ModelError>,
{
    let est = extractor(&sample.input, &sample.target_enrollment)?;
    let g = noisy_semisup_graded(
        sample.clean_source.waveform.samples(),
        sample.residual_target().samples(),
        sample.input.samples(),
        est.samples(),
    )?;
    Ok((g.loss, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_mom, Constituent, SpeakerAwareMixture};
    use crate::metrics::DEFAULT_FLOOR_DB;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn loss(x: &[f64], y: &[f64]) -> f64 {
        crate::metrics::neg_si_sdr_loss(x, y).unwrap()
    }

    /// Independent recursive permutation generator (lexicographic).
    fn oracle_perms(k: usize) -> Vec<Vec<usize>> {
        fn rec(rest: Vec<usize>, acc: Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if rest.is_empty() {
                out.push(acc);
                return;
            }
            for (i, &v) in rest.iter().enumerate() {
                let mut r = rest.clone();
                r.remove(i);
                let mut a = acc.clone();
                a.push(v);
                rec(r, a, out);
            }
        }
        let mut out = Vec::new();
        rec((0..k).collect(), Vec::new(), &mut out);
        out
    }

    #[test]
    fn supervised_examples() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let l = supervised_loss(&Waveform::new(x.to_vec(), 8000).unwrap(), &Waveform::new(x.to_vec(), 8000).unwrap()).unwrap();
        assert_eq!(l.total, -DEFAULT_FLOOR_DB.abs());
        let l = supervised_graded(&x, &[1.0, 1.0, 1.0, 0.0]).unwrap().loss;
        assert!((l.total + 4.771212547196624).abs() < 1e-12);
        assert_eq!(l.per_term.len(), 1);
        assert_eq!(*l.per_term.values().next().unwrap(), l.total);
    }

    #[test]
    fn permutation_order_matches_oracle() {
        for k in 0..=5 {
            assert_eq!(permutations(k.max(1)), oracle_perms(k.max(1)));
        }
    }

    #[test]
    fn pit_swap_and_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = noise(&mut rng, 64);
        let b = noise(&mut rng, 64);
        let r = pit_graded(&[&a, &b], &[&b, &a]).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        assert_eq!(r.graded.loss.total, -60.0);
        let one = pit_graded(&[&a], &[&b]).unwrap();
        assert_eq!(one.graded.loss.total, supervised_graded(&a, &b).unwrap().loss.total);
        assert!(matches!(pit_graded(&[&a, &b], &[&a]), Err(ObjectiveError::CountMismatch { .. })));
        let many: Vec<&[f64]> = vec![&a; 7];
        assert!(matches!(pit_graded(&many, &many), Err(ObjectiveError::TooMany { .. })));
    }

    #[test]
    fn pit_three_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let refs: Vec<Vec<f64>> = (0..3).map(|_| noise(&mut rng, 50)).collect();
            let ests: Vec<Vec<f64>> = (0..3).map(|_| noise(&mut rng, 50)).collect();
            let rr: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
            let ee: Vec<&[f64]> = ests.iter().map(Vec::as_slice).collect();
            let got = pit_graded(&rr, &ee).unwrap();
            let mut best = (f64::INFINITY, vec![]);
            let perms = oracle_perms(3);
            assert_eq!(perms.len(), 6);
            for p in perms {
                let t = (0..3).map(|k| loss(&refs[k], &ests[p[k]])).sum::<f64>() / 3.0;
                if t < best.0 {
                    best = (t, p);
                }
            }
            assert!((got.graded.loss.total - best.0).abs() < 1e-12);
            assert_eq!(got.permutation, best.1);
        }
    }

    #[test]
    fn mixit_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = noise(&mut rng, 64);
        let b = noise(&mut rng, 64);
        let r = mixit_graded(&[&a, &b], &[&a, &b]).unwrap();
        assert_eq!(r.graded.loss.total, -60.0);
        assert_eq!(r.matrix(2), vec![vec![1, 0], vec![0, 1]]);
        let z = vec![0.0; 64];
        let r = mixit_graded(&[&a, &b], &[&z, &z]).unwrap();
        assert_eq!(r.assignment, vec![0, 0]);
        assert_eq!(r.graded.loss.total, 60.0);
        assert!(matches!(mixit_graded(&[&a, &b], &[&a]), Err(ObjectiveError::TooFewEstimates { .. })));
        let many: Vec<&[f64]> = vec![&a; 9];
        assert!(matches!(mixit_graded(&[&a, &b], &many), Err(ObjectiveError::TooMany { .. })));
    }

    #[test]
    fn mixit_four_outputs_matches_sixteen_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mix: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 40)).collect();
            let est: Vec<Vec<f64>> = (0..4).map(|_| noise(&mut rng, 40)).collect();
            let mm: Vec<&[f64]> = mix.iter().map(Vec::as_slice).collect();
            let ee: Vec<&[f64]> = est.iter().map(Vec::as_slice).collect();
            let got = mixit_graded(&mm, &ee).unwrap();
            let mut best = (f64::INFINITY, vec![]);
            let mut count = 0;
            for code in 0..16u32 {
                let a: Vec<usize> = (0..4).map(|m| ((code >> (3 - m)) & 1) as usize).collect();
                count += 1;
                let t = (0..2)
                    .map(|i| {
                        let s: Vec<f64> = (0..40)
                            .map(|t| (0..4).filter(|&m| a[m] == i).map(|m| est[m][t]).sum())
                            .collect();
                        loss(&mix[i], &s)
                    })
                    .sum::<f64>()
                    / 2.0;
                if t < best.0 {
                    best = (t, a);
                }
            }
            assert_eq!(count, 16);
            assert!((got.graded.loss.total - best.0).abs() < 1e-12);
            assert_eq!(got.assignment, best.1);
        }
    }

    fn sam(sources: Vec<Vec<f64>>, ids: &[&str]) -> SpeakerAwareMixture {
        let len = sources[0].len();
        let mix: Vec<f64> = (0..len).map(|t| sources.iter().map(|s| s[t]).sum()).collect();
        SpeakerAwareMixture {
            mixture: Waveform::new(mix, 8000).unwrap(),
            constituents: sources
                .into_iter()
                .zip(ids)
                .map(|(s, id)| Constituent {
                    speaker_id: id.to_string(),
                    enrollment_id: format!("{id}_e"),
                    enrollment: Waveform::new(vec![id.len() as f64 * 0.01; 8], 8000).unwrap(),
                    source_id: Some(format!("{id}_s")),
                    source: Some(Waveform::new(s, 8000).unwrap()),
                })
                .collect(),
            contains_noise: false,
        }
    }

    fn random_mom(rng: &mut ChaCha8Rng, j: &[usize], len: usize) -> MomSample {
        let mut k = 0;
        let mut sams = Vec::new();
        for &n in j {
            let ids: Vec<String> = (0..n).map(|_| { k += 1; "s".repeat(k) }).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            sams.push(sam((0..n).map(|_| noise(rng, len)).collect(), &refs));
        }
        build_mom(sams).unwrap()
    }

    /// Extractor returning the ground-truth source picked by enrollment.
    fn oracle(sample: &MomSample) -> impl FnMut(&Waveform, &Waveform) -> Result<Waveform, ModelError> + '_ {
        move |_, e| {
            let c = sample
                .sams
                .iter()
                .flat_map(|s| &s.constituents)
                .find(|c| &c.enrollment == e)
                .unwrap();
            Ok(c.source.clone().unwrap())
        }
    }

    #[test]
    fn samom_oracle_and_call_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mom = random_mom(&mut rng, &[2, 2], 100);
        let (l, est) = samom_loss(&mom, oracle(&mom)).unwrap();
        assert_eq!(l.total, -60.0);
        assert_eq!(l.per_term.len(), 2);
        let mut calls = 0;
        samom_loss(&mom, |x, _| {
            calls += 1;
            Ok(x.clone())
        })
        .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(est.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2]);
        let short = samom_loss(&mom, |x, _| Ok(x.slice(0, 10).unwrap()));
        assert!(matches!(short, Err(ObjectiveError::OutputLength { .. })));
    }

    #[test]
    fn samom_single_speaker_sams_match_supervised() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mom = random_mom(&mut rng, &[1, 1], 80);
        let guesses: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 80)).collect();
        let mut i = 0;
        let (l, _) = samom_loss(&mom, |_, _| {
            i += 1;
            Ok(Waveform::new(guesses[i - 1].clone(), 8000).unwrap())
        })
        .unwrap();
        let sup: f64 = (0..2)
            .map(|k| supervised_graded(mom.sams[k].constituents[0].source.as_ref().unwrap().samples(), &guesses[k]).unwrap().loss.total)
            .sum::<f64>()
            / 2.0;
        assert!((l.total - sup).abs() < 1e-12);
    }

    #[test]
    fn noisy_identity_and_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = noise(&mut rng, 60);
        let y2 = noise(&mut rng, 60);
        let input: Vec<f64> = s.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let g = noisy_semisup_graded(&s, &y2, &input, &s).unwrap();
        assert_eq!(g.loss.total, -60.0);
        let est = noise(&mut rng, 60);
        let g = noisy_semisup_graded(&s, &y2, &input, &est).unwrap();
        let p = &g.loss.per_term;
        assert_eq!(g.loss.total - (p["target"] + p["residual"]) / 2.0, 0.0);
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
        let h = 1e-6;
        let mut num = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let a = f(&xp);
            xp[i] = x[i] - h;
            let b = f(&xp);
            xp[i] = x[i];
            num[i] = (a - b) / (2.0 * h);
        }
        let diff: f64 = num.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        diff / norm
    }

    #[test]
    fn estimate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (s, y2) = (noise(&mut rng, 30), noise(&mut rng, 30));
        let input: Vec<f64> = s.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let est = noise(&mut rng, 30);
        let g = noisy_semisup_graded(&s, &y2, &input, &est).unwrap();
        let f = |e: &[f64]| noisy_semisup_graded(&s, &y2, &input, e).unwrap().loss.total;
        assert!(fd_check(f, &est, &g.grads[0]) < 1e-6);
        let bad = noisy_semisup_graded_with_fault(&s, &y2, &input, &est, Fault::FlipResidualGradient).unwrap();
        assert!(fd_check(f, &est, &bad.grads[0]) > 1e-2);

        let (m0, m1) = (noise(&mut rng, 30), noise(&mut rng, 30));
        let ests: Vec<Vec<f64>> = (0..4).map(|_| noise(&mut rng, 30)).collect();
        let flat: Vec<f64> = ests.concat();
        let split = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(30).map(<[f64]>::to_vec).collect() };
        let remix = |v: &[f64]| {
            let e = split(v);
            samom_graded(&[&m0, &m1], &[vec![&e[0], &e[1]], vec![&e[2], &e[3]]]).unwrap()
        };
        assert!(fd_check(|v| remix(v).loss.total, &flat, &remix(&flat).grads.concat()) < 1e-6);

        let mix = |v: &[f64]| {
            let e = split(v);
            let r: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
            mixit_graded(&[&m0, &m1], &r).unwrap()
        };
        assert!(fd_check(|v| mix(v).graded.loss.total, &flat, &mix(&flat).graded.grads.concat()) < 1e-6);

        let two = &flat[..60];
        let pit = |v: &[f64]| {
            let e = split(v);
            pit_graded(&[&m0, &m1], &[&e[0], &e[1]]).unwrap()
        };
        assert!(fd_check(|v| pit(v).graded.loss.total, two, &pit(two).graded.grads.concat()) < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pit_is_no_worse_than_any_fixed_permutation(seed in 0u64..10_000, k in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let refs: Vec<Vec<f64>> = (0..k).map(|_| noise(&mut rng, 24)).collect();
            let ests: Vec<Vec<f64>> = (0..k).map(|_| noise(&mut rng, 24)).collect();
            let rr: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
            let ee: Vec<&[f64]> = ests.iter().map(Vec::as_slice).collect();
            let got = pit_graded(&rr, &ee).unwrap().graded.loss.total;
            for p in oracle_perms(k) {
                let t = (0..k).map(|i| loss(&refs[i], &ests[p[i]])).sum::<f64>() / k as f64;
                prop_assert!(got <= t + 1e-12);
            }
        }

        #[test]
        fn mixit_is_no_worse_than_any_fixed_assignment(seed in 0u64..10_000, m in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mix: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 24)).collect();
            let est: Vec<Vec<f64>> = (0..m).map(|_| noise(&mut rng, 24)).collect();
            let mm: Vec<&[f64]> = mix.iter().map(Vec::as_slice).collect();
            let ee: Vec<&[f64]> = est.iter().map(Vec::as_slice).collect();
            let got = mixit_graded(&mm, &ee).unwrap().graded.loss.total;
            for code in 0..(1u32 << m) {
                let a: Vec<usize> = (0..m).map(|j| ((code >> j) & 1) as usize).collect();
                let t = (0..2).map(|i| {
                    let s: Vec<f64> = (0..24).map(|t| (0..m).filter(|&j| a[j] == i).map(|j| est[j][t]).sum()).collect();
                    loss(&mix[i], &s)
                }).sum::<f64>() / 2.0;
                prop_assert!(got <= t + 1e-12);
            }
        }

        #[test]
        fn samom_is_order_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mom = random_mom(&mut rng, &[2, 3], 40);
            // Deterministic, enrollment-dependent stand-in extractor.
            let ext = |x: &Waveform, e: &Waveform| {
                let g = e.samples()[0] * 7.0 + 0.1;
                Ok(Waveform::new(x.samples().iter().enumerate().map(|(t, v)| v * (g * t as f64).sin()).collect(), 8000).unwrap())
            };
            let (base, _) = samom_loss(&mom, ext).unwrap();
            let mut shuffled = mom.clone();
            shuffled.sams.reverse();
            for s in &mut shuffled.sams {
                s.constituents.reverse();
            }
            let (other, _) = samom_loss(&shuffled, ext).unwrap();
            prop_assert!((base.total - other.total).abs() < 1e-12);
        }

        #[test]
        fn samom_oracle_hits_floor(seed in 0u64..10_000, j1 in 1usize..=3, j2 in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mom = random_mom(&mut rng, &[j1, j2], 50);
            let (l, _) = samom_loss(&mom, oracle(&mom)).unwrap();
            prop_assert_eq!(l.total, DEFAULT_FLOOR_DB);
        }
    }
}
