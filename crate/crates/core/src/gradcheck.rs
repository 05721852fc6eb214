//! Finite-difference checks of every objective's gradient, back-propagated
//! through a small model.

use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ExtractionGraph, ExtractorConfig, ModelError, ModelParams, SeparationGraph};
use crate::objectives::{
    mixit_graded, noisy_semisup_graded, noisy_semisup_graded_with_fault, pit_graded, samom_graded,
    supervised_graded, Fault, GradedLoss, ObjectiveError,
};

#[derive(Debug, Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("unknown objective {0:?}")]
    UnknownSuite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Supervised,
    Pit,
    Mixit,
    Samom,
    NoisySemisup,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Supervised,
        Suite::Pit,
        Suite::Mixit,
        Suite::Samom,
        Suite::NoisySemisup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Supervised => "supervised",
            Suite::Pit => "pit",
            Suite::Mixit => "mixit",
            Suite::Samom => "samom",
            Suite::NoisySemisup => "noisy_semisup",
        }
    }

    pub fn parse(s: &str) -> Result<Self, GradcheckError> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| GradcheckError::UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ExtractorConfig,
    pub input_len: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Entries probed per tensor; smaller tensors are probed exhaustively.
    pub entries_per_tensor: usize,
    pub seed: u64,
    pub fault: Fault,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ExtractorConfig {
                n_filters: 16,
                kernel_len: 4,
                bottleneck_ch: 8,
                conv_ch: 16,
                n_repeats: 1,
                blocks_per_repeat: 2,
                embed_dim: 8,
                fusion_block_index: 1,
                n_outputs: 1,
            },
            input_len: 400,
            step: 1e-4,
            tolerance: 1e-3,
            entries_per_tensor: 6,
            seed: 0,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// Probes that needed a step below the configured one, or were dropped,
    /// because `±step` moved a rectifier input across zero.
    pub kinked: usize,
    /// `‖numeric − analytic‖ / max(‖numeric‖, ‖analytic‖)` over the probed entries.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.entries > 0 && t.rel_error < self.tolerance)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let worst = self
            .tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .map(|t| t.name.as_str())
            .unwrap_or("-");
        write!(
            f,
            "{:<14} {}  tensors={} probes={} kinked={} max_rel_err={:.3e} (worst {worst}, tol {:.0e})",
            self.suite.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.tensors.len(),
            self.tensors.iter().map(|t| t.entries).sum::<usize>(),
            self.tensors.iter().map(|t| t.kinked).sum::<usize>(),
            self.max_rel_error(),
            self.tolerance
        )
    }
}

/// Broadband probe signal: a few random partials over uniform noise.
fn signal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let partials: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.05..2.5), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    (0..len)
        .map(|t| {
            let tone: f64 = partials.iter().map(|(w, ph)| (w * t as f64 + ph).sin()).sum();
            0.1 * tone + rng.random_range(-0.2..0.2)
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Fixed inputs for one suite, plus a closure-free loss evaluation.
struct Problem {
    suite: Suite,
    fault: Fault,
    input: Vec<f64>,
    enrollments: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Problem {
    fn new(suite: Suite, len: usize, fault: Fault, rng: &mut ChaCha8Rng) -> Self {
        let mut sig = |n: usize| (0..n).map(|_| signal(rng, len)).collect::<Vec<_>>();
        let (input, enrollments, targets) = match suite {
            Suite::Supervised => {
                let s = sig(2);
                (add(&s[0], &s[1]), sig(1), vec![s[0].clone()])
            }
            Suite::Pit => {
                let s = sig(2);
                (add(&s[0], &s[1]), vec![], s)
            }
            Suite::Mixit => {
                let m = sig(2);
                (add(&m[0], &m[1]), vec![], m)
            }
            Suite::Samom => {
                let s = sig(4);
                let sams = vec![add(&s[0], &s[1]), add(&s[2], &s[3])];
                (add(&sams[0], &sams[1]), sig(4), sams)
            }
            Suite::NoisySemisup => {
                let s = sig(2);
                (add(&s[0], &s[1]), sig(1), s)
            }
        };
        Self {
            suite,
            fault,
            input,
            enrollments,
            targets,
        }
    }

    fn model_config(&self, base: &ExtractorConfig) -> ExtractorConfig {
        match self.suite {
            Suite::Pit => base.with_outputs(2),
            Suite::Mixit => base.with_outputs(4),
            _ => base.with_outputs(1),
        }
    }

    fn objective(&self, outputs: &[&[f64]], fault: Fault) -> Result<GradedLoss, ObjectiveError> {
        let t: Vec<&[f64]> = self.targets.iter().map(Vec::as_slice).collect();
        match self.suite {
            Suite::Supervised => supervised_graded(t[0], outputs[0]),
            Suite::Pit => Ok(pit_graded(&t, outputs)?.graded),
            Suite::Mixit => Ok(mixit_graded(&t, outputs)?.graded),
            Suite::Samom => samom_graded(&t, &[outputs[..2].to_vec(), outputs[2..].to_vec()]),
            Suite::NoisySemisup => match fault {
                Fault::None => noisy_semisup_graded(t[0], t[1], &self.input, outputs[0]),
                f => noisy_semisup_graded_with_fault(t[0], t[1], &self.input, outputs[0], f),
            },
        }
    }

    /// Loss and rectifier sign pattern; accumulates gradients when asked.
    fn forward_backward(
        &self,
        p: &ModelParams,
        cfg: &ExtractorConfig,
        grads: Option<&mut ModelParams>,
    ) -> Result<(f64, Vec<bool>), GradcheckError> {
        let e: Vec<&[f64]> = self.enrollments.iter().map(Vec::as_slice).collect();
        if cfg.is_extractor() {
            let g = ExtractionGraph::forward(p, cfg, &self.input, &e)?;
            let l = self.objective(&g.outputs(), self.fault)?;
            if let Some(grads) = grads {
                g.backward(p, cfg, &l.grads, grads);
            }
            Ok((l.loss.total, g.activation_pattern()))
        } else {
            let g = SeparationGraph::forward(p, cfg, &self.input)?;
            let l = self.objective(&g.outputs(), self.fault)?;
            if let Some(grads) = grads {
                g.backward(p, cfg, &l.grads, grads);
            }
            Ok((l.loss.total, g.activation_pattern()))
        }
    }
}

/// Compares back-propagated gradients with central differences on a sample
/// of entries of every parameter tensor.
///
/// A central difference is only meaningful where the loss is smooth over
/// `[x - step, x + step]`. When the two evaluations put some rectifier input
/// on different sides of zero, the probe is retried at `step / 10` and
/// `step / 100`, and dropped if it still straddles a kink; another entry is
/// then drawn in its place.
pub fn run_suite(suite: Suite, cfg: &GradcheckConfig) -> Result<SuiteReport, GradcheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (suite as u64 + 1).wrapping_mul(0x9e37_79b9));
    let problem = Problem::new(suite, cfg.input_len, cfg.fault, &mut rng);
    let model = problem.model_config(&cfg.model);
    let mut params = ModelParams::init(&model, &mut rng)?;
    let mut analytic = params.zeros_like();
    problem.forward_backward(&params, &model, Some(&mut analytic))?;

    let names: Vec<String> = params.names().cloned().collect();
    let mut tensors = Vec::with_capacity(names.len());
    for name in names {
        let n = params.get(&name).len();
        let order = sample_indices(&mut rng, n, n).into_vec();
        let (mut entries, mut kinked) = (0, 0);
        let (mut diff, mut num_norm, mut ana_norm) = (0.0, 0.0, 0.0);
        for i in order {
            if entries == cfg.entries_per_tensor {
                break;
            }
            let orig = params.get(&name).data()[i];
            let mut numeric = None;
            for (attempt, h) in [cfg.step, cfg.step / 10.0, cfg.step / 100.0].into_iter().enumerate() {
                params.get_mut(&name).data_mut()[i] = orig + h;
                let (up, up_pattern) = problem.forward_backward(&params, &model, None)?;
                params.get_mut(&name).data_mut()[i] = orig - h;
                let (down, down_pattern) = problem.forward_backward(&params, &model, None)?;
                params.get_mut(&name).data_mut()[i] = orig;
                if up_pattern == down_pattern {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
                if attempt == 0 {
                    kinked += 1;
                }
            }
            let Some(num) = numeric else {
                continue;
            };
            entries += 1;
            let ana = analytic.get(&name).data()[i];
            diff += (num - ana) * (num - ana);
            num_norm += num * num;
            ana_norm += ana * ana;
        }
        let scale = num_norm.sqrt().max(ana_norm.sqrt());
        let rel_error = if scale < 1e-10 { 0.0 } else { diff.sqrt() / scale };
        tensors.push(TensorCheck {
            name,
            entries,
            kinked,
            rel_error,
        });
    }
    Ok(SuiteReport {
        suite,
        tolerance: cfg.tolerance,
        tensors,
    })
}

pub fn run_suites(suites: &[Suite], cfg: &GradcheckConfig) -> Result<Vec<SuiteReport>, GradcheckError> {
    suites.iter().map(|&s| run_suite(s, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_toy_model() {
        for r in run_suites(&Suite::ALL, &GradcheckConfig::default()).unwrap() {
            println!("{r}");
            assert!(r.passed(), "{r}\n{:#?}", r.tensors);
        }
    }

    #[test]
    fn flipped_residual_gradient_is_caught() {
        let cfg = GradcheckConfig {
            fault: Fault::FlipResidualGradient,
            ..GradcheckConfig::default()
        };
        assert!(!run_suite(Suite::NoisySemisup, &cfg).unwrap().passed());
        // The fault only touches the noisy loss.
        assert!(run_suite(Suite::Samom, &cfg).unwrap().passed());
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("nope").is_err());
    }
}

