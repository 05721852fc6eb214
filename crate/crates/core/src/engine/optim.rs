//! Adam, global-norm clipping, and the two learning-rate schedules.

use crate::model::{ModelParams, OptimizerMoments};

use super::{LrSchedule, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: OptimizerMoments,
}

impl Adam {
    /// Fresh moments shaped like `params`, with the usual 0.9 / 0.999 / 1e-8.
    pub fn new(params: &ModelParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: OptimizerMoments {
                t: 0,
                m: params.zeros_like(),
                v: params.zeros_like(),
            },
        }
    }

    pub fn moments(&self) -> &OptimizerMoments {
        &self.moments
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        let OptimizerMoments { t, m, v } = &mut self.moments;
        *t += 1;
        let c1 = 1.0 - self.beta1.powi(*t as i32);
        let c2 = 1.0 - self.beta2.powi(*t as i32);
        let tensors = params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut());
        for (((name, p), (_, m)), (_, v)) in tensors {
            let g = grads.get(name).data();
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Learning rate and plateau bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub current_lr: f64,
    pub best_validation: f64,
    pub epochs_since_improve: usize,
    pub halvings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochVerdict {
    pub improved: bool,
    pub halved: bool,
}

impl Schedule {
    pub fn new(lr_initial: f64) -> Self {
        Self {
            current_lr: lr_initial,
            best_validation: f64::INFINITY,
            epochs_since_improve: 0,
            halvings: 0,
        }
    }

    fn halve(&mut self) {
        self.current_lr *= 0.5;
        self.halvings += 1;
    }

    /// Call before training epoch `epoch` (1-based). Milestone schedules
    /// halve here, so the new rate applies from that epoch on. Returns
    /// whether the rate changed.
    pub fn start_epoch(&mut self, cfg: &TrainConfig, epoch: usize) -> bool {
        let at_milestone = cfg.lr_schedule == LrSchedule::FixedMilestone
            && cfg.milestone_epochs.as_deref().unwrap_or_default().contains(&epoch);
        if at_milestone {
            self.halve();
        }
        at_milestone
    }

    /// Call with the epoch's validation loss. Under the plateau schedule the
    /// rate halves once `lr_halve_patience_epochs` epochs in a row fail to
    /// beat the best loss so far, and the count starts over.
    pub fn end_epoch(&mut self, cfg: &TrainConfig, validation: f64) -> EpochVerdict {
        let improved = validation < self.best_validation;
        if improved {
            self.best_validation = validation;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        let halved = cfg.lr_schedule == LrSchedule::Plateau
            && self.epochs_since_improve >= cfg.lr_halve_patience_epochs;
        if halved {
            self.halve();
            self.epochs_since_improve = 0;
        }
        EpochVerdict { improved, halved }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Objective;
    use super::*;
    use crate::model::{ModelParams, Tensor};
    use std::collections::BTreeMap;

    fn plateau(patience: usize) -> TrainConfig {
        TrainConfig {
            lr_halve_patience_epochs: patience,
            ..TrainConfig::new(Objective::Samom)
        }
    }

    #[test]
    fn plateau_halves_after_exactly_patience_stale_epochs() {
        for patience in [2, 10] {
            let cfg = plateau(patience);
            let mut s = Schedule::new(1e-3);
            assert!(s.end_epoch(&cfg, 5.0).improved);
            for k in 1..patience {
                let v = s.end_epoch(&cfg, 5.0);
                assert!(!v.halved, "halved after {k} stale epochs with patience {patience}");
            }
            assert!(s.end_epoch(&cfg, 5.0).halved);
            assert_eq!(s.current_lr, 5e-4);
            assert_eq!(s.halvings, 1);
            // The count restarts: another `patience` stale epochs for the next halving.
            for _ in 1..patience {
                assert!(!s.end_epoch(&cfg, 5.0).halved);
            }
            assert!(s.end_epoch(&cfg, 5.0).halved);
            assert_eq!(s.current_lr, 2.5e-4);
        }
    }

    #[test]
    fn improvement_resets_the_stale_count() {
        let cfg = plateau(2);
        let mut s = Schedule::new(1.0);
        s.end_epoch(&cfg, 3.0);
        s.end_epoch(&cfg, 3.0);
        assert!(s.end_epoch(&cfg, 2.0).improved);
        assert!(!s.end_epoch(&cfg, 2.5).halved);
        assert!(s.end_epoch(&cfg, 2.0).halved, "equal loss is not an improvement");
        assert_eq!(s.current_lr, 0.5);
    }

    #[test]
    fn milestone_halves_at_epoch_18_of_20() {
        let cfg = TrainConfig::recipe(super::super::Recipe::Crossdomain, &TrainConfig::new(Objective::Samom));
        let mut s = Schedule::new(cfg.lr_initial);
        let mut trace = Vec::new();
        for epoch in 1..=cfg.epochs {
            s.start_epoch(&cfg, epoch);
            trace.push(s.current_lr);
            s.end_epoch(&cfg, 1.0);
        }
        assert_eq!(cfg.epochs, 20);
        assert!(trace[..17].iter().all(|&lr| lr == 1e-3));
        assert!(trace[17..].iter().all(|&lr| lr == 5e-4));
        assert_eq!(s.halvings, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_the_gradient_sign() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut p = ModelParams::from_tensors(tensors);
        let mut g = p.zeros_like();
        g.get_mut("w").data_mut().copy_from_slice(&[0.3, -4.0, 0.0]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.01);
        let w = p.get("w").data();
        // m_hat = g and v_hat = g^2 after one step, so the update is lr * sign(g).
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 1.99).abs() < 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut tensors = BTreeMap::new();
        tensors.insert("a".to_string(), Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let mut g = ModelParams::from_tensors(tensors);
        assert_eq!(clip_global_norm(&mut g, 5.0), 5.0);
        assert_eq!(g.get("a").data(), &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
