use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd_momentum" | "momentum" => Ok(Optimizer::SgdMomentum),
            other => Err(format!("unknown optimizer '{other}' (expected sgd or sgd_momentum)")),
        }
    }
}

/// Settings read by a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub grad_clip_norm: Option<f64>,
}

/// Momentum buffers, one per parameter, created on first use.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Matrix>,
}

/// `θ ← θ − lr·u` where `u` is the (globally norm-clipped) gradient, or the
/// momentum buffer `v ← μ·v + g` when momentum is enabled. Gradients are
/// zeroed afterwards. Returns the gradient norm before clipping.
pub fn sgd_step(store: &mut ParamStore, config: &StepConfig, state: &mut SgdState) -> f64 {
    let norm = store.grad_norm();
    let clip = match config.grad_clip_norm {
        Some(max) if norm > max && norm > 0.0 => max / norm,
        _ => 1.0,
    };
    let momentum = config.optimizer == Optimizer::SgdMomentum;
    if momentum && state.velocity.len() != store.len() {
        state.velocity = store.iter().map(|t| Matrix::zeros(t.value.rows(), t.value.cols())).collect();
    }
    for (i, t) in store.iter_mut().enumerate() {
        if !t.requires_grad {
            continue;
        }
        if momentum {
            let v = &mut state.velocity[i];
            for (vk, &g) in v.as_mut_slice().iter_mut().zip(t.grad.as_slice()) {
                *vk = config.momentum * *vk + clip * g;
            }
            for (w, &vk) in t.value.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *w -= config.learning_rate * vk;
            }
        } else {
            for (w, &g) in t.value.as_mut_slice().iter_mut().zip(t.grad.as_slice()) {
                *w -= config.learning_rate * clip * g;
            }
        }
    }
    store.zero_grads();
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(lr: f64, clip: Option<f64>) -> StepConfig {
        StepConfig {
            learning_rate: lr,
            optimizer: Optimizer::Sgd,
            momentum: 0.0,
            grad_clip_norm: clip,
        }
    }

    fn store_with_grad(g: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::row_vector(&vec![1.0; g.len()]));
        s.get_mut(id).grad = Matrix::row_vector(g);
        s
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut s = store_with_grad(&[0.0, 0.0]);
        sgd_step(&mut s, &plain(0.5, Some(1.0)), &mut SgdState::default());
        assert_eq!(s.iter().next().unwrap().value.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn unit_lr_subtracts_grad() {
        let mut s = store_with_grad(&[0.25, -2.0]);
        sgd_step(&mut s, &plain(1.0, None), &mut SgdState::default());
        let t = s.iter().next().unwrap();
        assert_eq!(t.value.as_slice(), &[0.75, 3.0]);
        assert_eq!(t.grad.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn clipping_bounds_update_norm() {
        // |(6, 8)| = 10
        let mut s = store_with_grad(&[6.0, 8.0]);
        let norm = sgd_step(&mut s, &plain(0.1, Some(1.0)), &mut SgdState::default());
        assert_eq!(norm, 10.0);
        let v = s.iter().next().unwrap().value.as_slice().to_vec();
        let update = ((1.0 - v[0]).powi(2) + (1.0 - v[1]).powi(2)).sqrt();
        assert!((update - 0.1).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = StepConfig {
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
            ..plain(1.0, None)
        };
        let mut s = store_with_grad(&[1.0]);
        let mut state = SgdState::default();
        sgd_step(&mut s, &cfg, &mut state);
        s.iter_mut().next().unwrap().grad = Matrix::row_vector(&[1.0]);
        sgd_step(&mut s, &cfg, &mut state);
        // 1 − 1 − 1.9
        assert!((s.iter().next().unwrap().value.as_slice()[0] + 1.9).abs() < 1e-12);
    }
}
