//! Stochastic gradient descent with classic (heavy-ball) momentum.

use crate::error::{NcrfError, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// `v <- momentum*v + g; theta <- theta - lr*v` per parameter group.
pub struct SgdMomentum<F> {
    lr: F,
    momentum: F,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> SgdMomentum<F> {
    pub fn new(lr: F, momentum: F, group_sizes: &[usize]) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: group_sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(NcrfError::Contract(format!(
                "sgd expects {} parameter groups, got {} params / {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.numel() || p.numel() != self.velocity[i].len() {
                return Err(NcrfError::Contract(format!(
                    "sgd group {i}: incongruent sizes {} / {} / {}",
                    p.numel(),
                    g.numel(),
                    self.velocity[i].len()
                )));
            }
            if !g.is_finite() {
                return Err(NcrfError::NonFinite {
                    op: format!("sgd gradient (group {i})"),
                });
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv = *pv - self.lr * *vv;
            }
        }
        Ok(())
    }

    pub fn velocity(&self, group: usize) -> &[F] {
        &self.velocity[group]
    }
}
