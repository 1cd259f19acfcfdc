use serde::{Deserialize, Serialize};

use super::tape::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adaptive-moment optimizer state (falls back to plain SGD when configured).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adam(params: &ParamSet, learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, params, learning_rate)
    }

    pub fn sgd(params: &ParamSet, learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, params, learning_rate)
    }

    pub fn new(kind: OptimizerKind, params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.ids().any(|id| params.get(id).grad().is_none()) {
            let missing = params
                .ids()
                .find(|&id| params.get(id).grad().is_none())
                .map(|id| params.name(id).to_string())
                .unwrap_or_default();
            return Err(Error::contract(format!("parameter `{missing}` has no gradient")));
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::contract("optimizer state does not match parameter set"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.arrays_mut().iter_mut().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, gv) in data.iter_mut().zip(&g) {
                        *w -= self.learning_rate * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
                    for j in 0..data.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        data[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.arrays_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Array, Tape};

    fn scalar_param(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Array::vector(vec![v]));
        ps
    }

    fn quad_grad(ps: &mut ParamSet) {
        let mut tape = Tape::new();
        let w = tape.param(ps, crate::numerics::ParamId(0));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss, ps).unwrap();
    }

    #[test]
    fn first_step_descends() {
        let mut ps = scalar_param(0.5);
        ps.get_mut(crate::numerics::ParamId(0)).accumulate_grad(&[1.0]);
        let mut opt = OptimizerState::adam(&ps, 0.1);
        opt.step(&mut ps).unwrap();
        assert!(ps.get(crate::numerics::ParamId(0)).data()[0] < 0.5);
        assert!(ps.get(crate::numerics::ParamId(0)).grad().is_none());
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        let mut ps = scalar_param(0.5);
        ps.get_mut(crate::numerics::ParamId(0)).accumulate_grad(&[0.0]);
        let mut opt = OptimizerState::adam(&ps, 0.1);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.get(crate::numerics::ParamId(0)).data()[0], 0.5);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut ps = scalar_param(0.5);
        let mut opt = OptimizerState::adam(&ps, 0.1);
        assert!(matches!(opt.step(&mut ps), Err(Error::Contract(_))));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut ps = scalar_param(1.0);
        let mut opt = OptimizerState::adam(&ps, 0.1);
        for _ in 0..100 {
            quad_grad(&mut ps);
            opt.step(&mut ps).unwrap();
        }
        let w = ps.get(crate::numerics::ParamId(0)).data()[0];
        assert!(w.abs() < 1e-2, "w = {w}");
        assert_eq!(opt.step, 100);
    }

    #[test]
    fn sgd_fallback_descends() {
        let mut ps = scalar_param(1.0);
        let mut opt = OptimizerState::sgd(&ps, 0.1);
        for _ in 0..100 {
            quad_grad(&mut ps);
            opt.step(&mut ps).unwrap();
        }
        assert!(ps.get(crate::numerics::ParamId(0)).data()[0].abs() < 1e-2);
    }
}
