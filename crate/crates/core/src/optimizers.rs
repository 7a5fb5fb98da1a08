//! Base first-order optimizers: SGD with classical momentum, Adam and AdamW.
//!
//! Decay terms use the parameter value from before the step,
//! `θ ← θ − η·(update) − η·γ·θ_pre`, and only ever touch groups flagged as
//! regularized. AdamW's decay never enters the moment buffers, so its `m`
//! and `v` match an Adam run on the same gradient stream bit for bit.
//!
//! Plain Adam ignores `weight_decay`; coupled L2 regularization is obtained
//! by calling [`add_l2_penalty`] on the gradients before the step.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// A named parameter matrix with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub theta: Matrix,
    pub grad: Matrix,
    /// Biases and normalization weights are created with `false`.
    pub regularized: bool,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, theta: Matrix, regularized: bool) -> Self {
        let grad = theta.map(|_| 0.0);
        Self {
            name: name.into(),
            theta,
            grad,
            regularized,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-9,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(CoreError::Parameter(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Parameter(format!("lr must be non-negative, got {}", self.lr)));
        }
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        unit("momentum", self.momentum)?;
        if !(self.eps > 0.0) {
            return Err(CoreError::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Per-group optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum Moments {
    Sgd { momentum: Matrix },
    Adam { m: Matrix, v: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    pub hp: Hyperparams,
    step_t: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hp: Hyperparams, groups: &[ParamGroup]) -> Result<Self> {
        hp.validate()?;
        let moments = groups
            .iter()
            .map(|g| {
                let z = g.theta.map(|_| 0.0);
                match kind {
                    OptimizerKind::Sgd => Moments::Sgd { momentum: z },
                    OptimizerKind::Adam | OptimizerKind::AdamW => Moments::Adam {
                        m: z.clone(),
                        v: z,
                    },
                }
            })
            .collect();
        Ok(Self {
            kind,
            hp,
            step_t: 0,
            moments,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of completed steps.
    pub fn step_t(&self) -> u64 {
        self.step_t
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub fn step(&mut self, groups: &mut [ParamGroup]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self, groups),
            OptimizerKind::Adam => adam_step(self, groups),
            OptimizerKind::AdamW => adamw_step(self, groups),
        }
    }

    fn check(&self, groups: &[ParamGroup]) -> Result<()> {
        if groups.len() != self.moments.len() {
            return Err(CoreError::Contract(format!(
                "optimizer tracks {} groups, got {}",
                self.moments.len(),
                groups.len()
            )));
        }
        for g in groups {
            g.theta.check_same_shape(&g.grad, &g.name)?;
            if !g.grad.is_finite() {
                return Err(CoreError::numeric(&g.name, "non-finite gradient"));
            }
        }
        Ok(())
    }
}

/// Adds `γ·θ` to the gradient of every regularized group (coupled L2).
pub fn add_l2_penalty(groups: &mut [ParamGroup], gamma: f64) -> Result<()> {
    if gamma == 0.0 {
        return Ok(());
    }
    for g in groups.iter_mut().filter(|g| g.regularized) {
        g.grad.add_scaled(gamma, &g.theta)?;
    }
    Ok(())
}

/// `b ← momentum·b + g; θ ← θ − η·b − η·γ·θ_pre` (decay on regularized groups).
pub fn sgd_step(state: &mut OptimizerState, groups: &mut [ParamGroup]) -> Result<()> {
    state.check(groups)?;
    let Hyperparams {
        lr,
        momentum,
        weight_decay,
        ..
    } = state.hp;
    for (g, mom) in groups.iter_mut().zip(state.moments.iter_mut()) {
        let Moments::Sgd { momentum: buf } = mom else {
            return Err(CoreError::Contract("sgd_step on non-SGD state".into()));
        };
        let decay = if g.regularized { lr * weight_decay } else { 0.0 };
        let theta = g.theta.as_mut_slice();
        for ((p, b), &grad) in theta
            .iter_mut()
            .zip(buf.as_mut_slice())
            .zip(g.grad.as_slice())
        {
            *b = momentum * *b + grad;
            let pre = *p;
            *p = pre - lr * *b;
            if decay != 0.0 {
                *p -= decay * pre;
            }
        }
    }
    state.step_t += 1;
    Ok(())
}

pub fn adam_step(state: &mut OptimizerState, groups: &mut [ParamGroup]) -> Result<()> {
    adam_impl(state, groups, false)
}

pub fn adamw_step(state: &mut OptimizerState, groups: &mut [ParamGroup]) -> Result<()> {
    adam_impl(state, groups, true)
}

fn adam_impl(state: &mut OptimizerState, groups: &mut [ParamGroup], decoupled: bool) -> Result<()> {
    state.check(groups)?;
    let Hyperparams {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
        ..
    } = state.hp;
    let t = state.step_t + 1;
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    for (g, mom) in groups.iter_mut().zip(state.moments.iter_mut()) {
        let Moments::Adam { m, v } = mom else {
            return Err(CoreError::Contract("adam_step on non-Adam state".into()));
        };
        let decay = if decoupled && g.regularized {
            lr * weight_decay
        } else {
            0.0
        };
        let theta = g.theta.as_mut_slice();
        for (((p, mi), vi), &grad) in theta
            .iter_mut()
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
            .zip(g.grad.as_slice())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * grad;
            *vi = beta2 * *vi + (1.0 - beta2) * grad * grad;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            let pre = *p;
            *p = pre - lr * m_hat / (v_hat.sqrt() + eps);
            if decay != 0.0 {
                *p -= decay * pre;
            }
        }
    }
    state.step_t = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;

    fn scalar_group(theta: f64, grad: f64, regularized: bool) -> ParamGroup {
        let mut g = ParamGroup::new("w", Matrix::new(1, 1, theta).unwrap(), regularized);
        g.grad = Matrix::new(1, 1, grad).unwrap();
        g
    }

    fn hp(lr: f64) -> Hyperparams {
        Hyperparams {
            lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    fn theta(g: &[ParamGroup]) -> f64 {
        g[0].theta.as_slice()[0]
    }

    #[test]
    fn sgd_plain_step() {
        let mut g = vec![scalar_group(1.0, 1.0, true)];
        let mut s = OptimizerState::new(OptimizerKind::Sgd, hp(0.1), &g).unwrap();
        s.step(&mut g).unwrap();
        assert!((theta(&g) - 0.9).abs() < 1e-15);
        assert_eq!(s.step_t(), 1);
    }

    #[test]
    fn sgd_pure_decay() {
        let mut g = vec![scalar_group(1.0, 0.0, true)];
        let h = Hyperparams {
            weight_decay: 0.5,
            ..hp(0.1)
        };
        let mut s = OptimizerState::new(OptimizerKind::Sgd, h, &g).unwrap();
        s.step(&mut g).unwrap();
        assert!((theta(&g) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // b1 = 1, b2 = 0.9 + 1 = 1.9; θ = 1 − 0.1 − 0.19
        let mut g = vec![scalar_group(1.0, 1.0, true)];
        let h = Hyperparams {
            momentum: 0.9,
            ..hp(0.1)
        };
        let mut s = OptimizerState::new(OptimizerKind::Sgd, h, &g).unwrap();
        s.step(&mut g).unwrap();
        s.step(&mut g).unwrap();
        assert!((theta(&g) - 0.71).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step() {
        // m̂ = 0.5, v̂ = 0.25 → θ = 1 − 0.1·0.5/(0.5 + 1e-8)
        let mut g = vec![scalar_group(1.0, 0.5, true)];
        let mut s = OptimizerState::new(OptimizerKind::Adam, hp(0.1), &g).unwrap();
        s.step(&mut g).unwrap();
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((theta(&g) - expected).abs() < 1e-12);
        assert!((theta(&g) - 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr_leave_theta() {
        let mut g = vec![scalar_group(1.0, 0.0, true)];
        let mut s = OptimizerState::new(OptimizerKind::Adam, hp(0.1), &g).unwrap();
        for _ in 0..5 {
            s.step(&mut g).unwrap();
        }
        assert_eq!(theta(&g), 1.0);

        let mut g = vec![scalar_group(1.0, 3.0, true)];
        let mut s = OptimizerState::new(OptimizerKind::Adam, hp(0.0), &g).unwrap();
        s.step(&mut g).unwrap();
        assert_eq!(theta(&g), 1.0);
    }

    #[test]
    fn adamw_pure_decay() {
        let mut g = vec![scalar_group(2.0, 0.0, true)];
        let h = Hyperparams {
            weight_decay: 0.1,
            ..hp(0.1)
        };
        let mut s = OptimizerState::new(OptimizerKind::AdamW, h, &g).unwrap();
        s.step(&mut g).unwrap();
        assert!((theta(&g) - 1.98).abs() < 1e-15);
    }

    fn random_groups(seed: u64) -> Vec<ParamGroup> {
        let mut rng = RngState::new(seed);
        vec![
            ParamGroup::new("w", Matrix::init_normal(3, 4, 1.0, &mut rng).unwrap(), true),
            ParamGroup::new("b", Matrix::init_normal(1, 4, 1.0, &mut rng).unwrap(), false),
        ]
    }

    fn fill_grads(groups: &mut [ParamGroup], rng: &mut RngState) {
        for g in groups {
            let (r, c) = g.theta.shape();
            g.grad = Matrix::init_normal(r, c, 1.0, rng).unwrap();
        }
    }

    fn bits(m: &Matrix) -> Vec<u64> {
        m.as_slice().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn adamw_without_decay_is_bitwise_adam() {
        let mut a = random_groups(1);
        let mut b = a.clone();
        let mut sa = OptimizerState::new(OptimizerKind::Adam, hp(0.01), &a).unwrap();
        let mut sb = OptimizerState::new(OptimizerKind::AdamW, hp(0.01), &b).unwrap();
        let mut rng = RngState::new(11);
        for _ in 0..20 {
            fill_grads(&mut a, &mut rng);
            for (x, y) in b.iter_mut().zip(&a) {
                x.grad = y.grad.clone();
            }
            sa.step(&mut a).unwrap();
            sb.step(&mut b).unwrap();
        }
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(bits(&x.theta), bits(&y.theta));
        }
    }

    #[test]
    fn adamw_decay_stays_out_of_moments_and_bias_groups() {
        let mut a = random_groups(2);
        let mut b = a.clone();
        let mut sa = OptimizerState::new(OptimizerKind::Adam, hp(0.01), &a).unwrap();
        let h = Hyperparams {
            weight_decay: 0.1,
            ..hp(0.01)
        };
        let mut sb = OptimizerState::new(OptimizerKind::AdamW, h, &b).unwrap();
        let mut rng = RngState::new(12);
        for _ in 0..20 {
            fill_grads(&mut a, &mut rng);
            for (x, y) in b.iter_mut().zip(&a) {
                x.grad = y.grad.clone();
            }
            sa.step(&mut a).unwrap();
            sb.step(&mut b).unwrap();
        }
        assert_eq!(sa.moments(), sb.moments());
        assert_eq!(bits(&a[1].theta), bits(&b[1].theta));
        assert_ne!(bits(&a[0].theta), bits(&b[0].theta));
    }

    #[test]
    fn steps_are_deterministic_from_cloned_state() {
        let mut a = random_groups(3);
        fill_grads(&mut a, &mut RngState::new(4));
        let h = Hyperparams {
            weight_decay: 0.05,
            momentum: 0.9,
            ..hp(0.01)
        };
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamW] {
            let mut s1 = OptimizerState::new(kind, h, &a).unwrap();
            let mut s2 = s1.clone();
            let mut g1 = a.clone();
            let mut g2 = a.clone();
            s1.step(&mut g1).unwrap();
            s2.step(&mut g2).unwrap();
            assert_eq!(g1, g2);
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut g = random_groups(5);
        g[1].grad.as_mut_slice()[0] = f64::NAN;
        let before = g.clone();
        let mut s = OptimizerState::new(OptimizerKind::Adam, hp(0.01), &g).unwrap();
        let err = s.step(&mut g).unwrap_err();
        assert_eq!(
            err,
            CoreError::NumericFailure {
                group: "b".into(),
                detail: "non-finite gradient".into()
            }
        );
        assert_eq!(g[0].theta, before[0].theta);
        assert_eq!(s.step_t(), 0);
    }

    #[test]
    fn l2_penalty_skips_unregularized() {
        let mut g = vec![scalar_group(2.0, 1.0, true), scalar_group(2.0, 1.0, false)];
        add_l2_penalty(&mut g, 0.5).unwrap();
        assert_eq!(g[0].grad.as_slice(), &[2.0]);
        assert_eq!(g[1].grad.as_slice(), &[1.0]);
    }

    #[test]
    fn invalid_hyperparams() {
        let g = random_groups(0);
        for bad in [
            Hyperparams { beta1: 1.0, ..hp(0.1) },
            Hyperparams { eps: 0.0, ..hp(0.1) },
            Hyperparams { lr: -1.0, ..hp(0.1) },
            Hyperparams { weight_decay: -0.1, ..hp(0.1) },
        ] {
            assert!(OptimizerState::new(OptimizerKind::Adam, bad, &g).is_err());
        }
    }
}
