//! Regularization measures `R(θ)` over a single parameter matrix, their
//! analytic gradients, and the smoothed Lagrangian used to cross-check the
//! multiplier update.
//!
//! `SquaredL2` carries the ½ factor, so its gradient is `θ` itself. Neither
//! measure is normalized by the element count.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMeasure {
    /// `½ Σ θᵢ²`
    #[default]
    SquaredL2,
    /// Population standard deviation of the entries.
    StdDev,
}

impl RegMeasure {
    pub fn value(self, theta: &Matrix) -> f64 {
        match self {
            RegMeasure::SquaredL2 => 0.5 * theta.frobenius_sq(),
            RegMeasure::StdDev => {
                let (_, var) = mean_var(theta.as_slice());
                var.sqrt()
            }
        }
    }

    /// `∇R(θ)`. The std-dev gradient of a constant matrix is defined as zero.
    pub fn grad(self, theta: &Matrix) -> Matrix {
        match self {
            RegMeasure::SquaredL2 => theta.clone(),
            RegMeasure::StdDev => {
                let n = theta.len() as f64;
                let (mean, var) = mean_var(theta.as_slice());
                let sd = var.sqrt();
                if sd == 0.0 {
                    return theta.map(|_| 0.0);
                }
                theta.map(|x| (x - mean) / (n * sd))
            }
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn reg_value(measure: RegMeasure, theta: &Matrix) -> f64 {
    measure.value(theta)
}

pub fn reg_grad(measure: RegMeasure, theta: &Matrix) -> Matrix {
    measure.grad(theta)
}

/// Proximal point `λ_t` and update rate `μ` of the smoothed Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedLagrangianParams {
    lambda_t: f64,
    mu: f64,
}

impl SmoothedLagrangianParams {
    pub fn new(lambda_t: f64, mu: f64) -> Result<Self> {
        if !(lambda_t >= 0.0 && lambda_t.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "lambda_t must be finite and non-negative, got {lambda_t}"
            )));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "mu must be finite and positive, got {mu}"
            )));
        }
        Ok(Self { lambda_t, mu })
    }

    pub fn lambda_t(&self) -> f64 {
        self.lambda_t
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Inner objective `f + λ·c − (λ − λ_t)² / (2μ)` at a candidate `λ`.
    pub fn inner_objective(&self, f_val: f64, c_val: f64, lambda: f64) -> f64 {
        let d = lambda - self.lambda_t;
        f_val + lambda * c_val - d * d / (2.0 * self.mu)
    }
}

/// Closed form of `max_{λ≥0} f + λc − (λ−λ_t)²/(2μ)`.
pub fn smoothed_lagrangian(f_val: f64, c_val: f64, p: SmoothedLagrangianParams) -> f64 {
    let SmoothedLagrangianParams { lambda_t, mu } = p;
    if lambda_t + mu * c_val >= 0.0 {
        f_val + c_val * (lambda_t + 0.5 * mu * c_val)
    } else {
        f_val - lambda_t * lambda_t / (2.0 * mu)
    }
}

/// Result of a grid search over the multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub argmax: f64,
    /// Spacing between adjacent grid points.
    pub step: f64,
}

/// Maximizes the inner objective over `grid_n` evenly spaced points of
/// `[0, λ_t + μ|c| + 10]`, without using the closed form.
pub fn smoothed_lagrangian_bruteforce(
    f_val: f64,
    c_val: f64,
    p: SmoothedLagrangianParams,
    grid_n: usize,
) -> Result<GridMax> {
    if grid_n < 1000 {
        return Err(CoreError::Parameter(format!(
            "grid needs at least 1000 points, got {grid_n}"
        )));
    }
    let hi = p.lambda_t + p.mu * c_val.abs() + 10.0;
    let step = hi / (grid_n - 1) as f64;
    let mut best = GridMax {
        value: f64::NEG_INFINITY,
        argmax: 0.0,
        step,
    };
    for i in 0..grid_n {
        let lambda = i as f64 * step;
        let v = p.inner_objective(f_val, c_val, lambda);
        if v > best.value {
            best.value = v;
            best.argmax = lambda;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_abs_error, max_relative_error};
    use crate::linalg::RngState;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn squared_l2_values_and_grad() {
        assert_eq!(reg_value(RegMeasure::SquaredL2, &m(&[vec![3.0, 4.0]])), 12.5);
        assert_eq!(reg_value(RegMeasure::SquaredL2, &Matrix::zeros(2, 2).unwrap()), 0.0);
        assert_eq!(
            reg_grad(RegMeasure::SquaredL2, &m(&[vec![3.0, 4.0]])).as_slice(),
            &[3.0, 4.0]
        );
    }

    #[test]
    fn std_dev_degenerate_cases() {
        let c = m(&[vec![1.0, 1.0, 1.0]]);
        assert_eq!(reg_value(RegMeasure::StdDev, &c), 0.0);
        assert_eq!(reg_grad(RegMeasure::StdDev, &c).as_slice(), &[0.0; 3]);
        let single = m(&[vec![4.2]]);
        assert_eq!(reg_value(RegMeasure::StdDev, &single), 0.0);
    }

    #[test]
    fn std_dev_is_population_convention() {
        // entries 1..4: mean 2.5, population variance 1.25
        let x = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!((reg_value(RegMeasure::StdDev, &x) - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn std_dev_grad_matches_finite_differences_seed7() {
        let theta = Matrix::init_normal(3, 3, 1.0, &mut RngState::new(7)).unwrap();
        let fd = central_difference(&theta, 1e-5, |t| RegMeasure::StdDev.value(t));
        let an = RegMeasure::StdDev.grad(&theta);
        assert!(max_abs_error(&an, &fd) < 1e-6);
    }

    #[test]
    fn smoothed_lagrangian_branches() {
        let p = SmoothedLagrangianParams::new(0.0, 1.0).unwrap();
        assert_eq!(smoothed_lagrangian(1.0, 1.0, p), 1.5);
        let p = SmoothedLagrangianParams::new(1.0, 1.0).unwrap();
        assert_eq!(smoothed_lagrangian(1.0, -3.0, p), 0.5);
        let p = SmoothedLagrangianParams::new(0.0, 1.0).unwrap();
        assert_eq!(smoothed_lagrangian(0.0, -2.0, p), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SmoothedLagrangianParams::new(-0.1, 1.0).is_err());
        assert!(SmoothedLagrangianParams::new(0.1, 0.0).is_err());
        let p = SmoothedLagrangianParams::new(0.1, 1.0).unwrap();
        assert!(smoothed_lagrangian_bruteforce(0.0, 1.0, p, 999).is_err());
    }

    #[test]
    fn bruteforce_agrees_on_branch_examples() {
        for (f, c, lt) in [(1.0, 1.0, 0.0), (1.0, -3.0, 1.0), (0.0, -2.0, 0.0)] {
            let p = SmoothedLagrangianParams::new(lt, 1.0).unwrap();
            let g = smoothed_lagrangian_bruteforce(f, c, p, 100_000).unwrap();
            assert!((g.value - smoothed_lagrangian(f, c, p)).abs() < 1e-4);
        }
    }

    #[test]
    fn bruteforce_recovers_interior_and_clamped_maximizers() {
        let p = SmoothedLagrangianParams::new(1.0, 1.0).unwrap();
        let g = smoothed_lagrangian_bruteforce(0.0, 2.0, p, 100_000).unwrap();
        assert!((g.value - 4.0).abs() < 1e-4, "{g:?}");
        assert!((g.argmax - 3.0).abs() <= g.step);
        let g = smoothed_lagrangian_bruteforce(0.0, -5.0, p, 100_000).unwrap();
        assert!((g.value + 0.5).abs() < 1e-4, "{g:?}");
        assert_eq!(g.argmax, 0.0);
    }

    #[test]
    fn continuous_at_branch_boundary() {
        for &(lt, mu) in &[(0.5, 1.0), (2.0, 0.1), (3.0, 10.0)] {
            let p = SmoothedLagrangianParams::new(lt, mu).unwrap();
            let c = -lt / mu;
            let active = c * (lt + 0.5 * mu * c);
            let inactive = -lt * lt / (2.0 * mu);
            assert!((active - inactive).abs() < 1e-12);
            assert!((smoothed_lagrangian(0.0, c, p) - inactive).abs() < 1e-12);
        }
    }

    #[test]
    fn grads_match_finite_differences_over_100_seeds() {
        for seed in 0..100u64 {
            let mut rng = RngState::new(seed);
            let r = 1 + rng.index(8);
            let c = 1 + rng.index(8);
            let theta = Matrix::init_normal(r, c, 1.0, &mut rng).unwrap();
            for measure in [RegMeasure::SquaredL2, RegMeasure::StdDev] {
                if measure == RegMeasure::StdDev && theta.len() == 1 {
                    continue;
                }
                let fd = central_difference(&theta, 1e-5, |t| measure.value(t));
                let err = max_relative_error(&measure.grad(&theta), &fd);
                assert!(err < 1e-5, "seed {seed} {measure:?}: {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_grid(
            f in -3.0f64..3.0,
            c in -5.0f64..5.0,
            lt in 0.0f64..5.0,
            mu in 0.01f64..10.0,
        ) {
            let p = SmoothedLagrangianParams::new(lt, mu).unwrap();
            let g = smoothed_lagrangian_bruteforce(f, c, p, 20_000).unwrap();
            let closed = smoothed_lagrangian(f, c, p);
            let star = (lt + mu * c).max(0.0);
            prop_assert!((g.argmax - star).abs() <= g.step);
            // the objective is quadratic with curvature 1/μ around its peak
            let tol = g.step * g.step / (2.0 * mu) + 1e-9;
            prop_assert!(closed >= g.value - 1e-12 && closed - g.value <= tol);
        }
    }
}
