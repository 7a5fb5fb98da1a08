//! Brute-force and closed-form cross-checks exposed through the CLI.

use std::time::{Duration, Instant};

use cpr_core::cpr::lambda_update;
use cpr_core::models::ridge_closed_form;
use cpr_core::regularizers::{smoothed_lagrangian_bruteforce, SmoothedLagrangianParams};
use cpr_core::{InitMode, LrScheduleKind, Matrix, RngState, Targets};

use crate::config::{DataKind, ModelKind, OptimizerChoice, RunConfig};
use crate::data::data_generate;
use crate::error::Result;
use crate::train::Trainer;

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaOracleReport {
    pub trials: usize,
    pub grid_points: usize,
    /// Trials where the closed form and the grid argmax differ by more than
    /// one grid step.
    pub disagreements: usize,
    /// Largest disagreement measured in grid steps.
    pub worst_in_steps: f64,
    pub elapsed: Duration,
}

impl LambdaOracleReport {
    pub fn passed(&self) -> bool {
        self.disagreements == 0
    }
}

/// Compares the multiplier update against a grid search of the smoothed
/// Lagrangian's inner objective for random `λ_t ∈ [0,5]`, `μ ∈ [0.01,10]`,
/// `c ∈ [−5,5]`.
pub fn lambda_oracle(seed: u64, trials: usize, grid_points: usize) -> Result<LambdaOracleReport> {
    let start = Instant::now();
    let mut rng = RngState::new(seed);
    let mut disagreements = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let lambda_t = rng.uniform(0.0, 5.0);
        let mu = rng.uniform(0.01, 10.0);
        let c = rng.uniform(-5.0, 5.0);
        let p = SmoothedLagrangianParams::new(lambda_t, mu)?;
        let grid = smoothed_lagrangian_bruteforce(0.0, c, p, grid_points)?;
        // c = R − κ, so any split works; κ = 0 keeps it exact
        let closed = lambda_update(lambda_t, mu, c, 0.0);
        let steps = (closed - grid.argmax).abs() / grid.step;
        worst = worst.max(steps);
        if steps > 1.0 {
            disagreements += 1;
        }
    }
    Ok(LambdaOracleReport {
        trials,
        grid_points,
        disagreements,
        worst_in_steps: worst,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeKktReport {
    pub gamma: f64,
    pub kappa_star: f64,
    pub lr: f64,
    pub n: usize,
    /// `‖w − w⋆‖∞` after training.
    pub w_err_inf: f64,
    pub lambda_final: f64,
    pub r_final: f64,
    pub elapsed: Duration,
}

impl RidgeKktReport {
    /// The multiplier the constraint step needs at `w⋆` when the loss is
    /// mean-reduced and the step carries no learning-rate factor.
    pub fn lambda_fixed_point(&self) -> f64 {
        self.lr * self.gamma / self.n as f64
    }

    /// `λ · n / η`, which should approach `γ`.
    pub fn lambda_rescaled(&self) -> f64 {
        self.lambda_final * self.n as f64 / self.lr
    }
}

/// Setup for the ridge correspondence check: linear model, full-batch
/// gradient descent with CPR and a fixed bound.
pub fn ridge_kkt_config(seed: u64, steps: u64, lr: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.data.kind = DataKind::RidgeSynthetic;
    cfg.data.n_train = 50;
    cfg.data.n_val = 50;
    cfg.data.input_dim = 5;
    cfg.data.output_dim = 1;
    cfg.model.kind = ModelKind::Linear;
    cfg.model.init_half_width = 0.0;
    cfg.optimizer.kind = OptimizerChoice::SgdCpr;
    cfg.optimizer.lr = lr;
    cfg.schedule.kind = LrScheduleKind::Constant;
    cfg.schedule.warmup_steps = 0;
    cfg.cpr.init_mode = InitMode::KappaK;
    cfg.cpr.mu = 1.0;
    cfg.training.total_steps = steps;
    cfg.training.batch_size = 0;
    cfg.training.eval_every = steps;
    cfg.logging.log_every = steps;
    cfg
}

/// Trains to the bound `κ⋆ = ½‖w⋆‖²` of the ridge solution and compares
/// the result with `w⋆`.
pub fn ridge_kkt(seed: u64, gamma: f64, steps: u64, lr: f64) -> Result<RidgeKktReport> {
    let start = Instant::now();
    let mut cfg = ridge_kkt_config(seed, steps, lr);
    let data = data_generate(&cfg.data, &mut RngState::new(cfg.data_seed()))?;
    let Targets::Dense(y) = &data.train.targets else {
        unreachable!("ridge data has dense targets")
    };
    let w_star = ridge_closed_form(&data.train.inputs, y, gamma)?;
    let kappa_star = 0.5 * w_star.frobenius_sq();
    cfg.cpr.init_param = Some(kappa_star);
    cfg.validate(None)?;
    let n = data.train.len();
    let mut trainer = Trainer::with_data(cfg, data)?;
    let fin = trainer.run(None)?;
    let w: &Matrix = &trainer.groups()[0].theta;
    let w_err_inf = w.sub(&w_star)?.max_abs();
    let g = &fin.groups[0];
    Ok(RidgeKktReport {
        gamma,
        kappa_star,
        lr,
        n,
        w_err_inf,
        lambda_final: g.lambda,
        r_final: g.r,
        elapsed: start.elapsed(),
    })
}
