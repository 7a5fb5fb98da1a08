//! Constrained parameter regularization.
//!
//! Each regularized group `j` carries an inequality constraint
//! `R(θʲ) − κʲ ≤ 0` and a non-negative multiplier `λʲ`. After the base
//! optimizer has produced `θ_{t+1}`, every constrained group is updated as
//!
//! ```text
//! λʲ ← max(0, λʲ + μ·(R(θʲ_t) − κʲ))
//! θʲ_{t+1} ← θʲ_{t+1} − λʲ·∇R(θʲ_t)
//! ```
//!
//! where `θ_t` is the snapshot taken before the base step. No learning-rate
//! factor enters the constraint step and nothing touches the optimizer's
//! moment buffers.
//!
//! The bound `κʲ` comes from one of four initializers ([`KappaInit`]). A
//! bound that has not been set yet (`None`) behaves as `+∞`: the constraint
//! step is skipped entirely and `λ` stays at zero. Serialized state writes
//! it as `null`.
//!
//! Groups are always visited in declaration order.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::optimizers::ParamGroup;
use crate::regularizers::RegMeasure;

/// `max(0, λ + μ·(R − κ))`.
pub fn lambda_update(lambda: f64, mu: f64, r_val: f64, kappa: f64) -> f64 {
    (lambda + mu * (r_val - kappa)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    #[serde(rename = "kappa_k")]
    KappaK,
    #[serde(rename = "kappa_ki0")]
    KappaKI0,
    #[serde(rename = "kappa_ws")]
    KappaWS,
    #[serde(rename = "kappa_ip")]
    KappaIP,
}

/// How the bound of each group is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KappaInit {
    /// The same bound for every group.
    Uniform { kappa: f64 },
    /// `k · R(θ₀)` per group.
    Factor { k: f64 },
    /// `R(θ_s)` after `steps` unconstrained steps.
    WarmStart { steps: u64 },
    /// `R` at the first sampled step whose second difference is negative.
    /// `smoothing` is a trailing moving-average width over the samples
    /// (1 = raw samples).
    Inflection { sample_interval: u64, smoothing: usize },
}

impl KappaInit {
    pub fn mode(&self) -> InitMode {
        match self {
            KappaInit::Uniform { .. } => InitMode::KappaK,
            KappaInit::Factor { .. } => InitMode::KappaKI0,
            KappaInit::WarmStart { .. } => InitMode::KappaWS,
            KappaInit::Inflection { .. } => InitMode::KappaIP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KappaInit::Uniform { kappa } if !(kappa > 0.0 && kappa.is_finite()) => Err(
                CoreError::Parameter(format!("kappa must be positive and finite, got {kappa}")),
            ),
            KappaInit::Factor { k } if !(k > 0.0 && k.is_finite()) => Err(CoreError::Parameter(
                format!("kappa factor must be positive and finite, got {k}"),
            )),
            KappaInit::WarmStart { steps: 0 } => Err(CoreError::Parameter(
                "warm-start steps must be at least 1".into(),
            )),
            KappaInit::Inflection {
                sample_interval,
                smoothing,
            } if sample_interval == 0 || smoothing == 0 => Err(CoreError::Parameter(
                "inflection sample interval and smoothing width must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Default inflection sampling interval: a tenth of the LR warmup, at least 1.
pub fn default_sample_interval(lr_warmup_steps: u64) -> u64 {
    (lr_warmup_steps / 10).max(1)
}

/// Default warm-start length: twice the LR warmup.
pub fn default_warm_start(lr_warmup_steps: u64) -> u64 {
    2 * lr_warmup_steps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CprConfig {
    pub mu: f64,
    pub measure: RegMeasure,
    pub init: KappaInit,
    /// AdaCPR: lower κ to the current R whenever the constraint deactivates.
    pub adaptive: bool,
}

impl CprConfig {
    pub fn new(init: KappaInit) -> Self {
        Self {
            mu: 1.0,
            measure: RegMeasure::SquaredL2,
            init,
            adaptive: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "mu must be positive and finite, got {}",
                self.mu
            )));
        }
        self.init.validate()
    }
}

/// Constraint state of one regularized group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CprGroupState {
    name: String,
    lambda: f64,
    prev_lambda: f64,
    /// `None` is the unbounded sentinel.
    kappa: Option<f64>,
    mu: f64,
    measure: RegMeasure,
    init: KappaInit,
    r_samples: Vec<(u64, f64)>,
    ip_found: bool,
    ip_step: Option<u64>,
}

impl CprGroupState {
    pub fn new(
        name: impl Into<String>,
        mu: f64,
        measure: RegMeasure,
        init: KappaInit,
        kappa: Option<f64>,
    ) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(CoreError::Parameter(format!("mu must be positive, got {mu}")));
        }
        init.validate()?;
        if let Some(k) = kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(CoreError::Parameter(format!(
                    "kappa must be finite and non-negative, got {k}"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            lambda: 0.0,
            prev_lambda: 0.0,
            kappa,
            mu,
            measure,
            init,
            r_samples: Vec::new(),
            ip_found: false,
            ip_step: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prev_lambda(&self) -> f64 {
        self.prev_lambda
    }

    pub fn kappa(&self) -> Option<f64> {
        self.kappa
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn measure(&self) -> RegMeasure {
        self.measure
    }

    pub fn init(&self) -> KappaInit {
        self.init
    }

    pub fn init_mode(&self) -> InitMode {
        self.init.mode()
    }

    pub fn r_samples(&self) -> &[(u64, f64)] {
        &self.r_samples
    }

    pub fn ip_found(&self) -> bool {
        self.ip_found
    }

    /// Step at which the inflection point was detected, if any.
    pub fn ip_step(&self) -> Option<u64> {
        self.ip_step
    }

    fn constrain(&mut self, group: &mut ParamGroup, theta_pre: &Matrix, r_val: f64) -> Result<()> {
        let Some(kappa) = self.kappa else {
            return Ok(());
        };
        if !r_val.is_finite() {
            return Err(CoreError::numeric(&group.name, "non-finite regularization value"));
        }
        self.prev_lambda = self.lambda;
        self.lambda = lambda_update(self.lambda, self.mu, r_val, kappa);
        if self.lambda > 0.0 {
            let grad = self.measure.grad(theta_pre);
            group.theta.add_scaled(-self.lambda, &grad)?;
            if !group.theta.is_finite() {
                return Err(CoreError::numeric(&group.name, "non-finite parameters after constraint step"));
            }
        }
        Ok(())
    }
}

/// One constraint step for a regularized group, using the pre-step
/// parameters `theta_pre` for both `R` and `∇R`.
pub fn cpr_constraint_step(
    group: &mut ParamGroup,
    state: &mut CprGroupState,
    theta_pre: &Matrix,
) -> Result<()> {
    if !group.regularized {
        return Err(CoreError::Contract(format!(
            "constraint step on unregularized group `{}`",
            group.name
        )));
    }
    group.theta.check_same_shape(theta_pre, &group.name)?;
    let r = state.measure.value(theta_pre);
    state.constrain(group, theta_pre, r)
}

/// Kappa-K: the same bound for every regularized group (`None` elsewhere).
pub fn kappa_init_uniform(groups: &[ParamGroup], kappa: f64) -> Result<Vec<Option<f64>>> {
    KappaInit::Uniform { kappa }.validate()?;
    Ok(groups
        .iter()
        .map(|g| g.regularized.then_some(kappa))
        .collect())
}

/// Kappa-kI₀: `k · R(θ₀)` per regularized group. A group whose initial
/// measure is zero gets `κ = 0`, which activates its constraint at once.
pub fn kappa_init_factor(
    groups: &[ParamGroup],
    k: f64,
    measure: RegMeasure,
) -> Result<Vec<Option<f64>>> {
    KappaInit::Factor { k }.validate()?;
    Ok(groups
        .iter()
        .map(|g| {
            g.regularized.then(|| {
                let r = measure.value(&g.theta);
                if r == 0.0 {
                    warn!("group `{}` has zero initial measure; kappa set to 0", g.name);
                }
                k * r
            })
        })
        .collect())
}

/// Kappa-WS bookkeeping: fixes `κ = R(θ_s)` at step `s` exactly.
pub fn kappa_init_warm_start(state: &mut CprGroupState, step_t: u64, s: u64, r_val: f64) {
    if state.kappa.is_none() && step_t == s {
        state.kappa = Some(r_val);
    }
}

/// Kappa-IP bookkeeping. Samples `R` every `sample_interval` steps; once
/// three (smoothed) samples exist, the first negative backward second
/// difference `S_k − 2S_{k−1} + S_{k−2}` fixes `κ = R_k`, and sampling stops.
pub fn kappa_init_inflection(
    state: &mut CprGroupState,
    step_t: u64,
    r_val: f64,
    sample_interval: u64,
) {
    let smoothing = match state.init {
        KappaInit::Inflection { smoothing, .. } => smoothing.max(1),
        _ => 1,
    };
    if state.ip_found || sample_interval == 0 || !step_t.is_multiple_of(sample_interval) {
        return;
    }
    if state.r_samples.last().is_some_and(|&(s, _)| s >= step_t) {
        return;
    }
    state.r_samples.push((step_t, r_val));
    let n = state.r_samples.len();
    if n < smoothing + 2 {
        return;
    }
    let smoothed = |end: usize| {
        state.r_samples[end + 1 - smoothing..=end]
            .iter()
            .map(|&(_, r)| r)
            .sum::<f64>()
            / smoothing as f64
    };
    let dd = smoothed(n - 1) - 2.0 * smoothed(n - 2) + smoothed(n - 3);
    if dd < 0.0 {
        state.kappa = Some(r_val);
        state.ip_found = true;
        state.ip_step = Some(step_t);
    }
}

/// AdaCPR: when the constraint has just switched off (`λ = 0` after a
/// positive `λ`), tighten the bound to the current measure.
pub fn adacpr_update(state: &mut CprGroupState, r_val: f64) {
    if state.kappa.is_some() && state.lambda == 0.0 && state.prev_lambda > 0.0 {
        state.kappa = Some(r_val);
    }
}

/// Pre-step copies of the regularized groups' parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(Vec<Option<Matrix>>);

impl Snapshot {
    pub fn take(groups: &[ParamGroup]) -> Self {
        Snapshot(
            groups
                .iter()
                .map(|g| g.regularized.then(|| g.theta.clone()))
                .collect(),
        )
    }

    pub fn get(&self, i: usize) -> Option<&Matrix> {
        self.0.get(i).and_then(Option::as_ref)
    }
}

/// Full CPR pass after the base optimizer step. For each regularized group,
/// in order: bound-initializer bookkeeping, the constraint step when the
/// bound is set, then the adaptive-bound update when `adaptive` is on.
/// `states[i]` is `None` exactly for unregularized groups.
pub fn cpr_apply(
    groups: &mut [ParamGroup],
    states: &mut [Option<CprGroupState>],
    snapshot: &Snapshot,
    step_t: u64,
    adaptive: bool,
) -> Result<()> {
    if groups.len() != states.len() {
        return Err(CoreError::Contract(format!(
            "{} groups but {} constraint states",
            groups.len(),
            states.len()
        )));
    }
    for (i, (group, state)) in groups.iter_mut().zip(states.iter_mut()).enumerate() {
        let Some(state) = state else { continue };
        if !group.regularized {
            continue;
        }
        let theta_pre = snapshot.get(i).ok_or_else(|| {
            CoreError::Contract(format!("no pre-step snapshot for `{}`", group.name))
        })?;
        group.theta.check_same_shape(theta_pre, &group.name)?;
        let r = state.measure.value(theta_pre);
        if !r.is_finite() {
            return Err(CoreError::numeric(&group.name, "non-finite regularization value"));
        }
        match state.init {
            KappaInit::WarmStart { steps } => kappa_init_warm_start(state, step_t, steps, r),
            KappaInit::Inflection {
                sample_interval, ..
            } => kappa_init_inflection(state, step_t, r, sample_interval),
            KappaInit::Uniform { .. } | KappaInit::Factor { .. } => {}
        }
        if state.kappa.is_some() {
            state.constrain(group, theta_pre, r)?;
            if adaptive {
                adacpr_update(state, r);
            }
        }
    }
    Ok(())
}

/// A CPR context for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpr {
    config: CprConfig,
    states: Vec<Option<CprGroupState>>,
}

impl Cpr {
    /// Sets up per-group state; Kappa-K and Kappa-kI₀ bounds are fixed here
    /// from the initial parameters, the others start unbounded.
    pub fn new(config: CprConfig, groups: &[ParamGroup]) -> Result<Self> {
        config.validate()?;
        let kappas = match config.init {
            KappaInit::Uniform { kappa } => kappa_init_uniform(groups, kappa)?,
            KappaInit::Factor { k } => kappa_init_factor(groups, k, config.measure)?,
            KappaInit::WarmStart { .. } | KappaInit::Inflection { .. } => {
                vec![None; groups.len()]
            }
        };
        let states = groups
            .iter()
            .zip(kappas)
            .map(|(g, kappa)| {
                g.regularized
                    .then(|| CprGroupState::new(&g.name, config.mu, config.measure, config.init, kappa))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, states })
    }

    pub fn config(&self) -> &CprConfig {
        &self.config
    }

    /// Index-aligned with the groups; `None` for unregularized ones.
    pub fn states(&self) -> &[Option<CprGroupState>] {
        &self.states
    }

    pub fn snapshot(&self, groups: &[ParamGroup]) -> Snapshot {
        Snapshot::take(groups)
    }

    pub fn apply(&mut self, groups: &mut [ParamGroup], snapshot: &Snapshot, step_t: u64) -> Result<()> {
        cpr_apply(groups, &mut self.states, snapshot, step_t, self.config.adaptive)
    }

    /// Names of Kappa-IP groups that never found an inflection point; each
    /// one is logged as a warning.
    pub fn report_unconstrained(&self) -> Vec<String> {
        if self.config.init.mode() != InitMode::KappaIP {
            return Vec::new();
        }
        let missing: Vec<String> = self
            .states
            .iter()
            .flatten()
            .filter(|s| !s.ip_found)
            .map(|s| s.name.clone())
            .collect();
        for name in &missing {
            warn!("no inflection point detected for `{name}`; group stayed unconstrained");
        }
        missing
    }
}
