//! Learning-rate and weight-decay schedules as pure functions of the step.
//!
//! Warmup is linear from `warmup_start_factor · base_lr` at `t = 0` to
//! `base_lr` at `t = warmup_steps`. The start factor defaults to
//! `1 / warmup_steps`, so the first step never runs at zero learning rate.
//! After warmup the rate anneals to `decay_factor · base_lr` at
//! `t = total_steps`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduleKind {
    CosineWarmup,
    PolynomialWarmup,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: LrScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub decay_factor: f64,
    pub poly_exponent: f64,
    /// Fraction of `base_lr` at `t = 0`; `None` means `1 / warmup_steps`.
    pub warmup_start_factor: Option<f64>,
}

impl LrSchedule {
    pub fn constant(base_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: LrScheduleKind::Constant,
            base_lr,
            warmup_steps: 0,
            total_steps,
            decay_factor: 1.0,
            poly_exponent: 1.0,
            warmup_start_factor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(CoreError::Parameter(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(CoreError::Parameter(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if !(self.poly_exponent > 0.0 && self.poly_exponent.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "poly_exponent must be positive, got {}",
                self.poly_exponent
            )));
        }
        if let Some(f) = self.warmup_start_factor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CoreError::Parameter(format!(
                    "warmup_start_factor must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    fn start_factor(&self) -> f64 {
        self.warmup_start_factor
            .unwrap_or(1.0 / self.warmup_steps.max(1) as f64)
    }

    /// Learning rate at step `t ∈ [0, total_steps)`.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t >= self.total_steps {
            return Err(CoreError::Parameter(format!(
                "step {t} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let base = self.base_lr;
        let w = self.warmup_steps;
        if t < w {
            let start = base * self.start_factor();
            return Ok(start + (base - start) * t as f64 / w as f64);
        }
        let end = self.decay_factor * base;
        let progress = (t - w) as f64 / (self.total_steps - w) as f64;
        Ok(match self.kind {
            LrScheduleKind::Constant => base,
            LrScheduleKind::CosineWarmup => base + (end - base) * 0.5 * (1.0 - (PI * progress).cos()),
            LrScheduleKind::PolynomialWarmup => {
                end + (base - end) * (1.0 - progress).powf(self.poly_exponent)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WdScheduleKind {
    ConstantWd,
    CosineWd,
}

/// Weight-decay schedule; `CosineWd` moves from `base_gamma` at `t = 0` to
/// `final_factor · base_gamma` at `t = total_steps − 1` (decreasing for
/// factors below one, increasing above).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdSchedule {
    pub kind: WdScheduleKind,
    pub base_gamma: f64,
    pub final_factor: f64,
    pub total_steps: u64,
}

impl WdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_gamma >= 0.0 && self.base_gamma.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "base_gamma must be non-negative, got {}",
                self.base_gamma
            )));
        }
        if !(self.final_factor > 0.0 && self.final_factor.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "final_factor must be positive, got {}",
                self.final_factor
            )));
        }
        if self.total_steps == 0 {
            return Err(CoreError::Parameter("total_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn wd_at(&self, t: u64) -> Result<f64> {
        if t >= self.total_steps {
            return Err(CoreError::Parameter(format!(
                "step {t} outside schedule of {} steps",
                self.total_steps
            )));
        }
        Ok(match self.kind {
            WdScheduleKind::ConstantWd => self.base_gamma,
            WdScheduleKind::CosineWd => {
                let progress = if self.total_steps > 1 {
                    t as f64 / (self.total_steps - 1) as f64
                } else {
                    0.0
                };
                let end = self.final_factor * self.base_gamma;
                self.base_gamma + (end - self.base_gamma) * 0.5 * (1.0 - (PI * progress).cos())
            }
        })
    }
}

pub fn lr_at(sched: &LrSchedule, t: u64) -> Result<f64> {
    sched.lr_at(t)
}

pub fn wd_at(sched: &WdSchedule, t: u64) -> Result<f64> {
    sched.wd_at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(decay: f64) -> LrSchedule {
        LrSchedule {
            kind: LrScheduleKind::CosineWarmup,
            base_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 1100,
            decay_factor: decay,
            poly_exponent: 0.9,
            warmup_start_factor: None,
        }
    }

    #[test]
    fn warmup_endpoint_is_base_lr() {
        let s = cosine(0.1);
        assert_eq!(s.lr_at(100).unwrap(), 1e-3);
        assert_eq!(s.lr_at(0).unwrap(), 1e-5);
    }

    #[test]
    fn annealing_endpoint() {
        let s = cosine(0.1);
        let last = s.lr_at(1099).unwrap();
        let one_step = s.lr_at(1098).unwrap() - last;
        assert!((last - 1e-4).abs() <= one_step.abs().max(1e-15));
    }

    #[test]
    fn cosine_midpoint() {
        let s = cosine(0.1);
        assert!((s.lr_at(600).unwrap() - 0.55e-3).abs() < 1e-9);
    }

    #[test]
    fn continuous_at_junction() {
        let s = cosine(0.1);
        // left limit of the warmup line at t = w equals its value there
        let start = 1e-3 / 100.0;
        let left = start + (1e-3 - start) * 100.0 / 100.0;
        assert!((left - s.lr_at(100).unwrap()).abs() < 1e-12);
        let mut p = cosine(0.1);
        p.kind = LrScheduleKind::PolynomialWarmup;
        assert!((left - p.lr_at(100).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn monotone_within_phases() {
        for kind in [LrScheduleKind::CosineWarmup, LrScheduleKind::PolynomialWarmup] {
            let mut s = cosine(0.1);
            s.kind = kind;
            let lrs: Vec<f64> = (0..1100).map(|t| s.lr_at(t).unwrap()).collect();
            assert!(lrs[..=100].windows(2).all(|w| w[1] >= w[0]));
            assert!(lrs[100..].windows(2).all(|w| w[1] <= w[0]));
            assert!(lrs.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn polynomial_end_and_exponent() {
        let mut s = cosine(0.1);
        s.kind = LrScheduleKind::PolynomialWarmup;
        let expected = 1e-4 + (1e-3 - 1e-4) * 0.5f64.powf(0.9);
        assert!((s.lr_at(600).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_and_invalid() {
        let s = cosine(0.1);
        assert!(s.lr_at(1100).is_err());
        let mut bad = cosine(0.1);
        bad.warmup_steps = 1100;
        assert!(bad.validate().is_err());
        bad = cosine(0.0);
        assert!(bad.validate().is_err());
        assert!(cosine(1.0).validate().is_ok());
    }

    #[test]
    fn constant_schedule_after_warmup() {
        let mut s = cosine(0.1);
        s.kind = LrScheduleKind::Constant;
        assert_eq!(s.lr_at(1099).unwrap(), 1e-3);
        assert_eq!(LrSchedule::constant(0.05, 10).lr_at(0).unwrap(), 0.05);
    }

    fn wd(kind: WdScheduleKind, f: f64) -> WdSchedule {
        WdSchedule {
            kind,
            base_gamma: 0.1,
            final_factor: f,
            total_steps: 1000,
        }
    }

    #[test]
    fn wd_cases() {
        let c = wd(WdScheduleKind::ConstantWd, 0.1);
        assert!((0..1000).step_by(97).all(|t| c.wd_at(t).unwrap() == 0.1));
        let down = wd(WdScheduleKind::CosineWd, 0.1);
        assert!((down.wd_at(999).unwrap() - 0.01).abs() < 1e-15);
        let up = wd(WdScheduleKind::CosineWd, 10.0);
        assert_eq!(up.wd_at(0).unwrap(), 0.1);
        assert!((up.wd_at(999).unwrap() - 1.0).abs() < 1e-12);
        for s in [down, up] {
            let v: Vec<f64> = (0..1000).map(|t| s.wd_at(t).unwrap()).collect();
            assert!(v.iter().all(|&g| g >= 0.0));
            let increasing = s.final_factor > 1.0;
            assert!(v.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] }));
        }
        assert!(down.wd_at(1000).is_err());
    }
}
