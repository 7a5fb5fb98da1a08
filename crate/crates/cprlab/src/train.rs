//! The training loop and its JSONL metrics stream.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use cpr_core::models::{mlp_backward, mlp_forward, mlp_loss};
use cpr_core::optimizers::add_l2_penalty;
use cpr_core::{
    CoreError, Cpr, LrSchedule, MlpSpec, OptimizerKind, OptimizerState, ParamGroup, RegMeasure,
    RngState, WdSchedule,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{data_generate, derive_seed, Dataset};
use crate::error::{HarnessError, Result};

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub name: String,
    pub r: f64,
    pub lambda: f64,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Number of completed optimizer steps.
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub groups: Vec<GroupRecord>,
}

/// Result of a single optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
}

/// Owns everything one run needs and advances it one step at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: RunConfig,
    spec: MlpSpec,
    data: Dataset,
    groups: Vec<ParamGroup>,
    optimizer: OptimizerState,
    cpr: Option<Cpr>,
    lr_schedule: LrSchedule,
    wd_schedule: Option<WdSchedule>,
    measure: RegMeasure,
    batch_rng: RngState,
    order: Vec<usize>,
    cursor: usize,
    t: u64,
}

impl Trainer {
    /// `cfg` must already be validated.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let mut data_rng = RngState::new(cfg.data_seed());
        let data = data_generate(&cfg.data, &mut data_rng)?;
        Self::with_data(cfg, data)
    }

    pub fn with_data(cfg: RunConfig, data: Dataset) -> Result<Self> {
        let spec = cfg.mlp_spec_for(Some((data.input_dim(), data.output_dim())))?;
        let mut init_rng = RngState::new(derive_seed(cfg.seed, INIT_STREAM));
        let groups = spec.init_params(&mut init_rng)?;
        let optimizer =
            OptimizerState::new(cfg.optimizer.kind.base(), cfg.optimizer.hyperparams(), &groups)?;
        let cpr = cfg.cpr_config().map(|c| Cpr::new(c, &groups)).transpose()?;
        let measure = cpr.as_ref().map_or(RegMeasure::SquaredL2, |c| c.config().measure);
        let lr_schedule = cfg.lr_schedule();
        let wd_schedule = cfg.wd_schedule();
        Ok(Self {
            spec,
            data,
            groups,
            optimizer,
            cpr,
            lr_schedule,
            wd_schedule,
            measure,
            batch_rng: RngState::new(derive_seed(cfg.seed, BATCH_STREAM)),
            order: Vec::new(),
            cursor: 0,
            t: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn cpr(&self) -> Option<&Cpr> {
        self.cpr.as_ref()
    }

    /// Steps completed so far.
    pub fn steps_done(&self) -> u64 {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.cfg.training.total_steps
    }

    fn next_batch_indices(&mut self) -> Option<Vec<usize>> {
        let n = self.data.train.len();
        let bs = self.cfg.training.batch_size;
        if bs == 0 || bs >= n {
            return None;
        }
        // epoch-wise shuffling; a trailing partial batch is dropped
        if self.order.is_empty() || self.cursor + bs > n {
            self.order = self.batch_rng.permutation(n);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + bs].to_vec();
        self.cursor += bs;
        Some(idx)
    }

    fn clip_gradients(&mut self) {
        let Some(max_norm) = self.cfg.training.grad_clip else {
            return;
        };
        let norm = self
            .groups
            .iter()
            .map(|g| g.grad.frobenius_sq())
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut self.groups {
                g.grad = g.grad.scale(scale);
            }
        }
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(HarnessError::Core(CoreError::Contract(
                "training already finished".into(),
            )));
        }
        let t = self.t;
        let (loss, cache) = match self.next_batch_indices() {
            Some(idx) => {
                let batch = self.data.train.select(&idx)?;
                mlp_forward(&self.spec, &self.groups, &batch)?
            }
            None => mlp_forward(&self.spec, &self.groups, &self.data.train)?,
        };
        if !loss.is_finite() {
            return Err(CoreError::numeric("loss", format!("training loss is {loss} at step {t}")).into());
        }
        mlp_backward(&self.spec, &mut self.groups, &cache)?;
        for g in &self.groups {
            if !g.grad.is_finite() {
                return Err(CoreError::numeric(&g.name, format!("non-finite gradient at step {t}")).into());
            }
        }
        self.clip_gradients();

        let lr = self.lr_schedule.lr_at(t)?;
        self.optimizer.hp.lr = lr;
        if let Some(wd) = &self.wd_schedule {
            self.optimizer.hp.weight_decay = wd.wd_at(t)?;
        }
        let snapshot = self.cpr.as_ref().map(|c| c.snapshot(&self.groups));
        if self.optimizer.kind() == OptimizerKind::Adam {
            add_l2_penalty(&mut self.groups, self.optimizer.hp.weight_decay)?;
        }
        self.optimizer.step(&mut self.groups)?;
        if let (Some(cpr), Some(snap)) = (self.cpr.as_mut(), snapshot.as_ref()) {
            cpr.apply(&mut self.groups, snap, t)?;
        }
        for g in &self.groups {
            if !g.theta.is_finite() {
                return Err(
                    CoreError::numeric(&g.name, format!("non-finite parameters after step {t}")).into(),
                );
            }
        }
        self.t += 1;
        Ok(StepOutcome {
            step: self.t,
            lr,
            train_loss: loss,
        })
    }

    pub fn val_loss(&self) -> Result<f64> {
        Ok(mlp_loss(&self.spec, &self.groups, &self.data.val)?)
    }

    pub fn group_records(&self) -> Vec<GroupRecord> {
        let states = self.cpr.as_ref().map(|c| c.states());
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.regularized)
            .map(|(i, g)| {
                let state = states.and_then(|s| s[i].as_ref());
                GroupRecord {
                    name: g.name.clone(),
                    r: self.measure.value(&g.theta),
                    lambda: state.map_or(0.0, |s| s.lambda()),
                    kappa: state.and_then(|s| s.kappa()),
                }
            })
            .collect()
    }

    /// Runs the remaining steps, streaming records to `sink`, and returns
    /// the final record.
    pub fn run(&mut self, mut sink: Option<&mut dyn Write>) -> Result<MetricsRecord> {
        let total = self.cfg.training.total_steps;
        let log_every = self.cfg.logging.log_every;
        let eval_every = self.cfg.training.eval_every;
        let mut last = None;
        while !self.is_finished() {
            let out = self.step()?;
            let is_final = out.step == total;
            if out.step % log_every != 0 && !is_final {
                continue;
            }
            let val_loss = if out.step % eval_every == 0 || is_final {
                let v = self.val_loss()?;
                if !v.is_finite() {
                    return Err(CoreError::numeric("loss", format!("validation loss is {v}")).into());
                }
                Some(v)
            } else {
                None
            };
            let rec = MetricsRecord {
                step: out.step,
                lr: out.lr,
                train_loss: out.train_loss,
                val_loss,
                groups: self.group_records(),
            };
            if let Some(w) = sink.as_deref_mut() {
                write_record(w, &rec)?;
            }
            last = Some(rec);
        }
        if let Some(cpr) = &self.cpr {
            for name in cpr.report_unconstrained() {
                warn!("group `{name}` stayed unconstrained for the whole run");
            }
        }
        last.ok_or_else(|| HarnessError::Core(CoreError::Contract("no steps were run".into())))
    }
}

fn write_record(w: &mut dyn Write, rec: &MetricsRecord) -> Result<()> {
    let line = serde_json::to_string(rec).expect("record serializes");
    writeln!(w, "{line}")
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io("metrics", e))
}

/// Runs `cfg` (already validated) in `out_dir`: echoes the config, streams
/// metrics, returns the final record. On failure the metrics written so far
/// are kept.
pub fn train_run(cfg: &RunConfig, out_dir: &Path) -> Result<MetricsRecord> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let cfg_path = out_dir.join("config.json");
    fs::write(&cfg_path, cfg.to_json_pretty() + "\n").map_err(|e| HarnessError::io(&cfg_path, e))?;
    let metrics_path = out_dir.join(&cfg.logging.metrics_path);
    if let Some(parent) = metrics_path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let file = File::create(&metrics_path).map_err(|e| HarnessError::io(&metrics_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut trainer = Trainer::new(cfg.clone())?;
    info!(
        "training {} steps, {} parameter groups",
        cfg.training.total_steps,
        trainer.groups().len()
    );
    let result = trainer.run(Some(&mut writer));
    writer.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
    result
}

/// Reads a metrics file back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Input(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                HarnessError::Input(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::OptimizerChoice;

    fn small(kind: OptimizerChoice) -> RunConfig {
        let mut c = RunConfig::default();
        c.optimizer.kind = kind;
        c.optimizer.lr = 1e-2;
        c.data.n_train = 64;
        c.data.n_val = 64;
        c.model.hidden = vec![8];
        c.training.total_steps = 60;
        c.training.batch_size = 16;
        c.training.eval_every = 20;
        c.logging.log_every = 7;
        c.schedule.warmup_steps = 5;
        c.validate(None).unwrap();
        c
    }

    #[test]
    fn logs_every_and_final_step() {
        let mut tr = Trainer::new(small(OptimizerChoice::AdamW)).unwrap();
        let mut buf = Vec::new();
        let fin = tr.run(Some(&mut buf)).unwrap();
        let recs: Vec<MetricsRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let steps: Vec<u64> = recs.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![7, 14, 21, 28, 35, 42, 49, 56, 60]);
        assert_eq!(recs.last().unwrap(), &fin);
        assert!(fin.val_loss.is_some());
        assert!(recs[0].val_loss.is_none());
        assert!(recs.iter().all(|r| r.groups.iter().all(|g| g.kappa.is_none())));
        assert_eq!(fin.groups.len(), 2);
    }

    #[test]
    fn kappa_null_then_set_for_warm_start() {
        let mut c = small(OptimizerChoice::AdamCpr);
        c.cpr.init_param = Some(30.0);
        let mut tr = Trainer::new(c).unwrap();
        let mut buf = Vec::new();
        tr.run(Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"kappa\":null"), "{first}");
        assert!(!text.lines().last().unwrap().contains("null"));
    }

    #[test]
    fn huge_lr_is_numeric_failure() {
        let mut c = small(OptimizerChoice::Sgd);
        c.optimizer.lr = 1e200;
        c.schedule.warmup_steps = 0;
        let err = Trainer::new(c).unwrap().run(None).unwrap_err();
        assert!(err.is_numeric(), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn full_batch_is_deterministic() {
        let mut c = small(OptimizerChoice::Sgd);
        c.training.batch_size = 0;
        let a = Trainer::new(c.clone()).unwrap().run(None).unwrap();
        let b = Trainer::new(c).unwrap().run(None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grad_clip_bounds_global_norm() {
        let mut c = small(OptimizerChoice::Sgd);
        c.training.grad_clip = Some(1e-3);
        let mut tr = Trainer::new(c).unwrap();
        tr.step().unwrap();
        let norm: f64 = tr.groups().iter().map(|g| g.grad.frobenius_sq()).sum::<f64>().sqrt();
        assert!(norm <= 1e-3 * (1.0 + 1e-12));
    }
}
