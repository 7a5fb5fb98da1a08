//! Cartesian-product hyperparameter sweeps over a base config.

use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::config::{RunConfig, WdScheduleConfig};
use crate::error::{HarnessError, Result};
use crate::train::train_run;

/// Environment variable capping the number of parallel child runs.
pub const THREADS_ENV: &str = "CPRLAB_THREADS";

/// Short names accepted in grid files.
const ALIASES: &[(&str, &str)] = &[
    ("lr", "optimizer.lr"),
    ("wd", "optimizer.weight_decay"),
    ("mu", "cpr.mu"),
    ("seed", "seed"),
];

pub fn resolve_alias(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, full)| full)
}

/// Grid axes, sorted by key.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl Grid {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("grid: {e}")))?;
        let Value::Object(map) = value else {
            return Err(HarnessError::Config("grid must be a JSON object".into()));
        };
        let schema = schema();
        let mut axes = Vec::with_capacity(map.len());
        for (key, values) in map {
            let Value::Array(values) = values else {
                return Err(HarnessError::Config(format!("grid.{key}: expected a list of values")));
            };
            if values.is_empty() {
                return Err(HarnessError::Config(format!("grid.{key}: empty value list")));
            }
            let path = resolve_alias(&key);
            if !path_exists(&schema, path) {
                return Err(HarnessError::Config(format!("grid.{key}: no such config field")));
            }
            axes.push((path.to_string(), values));
        }
        Ok(Self { axes })
    }

    /// Every combination, first axis varying slowest.
    pub fn combinations(&self) -> Vec<Vec<(String, Value)>> {
        let mut out = vec![Vec::new()];
        for (path, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((path.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Every addressable field, with optional sections filled in.
fn schema() -> Value {
    let full = RunConfig {
        wd_schedule: Some(WdScheduleConfig::default()),
        ..RunConfig::default()
    };
    serde_json::to_value(full).expect("config serializes")
}

fn path_exists(schema: &Value, path: &str) -> bool {
    let mut cur = schema;
    for part in path.split('.') {
        match cur.get(part) {
            Some(v) => cur = v,
            None => return false,
        }
    }
    true
}

/// Sets a dotted path in a raw config, creating intermediate objects.
pub fn set_path(cfg: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = cfg;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let Value::Object(map) = cur else {
            return Err(HarnessError::Config(format!(
                "{}: not an object",
                parts[..i].join(".")
            )));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one part")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub run: String,
    pub overrides: Vec<(String, Value)>,
    pub final_val_loss: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn run_child(
    base: &Value,
    base_dir: Option<&Path>,
    overrides: &[(String, Value)],
    dir: &Path,
) -> Result<f64> {
    let mut raw = base.clone();
    for (path, v) in overrides {
        set_path(&mut raw, path, v.clone())?;
    }
    let mut cfg = RunConfig::from_json_value(raw)?;
    cfg.validate(base_dir)?;
    let rec = train_run(&cfg, dir)?;
    rec.val_loss
        .ok_or_else(|| HarnessError::Input("final record has no validation loss".into()))
}

fn thread_cap(jobs: usize) -> usize {
    let env_cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let jobs = jobs.max(1);
    env_cap.map_or(jobs, |cap| jobs.min(cap))
}

/// Runs every grid combination in `out_dir/run_NNN` and writes
/// `out_dir/summary.csv`. Child failures are recorded, not propagated.
pub fn sweep_run(
    base: &Value,
    base_dir: Option<&Path>,
    grid: &Grid,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    // the base itself must be a valid config
    RunConfig::from_json_value(base.clone())?.validate(base_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let combos = grid.combinations();
    let threads = thread_cap(jobs);
    info!("sweep: {} runs on {threads} threads", combos.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        combos
            .par_iter()
            .enumerate()
            .map(|(i, overrides)| {
                let run = format!("run_{i:03}");
                let dir: PathBuf = out_dir.join(&run);
                let result = run_child(base, base_dir, overrides, &dir);
                if let Err(e) = &result {
                    error!("{run} failed: {e}");
                    let _ = fs::create_dir_all(&dir);
                    let _ = fs::write(dir.join("error.txt"), format!("{e}\n"));
                }
                SweepRow {
                    run,
                    overrides: overrides.clone(),
                    final_val_loss: result.as_ref().ok().copied(),
                    error: result.err().map(|e| e.to_string()),
                }
            })
            .collect()
    });
    write_summary(&out_dir.join("summary.csv"), grid, &rows)?;
    Ok(rows)
}

fn write_summary(path: &Path, grid: &Grid, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Input(e.to_string()))?;
    let mut header = vec!["run".to_string()];
    header.extend(grid.axes.iter().map(|(p, _)| p.clone()));
    header.extend(["status", "final_val_loss", "error"].map(String::from));
    let csv_err = |e: csv::Error| HarnessError::Input(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.run.clone()];
        rec.extend(row.overrides.iter().map(|(_, v)| v.to_string()));
        rec.push(if row.ok() { "ok" } else { "failed" }.to_string());
        rec.push(row.final_val_loss.map_or(String::new(), |v| v.to_string()));
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn aliases_and_product() {
        let g = Grid::from_json_str(r#"{"lr": [1, 2, 3], "mu": [0.1, 1.0, 10.0]}"#).unwrap();
        assert_eq!(g.axes[0].0, "optimizer.lr");
        assert_eq!(g.axes[1].0, "cpr.mu");
        let c = g.combinations();
        assert_eq!(c.len(), 9);
        assert_eq!(c[1], vec![("optimizer.lr".into(), json!(1)), ("cpr.mu".into(), json!(1.0))]);
    }

    #[test]
    fn unknown_field_rejected() {
        let err = Grid::from_json_str(r#"{"optimizer.weigth_decay": [0.1]}"#).unwrap_err();
        assert!(err.to_string().contains("weigth_decay"));
        assert!(Grid::from_json_str(r#"{"wd_schedule.final_factor": [0.5]}"#).is_ok());
        assert!(Grid::from_json_str(r#"{"lr": []}"#).is_err());
    }

    #[test]
    fn set_path_creates_sections() {
        let mut v = json!({"seed": 1});
        set_path(&mut v, "optimizer.lr", json!(0.5)).unwrap();
        set_path(&mut v, "seed", json!(2)).unwrap();
        assert_eq!(v, json!({"seed": 2, "optimizer": {"lr": 0.5}}));
        assert!(set_path(&mut v, "seed.x", json!(0)).is_err());
    }
}
