//! Long-format `step,series,value` CSV from run directories.

use std::fs;
use std::io::Write;
use std::path::Path;

use regex::Regex;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::train::read_metrics;

/// Metrics file of a run: as named by its echoed `config.json` if present,
/// else `metrics.jsonl`.
fn metrics_file(run_dir: &Path) -> Result<std::path::PathBuf> {
    let cfg_path = run_dir.join("config.json");
    if cfg_path.is_file() {
        let text = fs::read_to_string(&cfg_path).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let cfg = RunConfig::from_json_str(&text)?;
        return Ok(run_dir.join(cfg.logging.metrics_path));
    }
    Ok(run_dir.join("metrics.jsonl"))
}

fn run_name(run_dir: &Path) -> String {
    run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run_dir.display().to_string())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes rows for every run; groups are kept when `group_filter` matches
/// their name. `None` values (a κ that is still unset) become empty cells.
pub fn emit_plotdata(
    run_dirs: &[&Path],
    group_filter: Option<&Regex>,
    out: &mut dyn Write,
) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| HarnessError::Input(format!("plot data: {e}"));
    w.write_record(["step", "series", "value"]).map_err(csv_err)?;
    let mut rows = 0;
    for dir in run_dirs {
        let path = metrics_file(dir)?;
        if !path.is_file() {
            return Err(HarnessError::Input(format!(
                "missing metrics file {}",
                path.display()
            )));
        }
        let run = run_name(dir);
        for rec in read_metrics(&path)? {
            let step = rec.step.to_string();
            for g in &rec.groups {
                if group_filter.is_some_and(|re| !re.is_match(&g.name)) {
                    continue;
                }
                for (field, value) in [("r", Some(g.r)), ("lambda", Some(g.lambda)), ("kappa", g.kappa)] {
                    let series = format!("{run}/{}/{field}", g.name);
                    w.write_record([step.as_str(), &series, &fmt(value)]).map_err(csv_err)?;
                    rows += 1;
                }
            }
            if let Some(v) = rec.val_loss {
                let series = format!("{run}/val_loss");
                w.write_record([step.as_str(), &series, &fmt(Some(v))]).map_err(csv_err)?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::io("plot data", e))?;
    Ok(rows)
}
