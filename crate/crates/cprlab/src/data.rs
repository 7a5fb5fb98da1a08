//! Synthetic dataset generators and CSV loading.

use std::path::Path;

use cpr_core::{Batch, Matrix, RngState, Targets};

use crate::config::{DataConfig, DataKind};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub val: Batch,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        match &self.train.targets {
            Targets::Dense(t) => t.cols(),
            Targets::Classes(_) => 2,
        }
    }
}

/// Mixes a stream tag into a seed (splitmix64 finalizer) so that data,
/// initialization and batch order draw from unrelated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn data_generate(spec: &DataConfig, rng: &mut RngState) -> Result<Dataset> {
    match spec.kind {
        DataKind::TeacherStudent => teacher_student(spec, rng),
        DataKind::TwoGaussians => two_gaussians(spec, rng),
        DataKind::RidgeSynthetic => ridge_synthetic(spec, rng),
        DataKind::CsvFile => {
            let path = spec
                .path
                .as_deref()
                .ok_or_else(|| HarnessError::Config("data.path: required for csv_file".into()))?;
            csv_file(Path::new(path), spec, rng)
        }
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Result<Matrix> {
    Ok(Matrix::init_normal(rows, cols, std, rng)?)
}

fn add_noise(y: &mut Matrix, noise: f64, rng: &mut RngState) {
    if noise > 0.0 {
        for v in y.as_mut_slice() {
            *v += noise * rng.standard_normal();
        }
    }
}

/// Targets from a fixed random tanh network with one hidden layer, plus
/// Gaussian label noise on both splits.
fn teacher_student(spec: &DataConfig, rng: &mut RngState) -> Result<Dataset> {
    let (d, h, o) = (spec.input_dim, spec.teacher_hidden, spec.output_dim);
    let w1 = gaussian(d, h, 1.0 / (d as f64).sqrt(), rng)?;
    let w2 = gaussian(h, o, 1.0 / (h as f64).sqrt(), rng)?;
    let mut split = |n: usize| -> Result<Batch> {
        let x = gaussian(n, d, 1.0, rng)?;
        let mut y = x.matmul(&w1)?.map(f64::tanh).matmul(&w2)?;
        add_noise(&mut y, spec.noise, rng);
        Ok(Batch::new(x, Targets::Dense(y))?)
    };
    let train = split(spec.n_train)?;
    let val = split(spec.n_val)?;
    Ok(Dataset { train, val })
}

/// Two unit-variance classes with means `±separation/2` along the first
/// axis; labels alternate so the classes are balanced.
fn two_gaussians(spec: &DataConfig, rng: &mut RngState) -> Result<Dataset> {
    let d = spec.input_dim;
    let half = spec.separation / 2.0;
    let mut split = |n: usize| -> Result<Batch> {
        let mut x = gaussian(n, d, 1.0, rng)?;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &c) in labels.iter().enumerate() {
            let shift = if c == 1 { half } else { -half };
            x.set(i, 0, x.get(i, 0) + shift);
        }
        Ok(Batch::new(x, Targets::Classes(labels))?)
    };
    let train = split(spec.n_train)?;
    let val = split(spec.n_val)?;
    Ok(Dataset { train, val })
}

/// `y = X·w_true + noise` with standard normal `X` and `w_true`.
fn ridge_synthetic(spec: &DataConfig, rng: &mut RngState) -> Result<Dataset> {
    let (d, o) = (spec.input_dim, spec.output_dim);
    let w_true = gaussian(d, o, 1.0, rng)?;
    let mut split = |n: usize| -> Result<Batch> {
        let x = gaussian(n, d, 1.0, rng)?;
        let mut y = x.matmul(&w_true)?;
        add_noise(&mut y, spec.noise, rng);
        Ok(Batch::new(x, Targets::Dense(y))?)
    };
    let train = split(spec.n_train)?;
    let val = split(spec.n_val)?;
    Ok(Dataset { train, val })
}

/// Numeric CSV; the last `target_cols` columns are regression targets.
/// Rows are shuffled with the data seed before the validation split.
fn csv_file(path: &Path, spec: &DataConfig, rng: &mut RngState) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(HarnessError::Input(format!(
                "{}: line {line} has {} fields, expected {expected}",
                path.display(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    HarnessError::Input(format!(
                        "{}: line {line}: `{f}` is not a number",
                        path.display()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = width.ok_or_else(|| HarnessError::Input(format!("{} has no rows", path.display())))?;
    if width <= spec.target_cols {
        return Err(HarnessError::Input(format!(
            "{}: {width} columns leave no inputs for {} target columns",
            path.display(),
            spec.target_cols
        )));
    }
    let n = rows.len();
    let n_val = ((n as f64) * spec.val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(HarnessError::Input(format!(
            "{}: {n} rows cannot be split with val_fraction {}",
            path.display(),
            spec.val_fraction
        )));
    }
    let d = width - spec.target_cols;
    let order = rng.permutation(n);
    let build = |idx: &[usize]| -> Result<Batch> {
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len() * spec.target_cols);
        for &i in idx {
            x.extend_from_slice(&rows[i][..d]);
            y.extend_from_slice(&rows[i][d..]);
        }
        let x = Matrix::from_vec(idx.len(), d, x)?;
        let y = Matrix::from_vec(idx.len(), spec.target_cols, y)?;
        Ok(Batch::new(x, Targets::Dense(y))?)
    };
    let val = build(&order[..n_val])?;
    let train = build(&order[n_val..])?;
    Ok(Dataset { train, val })
}
