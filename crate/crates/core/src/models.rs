//! Desk-scale models with hand-written gradients: a fully connected network
//! (a single layer without bias is plain linear regression), mean-reduced
//! MSE and softmax cross-entropy losses, and the closed-form ridge solution.
//!
//! Parameters live in [`ParamGroup`]s named `layer{i}.weight` (shape
//! `fan_in × fan_out`, regularized) and `layer{i}.bias` (`1 × fan_out`,
//! never regularized), in that order per layer.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gradcheck::{central_difference, max_relative_error};
use crate::linalg::{Matrix, RngState};
use crate::optimizers::ParamGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(1/n) Σᵢ ½‖ŷᵢ − yᵢ‖²`
    Mse,
    /// `(1/n) Σᵢ −log softmax(ŷᵢ)[cᵢ]`
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    pub init_half_width: f64,
    pub loss: Loss,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(CoreError::Parameter(format!(
                "layer widths need at least two positive entries, got {:?}",
                self.layer_widths
            )));
        }
        if !(self.init_half_width >= 0.0 && self.init_half_width.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "init half width must be non-negative, got {}",
                self.init_half_width
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn groups_per_layer(&self) -> usize {
        if self.bias {
            2
        } else {
            1
        }
    }

    /// Uniform weights on `[-h, h]` (zeros when `h = 0`), zero biases.
    pub fn init_params(&self, rng: &mut RngState) -> Result<Vec<ParamGroup>> {
        self.validate()?;
        let mut groups = Vec::with_capacity(self.num_layers() * self.groups_per_layer());
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = if self.init_half_width > 0.0 {
                Matrix::init_uniform(fan_in, fan_out, self.init_half_width, rng)?
            } else {
                Matrix::zeros(fan_in, fan_out)?
            };
            groups.push(ParamGroup::new(format!("layer{i}.weight"), weight, true));
            if self.bias {
                groups.push(ParamGroup::new(
                    format!("layer{i}.bias"),
                    Matrix::zeros(1, fan_out)?,
                    false,
                ));
            }
        }
        Ok(groups)
    }

    fn check_params(&self, params: &[ParamGroup]) -> Result<()> {
        self.validate()?;
        let per = self.groups_per_layer();
        if params.len() != self.num_layers() * per {
            return Err(CoreError::Dimension(format!(
                "expected {} parameter groups, got {}",
                self.num_layers() * per,
                params.len()
            )));
        }
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            let weight = &params[i * per].theta;
            if weight.shape() != (w[0], w[1]) {
                return Err(CoreError::Dimension(format!(
                    "layer {i} weight is {:?}, expected {:?}",
                    weight.shape(),
                    (w[0], w[1])
                )));
            }
            if self.bias && params[i * per + 1].theta.shape() != (1, w[1]) {
                return Err(CoreError::Dimension(format!("layer {i} bias shape")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Dense(Matrix),
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        let n = match &targets {
            Targets::Dense(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        };
        if n != inputs.rows() {
            return Err(CoreError::Dimension(format!(
                "{} input rows but {n} targets",
                inputs.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        let inputs = self.inputs.select_rows(idx)?;
        let targets = match &self.targets {
            Targets::Dense(t) => Targets::Dense(t.select_rows(idx)?),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        };
        Ok(Batch { inputs, targets })
    }
}

/// Activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` the output of layer `l`.
    activations: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    output_grad: Matrix,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("at least one layer")
    }
}

fn fingerprint(params: &[ParamGroup]) -> u64 {
    let mut h = DefaultHasher::new();
    for g in params {
        for v in g.theta.as_slice() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn add_row(m: &mut Matrix, row: &Matrix) {
    let cols = m.cols();
    for (i, v) in m.as_mut_slice().iter_mut().enumerate() {
        *v += row.as_slice()[i % cols];
    }
}

/// Network output for the given inputs.
pub fn predict(spec: &MlpSpec, params: &[ParamGroup], inputs: &Matrix) -> Result<Matrix> {
    spec.check_params(params)?;
    let (acts, _) = forward_layers(spec, params, inputs)?;
    Ok(acts.into_iter().last().expect("at least one layer"))
}

fn forward_layers(
    spec: &MlpSpec,
    params: &[ParamGroup],
    inputs: &Matrix,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    if inputs.cols() != spec.layer_widths[0] {
        return Err(CoreError::Dimension(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            spec.layer_widths[0]
        )));
    }
    let per = spec.groups_per_layer();
    let last = spec.num_layers() - 1;
    let mut acts = vec![inputs.clone()];
    let mut pres = Vec::with_capacity(spec.num_layers());
    for l in 0..spec.num_layers() {
        let mut z = acts[l].matmul(&params[l * per].theta)?;
        if spec.bias {
            add_row(&mut z, &params[l * per + 1].theta);
        }
        let a = if l == last {
            z.clone()
        } else {
            z.map(|v| spec.activation.apply(v))
        };
        pres.push(z);
        acts.push(a);
    }
    Ok((acts, pres))
}

/// Loss value and `∂loss/∂output` for a batch.
fn loss_and_grad(loss: Loss, output: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let n = output.rows() as f64;
    match (loss, targets) {
        (Loss::Mse, Targets::Dense(y)) => {
            output.check_same_shape(y, "mse targets")?;
            let diff = output.sub(y)?;
            Ok((0.5 * diff.frobenius_sq() / n, diff.scale(1.0 / n)))
        }
        (Loss::CrossEntropy, Targets::Classes(classes)) => {
            let c = output.cols();
            let mut grad = output.clone();
            let mut total = 0.0;
            for (i, &cls) in classes.iter().enumerate() {
                if cls >= c {
                    return Err(CoreError::Dimension(format!(
                        "class {cls} out of range for {c} outputs"
                    )));
                }
                let row = output.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                total += log_z - row[cls];
                for j in 0..c {
                    let p = (output.get(i, j) - log_z).exp();
                    let onehot = if j == cls { 1.0 } else { 0.0 };
                    grad.set(i, j, (p - onehot) / n);
                }
            }
            Ok((total / n, grad))
        }
        (loss, _) => Err(CoreError::Dimension(format!(
            "{loss:?} loss does not match the target kind"
        ))),
    }
}

/// Scalar loss only; no cache.
pub fn mlp_loss(spec: &MlpSpec, params: &[ParamGroup], batch: &Batch) -> Result<f64> {
    spec.check_params(params)?;
    let (acts, _) = forward_layers(spec, params, &batch.inputs)?;
    Ok(loss_and_grad(spec.loss, acts.last().expect("layer"), &batch.targets)?.0)
}

pub fn mlp_forward(
    spec: &MlpSpec,
    params: &[ParamGroup],
    batch: &Batch,
) -> Result<(f64, ForwardCache)> {
    spec.check_params(params)?;
    let (activations, pre_activations) = forward_layers(spec, params, &batch.inputs)?;
    let (loss, output_grad) =
        loss_and_grad(spec.loss, activations.last().expect("layer"), &batch.targets)?;
    Ok((
        loss,
        ForwardCache {
            activations,
            pre_activations,
            output_grad,
            fingerprint: fingerprint(params),
        },
    ))
}

/// Writes `∂loss/∂θ` into every group's gradient buffer.
pub fn mlp_backward(spec: &MlpSpec, params: &mut [ParamGroup], cache: &ForwardCache) -> Result<()> {
    spec.check_params(params)?;
    if fingerprint(params) != cache.fingerprint {
        return Err(CoreError::Contract(
            "parameters changed since the forward pass".into(),
        ));
    }
    let per = spec.groups_per_layer();
    let mut delta = cache.output_grad.clone();
    for l in (0..spec.num_layers()).rev() {
        params[l * per].grad = cache.activations[l].t_matmul(&delta)?;
        if spec.bias {
            let cols = delta.cols();
            let mut b = Matrix::zeros(1, cols)?;
            for r in 0..delta.rows() {
                for (o, v) in b.as_mut_slice().iter_mut().zip(delta.row(r)) {
                    *o += v;
                }
            }
            params[l * per + 1].grad = b;
        }
        if l > 0 {
            let back = delta.matmul_t(&params[l * per].theta)?;
            let deriv = cache.pre_activations[l - 1].map(|z| spec.activation.derivative(z));
            delta = back.hadamard(&deriv)?;
        }
    }
    Ok(())
}

/// Largest relative disagreement between backprop and central differences
/// over all groups.
pub fn gradient_check(spec: &MlpSpec, params: &[ParamGroup], batch: &Batch, h: f64) -> Result<f64> {
    let mut analytic = params.to_vec();
    let (_, cache) = mlp_forward(spec, &analytic, batch)?;
    mlp_backward(spec, &mut analytic, &cache)?;
    let mut worst: f64 = 0.0;
    for gi in 0..params.len() {
        let mut probe = params.to_vec();
        let numeric = central_difference(&params[gi].theta, h, |t| {
            probe[gi].theta = t.clone();
            mlp_loss(spec, &probe, batch).unwrap_or(f64::NAN)
        });
        worst = worst.max(max_relative_error(&analytic[gi].grad, &numeric));
    }
    Ok(worst)
}

/// `w⋆ = (XᵀX + γI)⁻¹ Xᵀy`, the minimizer of `½‖Xw − y‖² + γ·½‖w‖²`.
pub fn ridge_closed_form(x: &Matrix, y: &Matrix, gamma: f64) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(CoreError::Dimension(format!(
            "X has {} rows, y has {}",
            x.rows(),
            y.rows()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(CoreError::Parameter(format!("gamma must be non-negative, got {gamma}")));
    }
    let mut a = x.t_matmul(x)?;
    let d = a.rows();
    for i in 0..d {
        a.set(i, i, a.get(i, i) + gamma);
    }
    let b = x.t_matmul(y)?;
    cholesky_solve(&a, &b)
}

/// Solves `A·X = B` for symmetric positive definite `A`.
fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max).max(1.0);
    let mut l = Matrix::zeros(n, n)?;
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag <= 1e-12 * scale {
            return Err(CoreError::numeric("ridge", "normal equations are singular"));
        }
        let djj = diag.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    let mut out = b.clone();
    for c in 0..b.cols() {
        // forward: L z = b
        for i in 0..n {
            let mut s = out.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * out.get(k, c);
            }
            out.set(i, c, s / l.get(i, i));
        }
        // backward: Lᵀ w = z
        for i in (0..n).rev() {
            let mut s = out.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * out.get(k, c);
            }
            out.set(i, c, s / l.get(i, i));
        }
    }
    Ok(out)
}
