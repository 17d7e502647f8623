//! Fully-connected networks with a scalar bias amount `β`.
//!
//! Layer `ℓ` has weights `Wℓ` of shape `nℓ × (nℓ₋₁ + 1)`; the last column
//! multiplies the constant row `β·1ᵀ` appended to every activation. With
//! `β = 0` there is no bias, with `β = 1` it is the usual affine layer.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{ensure_finite, frobenius_sq, Matrix};
use crate::{Error, Result};

/// Positively homogeneous activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative with the convention `σ'(0) = 0` for the ReLU.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn map(self, m: &Matrix) -> Matrix {
        m.map(|x| self.apply(x))
    }

    pub fn derivative_map(self, m: &Matrix) -> Matrix {
        m.map(|x| self.derivative(x))
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(Error::InvalidInput(format!(
                "leaky_relu slope must lie in (0, 1), got {s}"
            ))),
            a => Ok(a),
        }
    }

    /// Parses `relu`, `identity` or `leaky_relu:<slope>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => {
                if let Some(rest) = s.strip_prefix("leaky_relu:") {
                    let slope: f64 = rest
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad leaky_relu slope {rest:?}")))?;
                    Activation::LeakyRelu(slope).validate()
                } else {
                    Err(Error::Parse(format!("unknown activation {s:?}")))
                }
            }
        }
    }
}

/// Output cost `C(Z_L)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cost {
    /// `(1/N)·‖Z_L − Y‖²_F`.
    Mse,
    /// `‖Z_L − Y‖²_F`, the unnormalized squared error.
    SumSquares,
    /// Mean multiclass cross-entropy of the column-wise softmax; targets
    /// must be one-hot columns.
    CrossEntropy,
}

impl Cost {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mse" => Ok(Cost::Mse),
            "sse" | "sum_squares" => Ok(Cost::SumSquares),
            "cross_entropy" | "ce" => Ok(Cost::CrossEntropy),
            other => Err(Error::Parse(format!("unknown cost {other:?}"))),
        }
    }

    fn check(self, out: &Matrix, targets: &Matrix) -> Result<()> {
        if out.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "output is {}x{} but targets are {}x{}",
                out.nrows(),
                out.ncols(),
                targets.nrows(),
                targets.ncols()
            )));
        }
        if self == Cost::CrossEntropy {
            for col in targets.column_iter() {
                let one_hot = col.iter().all(|&v| v == 0.0 || v == 1.0)
                    && col.iter().filter(|&&v| v == 1.0).count() == 1;
                if !one_hot {
                    return Err(Error::InvalidInput(
                        "cross_entropy needs one-hot target columns".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn value(self, out: &Matrix, targets: &Matrix) -> Result<f64> {
        self.check(out, targets)?;
        let n = out.ncols().max(1) as f64;
        Ok(match self {
            Cost::Mse => frobenius_sq(&(out - targets)) / n,
            Cost::SumSquares => frobenius_sq(&(out - targets)),
            Cost::CrossEntropy => {
                let mut total = 0.0;
                for (z, y) in out.column_iter().zip(targets.column_iter()) {
                    let m = z.max();
                    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += lse - z.dot(&y);
                }
                total / n
            }
        })
    }

    /// Gradient of [`Cost::value`] with respect to the output.
    pub fn gradient(self, out: &Matrix, targets: &Matrix) -> Result<Matrix> {
        self.check(out, targets)?;
        let n = out.ncols().max(1) as f64;
        Ok(match self {
            Cost::Mse => (out - targets) * (2.0 / n),
            Cost::SumSquares => (out - targets) * 2.0,
            Cost::CrossEntropy => {
                let mut g = Matrix::zeros(out.nrows(), out.ncols());
                for j in 0..out.ncols() {
                    let z = out.column(j);
                    let m = z.max();
                    let e: DVector<f64> = z.map(|v| (v - m).exp());
                    let s = e.sum();
                    for i in 0..out.nrows() {
                        g[(i, j)] = (e[i] / s - targets[(i, j)]) / n;
                    }
                }
                g
            }
        })
    }
}

/// Appends the constant row `β·1ᵀ` below `m`.
pub fn augment(m: &Matrix, beta: f64) -> Matrix {
    let (r, c) = m.shape();
    let mut out = m.clone().resize_vertically(r + 1, beta);
    for j in 0..c {
        out[(r, j)] = beta;
    }
    out
}

/// Pre-activations `Z₁..Z_L` and augmented activations `Zσ₀..Zσ_{L−1}`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Matrix>,
    /// `activations[ℓ] = (σ(Zℓ); β1ᵀ)`, with `activations[0] = (X; β1ᵀ)`.
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.pre_activations.last().expect("depth >= 1")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    #[serde(with = "crate::linalg::row_major::vec")]
    pub weights: Vec<Matrix>,
    pub beta: f64,
    pub activation: Activation,
}

impl NetworkParams {
    pub fn new(weights: Vec<Matrix>, beta: f64, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput(
                "a network needs at least one layer".into(),
            ));
        }
        if !beta.is_finite() {
            return Err(Error::NonFinite("beta"));
        }
        for w in &weights {
            ensure_finite(w, "weights")?;
        }
        for l in 1..weights.len() {
            if weights[l].ncols() != weights[l - 1].nrows() + 1 {
                return Err(Error::Shape(format!(
                    "layer {} has {} columns, expected {}",
                    l + 1,
                    weights[l].ncols(),
                    weights[l - 1].nrows() + 1
                )));
            }
        }
        Ok(NetworkParams {
            weights,
            beta,
            activation: activation.validate()?,
        })
    }

    /// All-zero network with layer widths `[n₀, n₁, …, n_L]`.
    pub fn zeros(widths: &[usize], beta: f64, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput("widths need at least n0 and n1".into()));
        }
        let weights = widths
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0] + 1))
            .collect();
        Self::new(weights, beta, activation)
    }

    /// I.i.d. Gaussian weights with standard deviation `gain / √(nℓ₋₁ + 1)`.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        beta: f64,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(widths, beta, activation)?;
        for w in &mut p.weights {
            let std = gain / (w.ncols() as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
            w.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `[n₀, n₁, …, n_L]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].ncols() - 1];
        w.extend(self.weights.iter().map(|m| m.nrows()));
        w
    }

    /// `‖W‖² = Σℓ ‖Wℓ‖²_F`.
    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(frobenius_sq).sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        ensure_finite(x, "inputs")?;
        let n0 = self.weights[0].ncols() - 1;
        if x.nrows() != n0 {
            return Err(Error::Shape(format!(
                "inputs have {} rows, network expects {n0}",
                x.nrows()
            )));
        }
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut act = Vec::with_capacity(depth);
        act.push(augment(x, self.beta));
        for (l, w) in self.weights.iter().enumerate() {
            let z = w * &act[l];
            if l + 1 < depth {
                act.push(augment(&self.activation.map(&z), self.beta));
            }
            pre.push(z);
        }
        Ok(ForwardTrace {
            pre_activations: pre,
            activations: act,
        })
    }

    pub fn loss(&self, x: &Matrix, targets: &Matrix, cost: Cost, lambda: f64) -> Result<f64> {
        let trace = self.forward(x)?;
        Ok(cost.value(trace.output(), targets)? + lambda * self.norm_sq())
    }

    /// Loss and its exact gradient with respect to every `Wℓ`.
    pub fn loss_and_gradient(
        &self,
        x: &Matrix,
        targets: &Matrix,
        cost: Cost,
        lambda: f64,
    ) -> Result<(f64, Vec<Matrix>)> {
        let trace = self.forward(x)?;
        let value = cost.value(trace.output(), targets)? + lambda * self.norm_sq();
        let depth = self.depth();
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        let mut delta = cost.gradient(trace.output(), targets)?;
        for l in (0..depth).rev() {
            let w = &self.weights[l];
            grads[l] = &delta * trace.activations[l].transpose() + w * (2.0 * lambda);
            if l > 0 {
                let back = w.transpose() * &delta;
                let n_prev = w.ncols() - 1;
                let dsig = self
                    .activation
                    .derivative_map(&trace.pre_activations[l - 1]);
                delta = back.rows(0, n_prev).component_mul(&dsig);
            }
        }
        Ok((value, grads))
    }

    pub fn gradient(
        &self,
        x: &Matrix,
        targets: &Matrix,
        cost: Cost,
        lambda: f64,
    ) -> Result<Vec<Matrix>> {
        Ok(self.loss_and_gradient(x, targets, cost, lambda)?.1)
    }

    /// Appends a neuron with zero incoming and outgoing weights to hidden
    /// layer `layer` (1-based). Network function and norm are unchanged.
    pub fn with_dead_neuron(&self, layer: usize) -> Result<Self> {
        if layer == 0 || layer >= self.depth() {
            return Err(Error::LayerOutOfRange {
                layer,
                max: self.depth() - 1,
            });
        }
        let mut weights = self.weights.clone();
        let n = weights[layer - 1].nrows();
        weights[layer - 1] = weights[layer - 1].clone().insert_row(n, 0.0);
        weights[layer] = weights[layer].clone().insert_column(n, 0.0);
        Self::new(weights, self.beta, self.activation)
    }

    fn step(&mut self, dir: &[Matrix], scale: f64) {
        for (w, d) in self.weights.iter_mut().zip(dir) {
            *w -= d * scale;
        }
    }
}

pub fn gradient_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(frobenius_sq).sum::<f64>().sqrt()
}

/// Two-phase full-batch optimizer: adaptive-moment steps, then plain
/// gradient descent with step halving on loss increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gd_steps: usize,
    pub gd_lr: f64,
    /// Multiplier applied to the GD learning rate after an accepted step.
    pub gd_growth: f64,
    /// Stop GD once the gradient norm falls below this value (0 disables).
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            adam_steps: 2000,
            adam_lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gd_steps: 2000,
            gd_lr: 1e-2,
            gd_growth: 1.05,
            grad_tol: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: NetworkParams,
    /// Loss after every accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
    /// Index into `losses` where the GD phase starts.
    pub gd_start: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
}

const DIVERGENCE_LOSS: f64 = 1e12;

fn diverged(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LOSS
}

pub fn train(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Matrix,
    cost: Cost,
    lambda: f64,
    opt: &OptimizerConfig,
) -> Result<TrainReport> {
    let mut p = params.clone();
    let (mut loss, mut grads) = p.loss_and_gradient(x, targets, cost, lambda)?;
    let mut losses = vec![loss];

    let mut m: Vec<Matrix> = grads.iter().map(|g| g * 0.0).collect();
    let mut v = m.clone();
    for t in 1..=opt.adam_steps {
        let (b1, b2) = (opt.adam_beta1, opt.adam_beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for l in 0..p.depth() {
            m[l] = &m[l] * b1 + &grads[l] * (1.0 - b1);
            v[l] = &v[l] * b2 + grads[l].map(|g| g * g) * (1.0 - b2);
            let upd = m[l].zip_map(&v[l], |mi, vi| {
                (mi / c1) / ((vi / c2).sqrt() + opt.adam_eps)
            });
            p.weights[l] -= upd * opt.adam_lr;
        }
        (loss, grads) = p.loss_and_gradient(x, targets, cost, lambda)?;
        if diverged(loss) {
            return Err(Error::Divergence { step: t, loss });
        }
        losses.push(loss);
    }

    let gd_start = losses.len() - 1;
    let mut lr = opt.gd_lr;
    let mut gnorm = gradient_norm(&grads);
    'outer: for _ in 0..opt.gd_steps {
        if gnorm < opt.grad_tol {
            break;
        }
        loop {
            let mut cand = p.clone();
            cand.step(&grads, lr);
            let (cl, cg) = cand.loss_and_gradient(x, targets, cost, lambda)?;
            // Accept when the loss does not increase beyond roundoff.
            if cl.is_finite() && cl <= loss + 4.0 * f64::EPSILON * loss.abs() {
                p = cand;
                loss = cl;
                grads = cg;
                gnorm = gradient_norm(&grads);
                losses.push(loss);
                lr *= opt.gd_growth;
                break;
            }
            lr *= 0.5;
            if lr < 1e-300 {
                break 'outer;
            }
        }
    }
    Ok(TrainReport {
        params: p,
        final_loss: loss,
        grad_norm: gnorm,
        losses,
        gd_start,
    })
}
