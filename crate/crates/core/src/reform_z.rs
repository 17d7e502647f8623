//! Loss over hidden representations.
//!
//! Every weight matrix splits as `Wℓ = Zℓ(Zσℓ₋₁)⁺ + W̃ℓ` with `W̃ℓZσℓ₋₁ = 0`.
//! Dropping the residual never increases the loss, so the regularized loss
//! can be written over the pre-activations alone:
//!
//! `Lʳ(Z) = C(Z_L) + λ Σℓ ‖Zℓ(Zσℓ₋₁)⁺‖²_F`
//!
//! subject to the image constraints `Im Zᵀℓ₊₁ ⊆ Im (Zσℓ)ᵀ`. [`phi`] maps
//! weights to representations and [`psi`] maps back.
//!
//! Gradients are taken through the Tikhonov-regularized inverse
//! `(Kσ + εI)⁻¹` instead of the exact pseudo-inverse.

use crate::linalg::{
    ensure_finite, frobenius_sq, pinv, regularized_inverse, row_space_projector, Matrix,
    DEFAULT_TOL,
};
use crate::network::{augment, Activation, Cost, NetworkParams};
use crate::{Error, Result};

/// Relative residual accepted for membership in the constraint set.
pub const CONSTRAINT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenReps {
    /// `Z₁..Z_L`, each `nℓ × N`.
    pub reps: Vec<Matrix>,
    pub beta: f64,
    pub activation: Activation,
    /// Network inputs `X` (`n₀ × N`).
    pub input: Matrix,
}

impl HiddenReps {
    pub fn new(
        reps: Vec<Matrix>,
        beta: f64,
        activation: Activation,
        input: Matrix,
    ) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::InvalidInput("need at least one layer".into()));
        }
        ensure_finite(&input, "inputs")?;
        let n = input.ncols();
        for (l, z) in reps.iter().enumerate() {
            ensure_finite(z, "hidden representation")?;
            if z.ncols() != n {
                return Err(Error::Shape(format!(
                    "Z{} has {} columns, expected {n}",
                    l + 1,
                    z.ncols()
                )));
            }
        }
        Ok(HiddenReps {
            reps,
            beta,
            activation: activation.validate()?,
            input,
        })
    }

    pub fn depth(&self) -> usize {
        self.reps.len()
    }

    pub fn num_points(&self) -> usize {
        self.input.ncols()
    }

    pub fn output(&self) -> &Matrix {
        self.reps.last().expect("depth >= 1")
    }

    /// `Zσℓ` for `ℓ = 0..L−1`; `Zσ₀ = (X; β1ᵀ)`.
    pub fn activated(&self, layer: usize) -> Matrix {
        if layer == 0 {
            augment(&self.input, self.beta)
        } else {
            augment(&self.activation.map(&self.reps[layer - 1]), self.beta)
        }
    }

    /// `Kσℓ = (Zσℓ)ᵀZσℓ`.
    pub fn activated_gram(&self, layer: usize) -> Matrix {
        let a = self.activated(layer);
        a.transpose() * a
    }

    /// Relative residuals `‖Zℓ(I − P)‖ / ‖Zℓ‖` for `ℓ = 1..L`, where `P`
    /// projects onto the row space of `Zσℓ₋₁`.
    pub fn constraint_residuals(&self) -> Result<Vec<f64>> {
        (1..=self.depth())
            .map(|l| {
                let z = &self.reps[l - 1];
                let p = row_space_projector(&self.activated(l - 1), DEFAULT_TOL)?;
                let norm = z.norm();
                Ok(if norm == 0.0 {
                    0.0
                } else {
                    (z - z * p).norm() / norm
                })
            })
            .collect()
    }

    pub fn check_constraints(&self, tol: f64) -> Result<()> {
        for (l, r) in self.constraint_residuals()?.into_iter().enumerate() {
            if !(r < tol) {
                return Err(Error::Constraint {
                    layer: l + 1,
                    residual: r,
                });
            }
        }
        Ok(())
    }

    /// Maps `Zℓ ↦ Zℓ P_{Im Zσℓ₋₁}` sequentially from the first layer to the
    /// last, so the result satisfies every image constraint.
    pub fn project(&self) -> Result<Self> {
        let mut out = self.clone();
        for l in 1..=out.depth() {
            let p = row_space_projector(&out.activated(l - 1), DEFAULT_TOL)?;
            out.reps[l - 1] = &out.reps[l - 1] * p;
        }
        Ok(out)
    }
}

/// `Φ`: the pre-activations of the forward pass.
pub fn phi(params: &NetworkParams, x: &Matrix) -> Result<HiddenReps> {
    let trace = params.forward(x)?;
    Ok(HiddenReps {
        reps: trace.pre_activations,
        beta: params.beta,
        activation: params.activation,
        input: x.clone(),
    })
}

/// `Ψ`: the residual-free weights `Wℓ = Zℓ(Zσℓ₋₁)⁺`.
pub fn psi(reps: &HiddenReps) -> Result<NetworkParams> {
    reps.check_constraints(CONSTRAINT_TOL)?;
    let weights = (1..=reps.depth())
        .map(|l| Ok(&reps.reps[l - 1] * pinv(&reps.activated(l - 1), DEFAULT_TOL)?))
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(weights, reps.beta, reps.activation)
}

/// Residual parts `W̃ℓ = Wℓ(I − P_{Im Zσℓ₋₁})` of every layer.
pub fn weight_residuals(params: &NetworkParams, x: &Matrix) -> Result<Vec<Matrix>> {
    let trace = params.forward(x)?;
    params
        .weights
        .iter()
        .zip(&trace.activations)
        .map(|(w, a)| {
            let p = pinv(a, DEFAULT_TOL)?;
            Ok(w - w * a * p)
        })
        .collect()
}

/// `‖Zℓ(Zσℓ₋₁)⁺‖²_F` for `ℓ = 1..L`.
pub fn regularization_terms(reps: &HiddenReps) -> Result<Vec<f64>> {
    (1..=reps.depth())
        .map(|l| {
            let w = &reps.reps[l - 1] * pinv(&reps.activated(l - 1), DEFAULT_TOL)?;
            Ok(frobenius_sq(&w))
        })
        .collect()
}

pub fn loss_r(reps: &HiddenReps, cost: Cost, targets: &Matrix, lambda: f64) -> Result<f64> {
    reps.check_constraints(CONSTRAINT_TOL)?;
    let reg: f64 = regularization_terms(reps)?.iter().sum();
    Ok(cost.value(reps.output(), targets)? + lambda * reg)
}

/// Scale-relative Tikhonov parameter `1e-6 · Tr(Kσ) / N`.
pub fn default_epsilon(k_sigma: &Matrix) -> f64 {
    let n = k_sigma.nrows().max(1) as f64;
    let eps = 1e-6 * k_sigma.trace() / n;
    if eps > 0.0 {
        eps
    } else {
        1e-12
    }
}

/// Attraction and repulsion acting on layer `layer`.
#[derive(Clone, Debug)]
pub struct ForceField {
    /// `∂_{Zℓ} Tr[Kℓ(Kσℓ₋₁ + εI)⁻¹] = 2Zℓ(Kσℓ₋₁ + εI)⁻¹`.
    pub attraction: Matrix,
    /// `∂_{Zℓ} Tr[Kℓ₊₁(Kσℓ + εI)⁻¹] = −2σ'(Zℓ) ⊙ (σ(Zℓ)Aℓ)` with
    /// `Aℓ = (Kσℓ + εI)⁻¹Kℓ₊₁(Kσℓ + εI)⁻¹`.
    pub repulsion: Matrix,
    pub layer: usize,
    pub epsilon: f64,
}

fn attraction(reps: &HiddenReps, layer: usize, eps: f64) -> Result<Matrix> {
    let r = regularized_inverse(&reps.activated_gram(layer - 1), eps)?;
    Ok(&reps.reps[layer - 1] * r * 2.0)
}

fn repulsion(reps: &HiddenReps, layer: usize, eps: f64) -> Result<Matrix> {
    let z = &reps.reps[layer - 1];
    let next = &reps.reps[layer];
    let r = regularized_inverse(&reps.activated_gram(layer), eps)?;
    let a = &r * (next.transpose() * next) * &r;
    let s = reps.activation.map(z);
    let ds = reps.activation.derivative_map(z);
    Ok((s * a).component_mul(&ds) * -2.0)
}

/// Force fields of hidden layer `layer` (1-based, `1 ≤ layer ≤ L−1`).
pub fn forces(reps: &HiddenReps, layer: usize, epsilon: f64) -> Result<ForceField> {
    let max = reps.depth().saturating_sub(1);
    if layer == 0 || layer > max {
        return Err(Error::LayerOutOfRange { layer, max });
    }
    Ok(ForceField {
        attraction: attraction(reps, layer, epsilon)?,
        repulsion: repulsion(reps, layer, epsilon)?,
        layer,
        epsilon,
    })
}

/// `C(Z_L) + λ Σℓ Tr[Kℓ(Kσℓ₋₁ + εI)⁻¹]`, the smooth surrogate of [`loss_r`].
pub fn loss_r_tikhonov(
    reps: &HiddenReps,
    cost: Cost,
    targets: &Matrix,
    lambda: f64,
    epsilon: f64,
) -> Result<f64> {
    let mut reg = 0.0;
    for l in 1..=reps.depth() {
        let r = regularized_inverse(&reps.activated_gram(l - 1), epsilon)?;
        let z = &reps.reps[l - 1];
        reg += (z * r).component_mul(z).sum();
    }
    Ok(cost.value(reps.output(), targets)? + lambda * reg)
}

/// Gradient of [`loss_r_tikhonov`] with respect to every `Zℓ`.
pub fn loss_r_tikhonov_gradient(
    reps: &HiddenReps,
    cost: Cost,
    targets: &Matrix,
    lambda: f64,
    epsilon: f64,
) -> Result<Vec<Matrix>> {
    let depth = reps.depth();
    let mut grads = Vec::with_capacity(depth);
    for l in 1..=depth {
        let mut g = attraction(reps, l, epsilon)?;
        if l < depth {
            g += repulsion(reps, l, epsilon)?;
        }
        g *= lambda;
        if l == depth {
            g += cost.gradient(reps.output(), targets)?;
        }
        grads.push(g);
    }
    Ok(grads)
}

#[derive(Clone, Debug)]
pub struct ProjectedGdConfig {
    pub steps: usize,
    pub lr: f64,
    /// Tikhonov parameter used in the gradients and the monitored objective.
    pub epsilon: f64,
    /// Learning-rate multiplier after an accepted step.
    pub growth: f64,
}

impl Default for ProjectedGdConfig {
    fn default() -> Self {
        ProjectedGdConfig {
            steps: 100,
            lr: 1e-2,
            epsilon: 1e-8,
            growth: 1.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectedGdReport {
    pub reps: HiddenReps,
    /// Tikhonov objective after every accepted step, starting with the
    /// initial value.
    pub objective: Vec<f64>,
    pub steps_taken: usize,
}

/// `Z ← P_𝒵(Z − η∇Lʳ)`, with step halving whenever the regularized
/// objective would increase.
pub fn projected_gd(
    z0: &HiddenReps,
    cost: Cost,
    targets: &Matrix,
    lambda: f64,
    cfg: &ProjectedGdConfig,
) -> Result<ProjectedGdReport> {
    z0.check_constraints(CONSTRAINT_TOL)?;
    let mut z = z0.clone();
    let mut obj = loss_r_tikhonov(&z, cost, targets, lambda, cfg.epsilon)?;
    if !obj.is_finite() || obj > 1e12 {
        return Err(Error::Divergence { step: 0, loss: obj });
    }
    let mut history = vec![obj];
    let mut lr = cfg.lr;
    let mut taken = 0;
    'outer: for _ in 0..cfg.steps {
        let grads = loss_r_tikhonov_gradient(&z, cost, targets, lambda, cfg.epsilon)?;
        loop {
            let mut cand = z.clone();
            for (c, g) in cand.reps.iter_mut().zip(&grads) {
                *c -= g * lr;
            }
            let cand = cand.project()?;
            let co = loss_r_tikhonov(&cand, cost, targets, lambda, cfg.epsilon)?;
            if co.is_finite() && co <= obj + 4.0 * f64::EPSILON * obj.abs() {
                z = cand;
                obj = co;
                history.push(obj);
                taken += 1;
                lr *= cfg.growth;
                break;
            }
            lr *= 0.5;
            if lr < 1e-300 {
                break 'outer;
            }
        }
    }
    Ok(ProjectedGdReport {
        reps: z,
        objective: history,
        steps_taken: taken,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    /// Residual-free weights: each row of `Wℓ` lies in the column space of
    /// `Zσℓ₋₁`, built by projecting random weights.
    fn residual_free(params: &NetworkParams, x: &Matrix) -> NetworkParams {
        let mut p = params.clone();
        for l in 0..p.depth() {
            let trace = p.forward(x).unwrap();
            let a = &trace.activations[l];
            let proj = a * pinv(a, DEFAULT_TOL).unwrap();
            p.weights[l] = &p.weights[l] * proj;
        }
        p
    }

    #[test]
    fn phi_satisfies_constraints_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Relu, Activation::Identity] {
            let p = NetworkParams::random(&[3, 4, 5, 2], 1.0, act, 1.0, &mut rng).unwrap();
            let x = randn(3, 8, &mut rng);
            let z = phi(&p, &x).unwrap();
            assert!(z.constraint_residuals().unwrap().iter().all(|&r| r < 1e-12));
        }
        let p = NetworkParams::zeros(&[2, 3, 1], 0.0, Activation::Relu).unwrap();
        let z = phi(&p, &randn(2, 4, &mut rng)).unwrap();
        assert!(z.reps.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn dead_neuron_gives_zero_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = NetworkParams::random(&[2, 3, 1], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let q = p.with_dead_neuron(1).unwrap();
        let z = phi(&q, &randn(2, 5, &mut rng)).unwrap();
        assert_eq!(z.reps[0].row(3).norm(), 0.0);
    }

    #[test]
    fn single_linear_layer_regularizer_is_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        let x = randn(n, n, &mut rng);
        let z = HiddenReps::new(vec![x.clone()], 0.0, Activation::Identity, x).unwrap();
        let terms = regularization_terms(&z).unwrap();
        assert!((terms[0] - n as f64).abs() < 1e-9);
    }

    #[test]
    fn psi_inverts_phi_on_residual_free_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn(3, 6, &mut rng);
        let p = NetworkParams::random(&[3, 4, 2], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let p = residual_free(&p, &x);
        let back = psi(&phi(&p, &x).unwrap()).unwrap();
        for (a, b) in back.weights.iter().zip(&p.weights) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn psi_on_linear_identity_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::identity(3, 3);
        let z1 = randn(2, 3, &mut rng);
        let z = HiddenReps::new(vec![z1.clone()], 0.0, Activation::Identity, x.clone()).unwrap();
        let w = psi(&z).unwrap();
        let want = &z1 * pinv(&augment(&x, 0.0), DEFAULT_TOL).unwrap();
        assert!((&w.weights[0] - want).norm() < 1e-14);
    }

    #[test]
    fn psi_recovers_counterexample_weights() {
        let (a1, a2) = (0.7, 0.4);
        let p = NetworkParams::new(
            vec![
                Matrix::from_row_slice(2, 2, &[a1, 0.0, a2, 0.0]),
                Matrix::from_row_slice(1, 3, &[a1, a2, 0.0]),
            ],
            0.0,
            Activation::Relu,
        )
        .unwrap();
        let x = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let back = psi(&phi(&p, &x).unwrap()).unwrap();
        for (a, b) in back.weights.iter().zip(&p.weights) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn loss_r_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = randn(2, 3, &mut rng);
        let y = randn(1, 3, &mut rng);
        let p = NetworkParams::random(&[2, 4, 3, 1], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let lr = loss_r(&phi(&p, &x).unwrap(), Cost::Mse, &y, 0.1).unwrap();
        let lw = p.loss(&x, &y, Cost::Mse, 0.1).unwrap();
        // Zσ₁ is 5×3, so W₂ has a nonzero residual almost surely.
        assert!(weight_residuals(&p, &x).unwrap()[1].norm() > 1e-3);
        assert!(lr < lw);

        let q = residual_free(&p, &x);
        let lr = loss_r(&phi(&q, &x).unwrap(), Cost::Mse, &y, 0.1).unwrap();
        let lw = q.loss(&x, &y, Cost::Mse, 0.1).unwrap();
        assert!((lr - lw).abs() < 1e-10 * (1.0 + lw));
    }

    #[test]
    fn loss_r_rejects_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn(1, 4, &mut rng);
        let z = HiddenReps::new(vec![randn(2, 4, &mut rng)], 1.0, Activation::Relu, x).unwrap();
        match loss_r(&z, Cost::Mse, &Matrix::zeros(2, 4), 0.1) {
            Err(Error::Constraint { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected constraint error, got {other:?}"),
        }
    }

    fn fd_check(reps: &HiddenReps, layer: usize, eps: f64, rng: &mut ChaCha8Rng) {
        let f = forces(reps, layer, eps).unwrap();
        let attr_obj = |z: &HiddenReps| {
            let r = regularized_inverse(&z.activated_gram(layer - 1), eps).unwrap();
            let zl = &z.reps[layer - 1];
            (zl * r).component_mul(zl).sum()
        };
        let rep_obj = |z: &HiddenReps| {
            let r = regularized_inverse(&z.activated_gram(layer), eps).unwrap();
            let zn = &z.reps[layer];
            (zn * r).component_mul(zn).sum()
        };
        let (rows, cols) = reps.reps[layer - 1].shape();
        for _ in 0..10 {
            let i = rand::Rng::random_range(rng, 0..rows);
            let j = rand::Rng::random_range(rng, 0..cols);
            let h = 1e-5 * (1.0 + reps.reps[layer - 1][(i, j)].abs());
            let mut plus = reps.clone();
            plus.reps[layer - 1][(i, j)] += h;
            let mut minus = reps.clone();
            minus.reps[layer - 1][(i, j)] -= h;
            for (obj, got) in [
                (
                    &attr_obj as &dyn Fn(&HiddenReps) -> f64,
                    f.attraction[(i, j)],
                ),
                (&rep_obj, f.repulsion[(i, j)]),
            ] {
                let fd = (obj(&plus) - obj(&minus)) / (2.0 * h);
                let scale = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (fd - got).abs() / scale < 1e-4,
                    "layer {layer} ({i},{j}): fd {fd} vs {got}"
                );
            }
        }
    }

    #[test]
    fn forces_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for act in [
            Activation::Relu,
            Activation::Identity,
            Activation::LeakyRelu(0.2),
        ] {
            let p = NetworkParams::random(&[3, 4, 5, 2], 1.0, act, 1.0, &mut rng).unwrap();
            let x = randn(3, 5, &mut rng);
            let z = phi(&p, &x).unwrap();
            for eps in [1e-2, 1e-1] {
                fd_check(&z, 1, eps, &mut rng);
                fd_check(&z, 2, eps, &mut rng);
            }
        }
    }

    #[test]
    fn attraction_vanishes_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = randn(2, 4, &mut rng);
        let z = HiddenReps::new(
            vec![Matrix::zeros(3, 4), Matrix::zeros(1, 4)],
            1.0,
            Activation::Relu,
            x,
        )
        .unwrap();
        let f = forces(&z, 1, 1e-3).unwrap();
        assert_eq!(f.attraction.norm(), 0.0);
        assert!(matches!(
            forces(&z, 2, 1e-3),
            Err(Error::LayerOutOfRange { .. })
        ));
        assert!(matches!(
            forces(&z, 0, 1e-3),
            Err(Error::LayerOutOfRange { .. })
        ));
    }

    #[test]
    fn proportional_neurons_have_proportional_forces() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = randn(3, 6, &mut rng);
        let mut p =
            NetworkParams::random(&[3, 4, 2], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let alpha = 2.5;
        let row0 = p.weights[0].row(0).into_owned();
        p.weights[0].set_row(1, &(row0 * alpha));
        let z = phi(&p, &x).unwrap();
        let f = forces(&z, 1, 1e-3).unwrap();
        for m in [&f.attraction, &f.repulsion] {
            let diff = m.row(1) - m.row(0) * alpha;
            assert!(diff.norm() < 1e-9 * (1.0 + m.row(1).norm()));
        }
    }

    #[test]
    fn loss_blows_up_near_violations() {
        // Zσ₁ = ((1, 1); (0, 0); 0) has kernel v = (1, -1)/√2 while Z₂v = δ.
        let x = Matrix::identity(2, 2);
        let z1 = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let z2 = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let delta_sq = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for eps in [1e-2, 1e-3] {
            for _ in 0..50 {
                // Perturbation of norm eps that keeps the second hidden row
                // positive, so the perturbed point satisfies the constraints.
                let mut e1 = randn(2, 2, &mut rng);
                e1.row_mut(1).iter_mut().for_each(|v| *v = v.abs());
                let e2 = randn(1, 2, &mut rng);
                let scale = eps / (e1.norm_squared() + e2.norm_squared()).sqrt();
                let z = HiddenReps::new(
                    vec![&z1 + e1 * scale, &z2 + e2 * scale],
                    0.0,
                    Activation::Relu,
                    x.clone(),
                )
                .unwrap();
                z.check_constraints(CONSTRAINT_TOL).unwrap();
                let reg = regularization_terms(&z).unwrap()[1];
                assert!(reg >= (delta_sq - eps) / eps, "eps {eps}: {reg}");
            }
        }
    }

    #[test]
    fn projected_gd_zero_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = randn(2, 4, &mut rng);
        let y = randn(1, 4, &mut rng);
        let p = NetworkParams::random(&[2, 3, 1], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let z = phi(&p, &x).unwrap();
        let cfg = ProjectedGdConfig {
            steps: 0,
            ..Default::default()
        };
        let r = projected_gd(&z, Cost::Mse, &y, 0.1, &cfg).unwrap();
        assert_eq!(r.reps, z);
    }

    #[test]
    fn projected_gd_keeps_constraints_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = randn(2, 6, &mut rng);
        let y = randn(1, 6, &mut rng);
        let p = NetworkParams::random(&[2, 4, 3, 1], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let z = phi(&p, &x).unwrap();
        let cfg = ProjectedGdConfig {
            steps: 200,
            lr: 1e-2,
            epsilon: 1e-6,
            growth: 1.05,
        };
        let r = projected_gd(&z, Cost::Mse, &y, 0.05, &cfg).unwrap();
        r.reps.check_constraints(CONSTRAINT_TOL).unwrap();
        assert!(r.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-15)));
        assert!(r.objective.last().unwrap() < &r.objective[0]);
    }
}
