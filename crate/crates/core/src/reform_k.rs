//! Loss over covariance pairs.
//!
//! With `Kℓ = ZᵀℓZℓ` and `Kσℓ = (Zσℓ)ᵀZσℓ` the regularizer of the
//! representation loss becomes `Σℓ Tr[Kℓ(Kσℓ₋₁)⁺]`, so the loss only sees
//! the Gram matrices:
//!
//! `Lᵏ = C(Z_L) + λ Σℓ Tr[Kℓ(Kσℓ₋₁)⁺]`, with `K_L = Zᵀ_L Z_L`.
//!
//! A pair `(K, Kσ)` is reachable by a layer of width `n` iff it is a sum of
//! at most `n` terms `(zzᵀ, σ(z)σ(z)ᵀ)` plus `(0, β²J)`. The minimal number
//! of terms is `Rank_σ`; it is bracketed here by rank arguments from below
//! and by an explicit witness search from above.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cprank::{
    cp_rank_lower_bound, graph_from_gram, incidence_matrix, is_triangle_free, Graph,
};
use crate::linalg::{
    ensure_finite, numerical_rank, ones, pinv, row_space_projector, sqrtm_psd, sym_eigen,
    symmetrize, Matrix, ROUNDOFF,
};
use crate::network::{augment, Activation, Cost, NetworkParams};
use crate::reform_z::{psi, HiddenReps, CONSTRAINT_TOL};
use crate::seeds::rng_for;
use crate::{Error, Result};

/// Eigenvalues down to `-PSD_TOL·λ_max` count as nonnegative.
pub const PSD_TOL: f64 = 1e-8;
/// Relative cutoff for rank decisions on Gram matrices.
pub const GRAM_TOL: f64 = 1e-12;
/// Relative residual accepted from the witness search.
pub const WITNESS_TOL: f64 = 1e-6;

fn check_psd(m: &Matrix, what: &str) -> Result<()> {
    let (vals, _) = sym_eigen(m);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    match vals.first() {
        Some(&lo) if lo < -PSD_TOL * scale => Err(Error::InvalidInput(format!(
            "{what} is not PSD (eigenvalue {lo:e})"
        ))),
        _ => Ok(()),
    }
}

fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("{what} must be square")));
    }
    if (m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariancePair {
    #[serde(with = "crate::linalg::row_major")]
    pub k: Matrix,
    #[serde(with = "crate::linalg::row_major")]
    pub k_sigma: Matrix,
    pub beta: f64,
}

impl CovariancePair {
    pub fn new(k: Matrix, k_sigma: Matrix, beta: f64) -> Result<Self> {
        let pair = CovariancePair { k, k_sigma, beta };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.k, "K")?;
        ensure_finite(&self.k_sigma, "Kσ")?;
        check_symmetric(&self.k, "K")?;
        check_symmetric(&self.k_sigma, "Kσ")?;
        if self.k.shape() != self.k_sigma.shape() {
            return Err(Error::Shape("K and Kσ differ in size".into()));
        }
        check_psd(&self.k, "K")?;
        check_psd(&self.k_sigma, "Kσ")?;
        check_psd(&self.translated_sigma(), "Kσ − β²J")
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// `Kσ − β²J`, the part generated by the activations themselves.
    pub fn translated_sigma(&self) -> Matrix {
        let n = self.n();
        &self.k_sigma - ones(n, n) * (self.beta * self.beta)
    }

    /// `√(‖K‖² + ‖Kσ‖²)`.
    pub fn norm(&self) -> f64 {
        (self.k.norm_squared() + self.k_sigma.norm_squared()).sqrt()
    }

    /// `α·self + γ·other` taken on the untranslated parts, then translated
    /// back by `β²J`.
    pub fn conic_combination(&self, alpha: f64, other: &Self, gamma: f64) -> Result<Self> {
        if alpha < 0.0 || gamma < 0.0 {
            return Err(Error::InvalidInput(
                "conic weights must be nonnegative".into(),
            ));
        }
        if self.beta != other.beta || self.n() != other.n() {
            return Err(Error::InvalidInput("pairs live in different cones".into()));
        }
        let n = self.n();
        let t = self.translated_sigma() * alpha + other.translated_sigma() * gamma;
        Ok(CovariancePair {
            k: &self.k * alpha + &other.k * gamma,
            k_sigma: t + ones(n, n) * (self.beta * self.beta),
            beta: self.beta,
        })
    }
}

/// Vectors `z_i` with `K = Σ z_i z_iᵀ` and `Kσ = Σ σ(z_i)σ(z_i)ᵀ + β²J`.
/// Nonnegative coefficients are absorbed into the vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeWitness {
    pub vectors: Vec<DVector<f64>>,
}

impl ConeWitness {
    /// Witness whose vectors are the rows of `z`.
    pub fn from_rows(z: &Matrix) -> Self {
        ConeWitness {
            vectors: z.row_iter().map(|r| r.transpose()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `k × N` matrix with the vectors as rows.
    pub fn as_rows(&self, n: usize) -> Matrix {
        let mut z = Matrix::zeros(self.len(), n);
        for (i, v) in self.vectors.iter().enumerate() {
            z.row_mut(i).copy_from(&v.transpose());
        }
        z
    }

    pub fn pair(&self, n: usize, beta: f64, activation: Activation) -> CovariancePair {
        let z = self.as_rows(n);
        let s = activation.map(&z);
        CovariancePair {
            k: z.transpose() * &z,
            k_sigma: s.transpose() * s + ones(n, n) * (beta * beta),
            beta,
        }
    }

    /// `√(‖K − ZᵀZ‖² + ‖Kσ − σ(Z)ᵀσ(Z) − β²J‖²)`.
    pub fn residual(&self, pair: &CovariancePair, activation: Activation) -> f64 {
        let rebuilt = self.pair(pair.n(), pair.beta, activation);
        ((&rebuilt.k - &pair.k).norm_squared() + (&rebuilt.k_sigma - &pair.k_sigma).norm_squared())
            .sqrt()
    }

    /// Witness of `α·p + γ·q` built from witnesses of `p` and `q`, using
    /// positive homogeneity of `σ`.
    pub fn conic_combination(&self, alpha: f64, other: &Self, gamma: f64) -> Self {
        let (sa, sg) = (alpha.sqrt(), gamma.sqrt());
        ConeWitness {
            vectors: self
                .vectors
                .iter()
                .map(|v| v * sa)
                .chain(other.vectors.iter().map(|v| v * sg))
                .collect(),
        }
    }
}

/// Builds the pair generated by `vectors`.
pub fn cone_construct(
    vectors: Vec<DVector<f64>>,
    n: usize,
    beta: f64,
    activation: Activation,
) -> Result<(CovariancePair, ConeWitness)> {
    for v in &vectors {
        if v.len() != n {
            return Err(Error::Shape(format!(
                "vector of length {} in R^{n}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cone vector"));
        }
    }
    let w = ConeWitness { vectors };
    Ok((w.pair(n, beta, activation.validate()?), w))
}

/// Pairs for the hidden layers `ℓ = 1..L−1`, the output `Z_L` and
/// `Kσ₀ = XᵀX + β²J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceChain {
    pub pairs: Vec<CovariancePair>,
    #[serde(with = "crate::linalg::row_major")]
    pub output: Matrix,
    #[serde(with = "crate::linalg::row_major")]
    pub k0_sigma: Matrix,
}

impl CovarianceChain {
    pub fn depth(&self) -> usize {
        self.pairs.len() + 1
    }

    /// `Kℓ` for `ℓ = 1..L`.
    pub fn k(&self, layer: usize) -> Matrix {
        if layer == self.depth() {
            self.output.transpose() * &self.output
        } else {
            self.pairs[layer - 1].k.clone()
        }
    }

    /// `Kσℓ` for `ℓ = 0..L−1`.
    pub fn k_sigma(&self, layer: usize) -> &Matrix {
        if layer == 0 {
            &self.k0_sigma
        } else {
            &self.pairs[layer - 1].k_sigma
        }
    }

    /// Relative residuals `‖(I − P)Kℓ‖/‖Kℓ‖` with `P` the projector onto
    /// `Im Kσℓ₋₁`; the last entry measures `Zᵀ_L` instead of `K_L`.
    pub fn image_residuals(&self) -> Result<Vec<f64>> {
        (1..=self.depth())
            .map(|l| {
                let p = row_space_projector(self.k_sigma(l - 1), GRAM_TOL)?;
                let m = if l == self.depth() {
                    self.output.transpose()
                } else {
                    self.k(l)
                };
                let norm = m.norm();
                Ok(if norm == 0.0 {
                    0.0
                } else {
                    (&m - &p * &m).norm() / norm
                })
            })
            .collect()
    }

    pub fn check_images(&self, tol: f64) -> Result<()> {
        for (l, r) in self.image_residuals()?.into_iter().enumerate() {
            if !(r < tol) {
                return Err(Error::Constraint {
                    layer: l + 1,
                    residual: r,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Gram matrices of the forward pass.
pub fn chain_from_weights(params: &NetworkParams, x: &Matrix) -> Result<CovarianceChain> {
    let trace = params.forward(x)?;
    let depth = params.depth();
    let pairs = (1..depth)
        .map(|l| {
            let z = &trace.pre_activations[l - 1];
            let a = &trace.activations[l];
            CovariancePair {
                k: z.transpose() * z,
                k_sigma: a.transpose() * a,
                beta: params.beta,
            }
        })
        .collect();
    let a0 = augment(x, params.beta);
    Ok(CovarianceChain {
        pairs,
        output: trace.output().clone(),
        k0_sigma: a0.transpose() * a0,
    })
}

/// `Tr[Kℓ(Kσℓ₋₁)⁺]` for `ℓ = 1..L`.
pub fn regularization_terms_k(chain: &CovarianceChain) -> Result<Vec<f64>> {
    chain.check_images(CONSTRAINT_TOL)?;
    (1..=chain.depth())
        .map(|l| {
            let inv = pinv(&symmetrize(chain.k_sigma(l - 1)), GRAM_TOL)?;
            Ok((chain.k(l) * inv).trace())
        })
        .collect()
}

pub fn loss_k(chain: &CovarianceChain, cost: Cost, targets: &Matrix, lambda: f64) -> Result<f64> {
    let reg: f64 = regularization_terms_k(chain)?.iter().sum();
    Ok(cost.value(&chain.output, targets)? + lambda * reg)
}

/// Search effort for [`rank_sigma_bounds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    /// Random restarts per candidate size `k`.
    pub restarts: usize,
    /// Damped Gauss-Newton iterations per restart.
    pub max_iters: usize,
    pub seed: u64,
    /// Largest `k` tried; `None` means `N(N+1)`.
    pub max_k: Option<usize>,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            restarts: 50,
            max_iters: 300,
            seed: 0,
            max_k: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankBounds {
    pub lower: usize,
    pub upper: usize,
    /// Witness of size `upper` when the search certified it.
    pub witness: Option<ConeWitness>,
}

/// Graph certificate: when `Kσ − β²J = EᵀE` for a triangle-free graph, the
/// rows of `E` are nonnegative, so they witness the pair as soon as
/// `K = EᵀE` as well.
fn graph_witness(pair: &CovariancePair) -> Option<(Graph, Option<ConeWitness>)> {
    let t = pair.translated_sigma();
    let g = graph_from_gram(&t, 1e-9)?;
    if !is_triangle_free(&g) {
        return None;
    }
    let witness = ((&pair.k - &t).amax() <= 1e-9 * (1.0 + t.amax()))
        .then(|| ConeWitness::from_rows(&incidence_matrix(&g)));
    Some((g, witness))
}

/// `Rank(K) ≤ Rank_σ ≤ N(N+1)`, tightened from below by the rank of
/// `Kσ − β²J` and, for ReLU, the CP-rank bound of a graph Gram matrix; and
/// from above by the smallest `k` at which a witness is found.
pub fn rank_sigma_bounds(
    pair: &CovariancePair,
    activation: Activation,
    budget: &SearchBudget,
) -> Result<RankBounds> {
    pair.validate()?;
    let activation = activation.validate()?;
    let n = pair.n();
    let t = pair.translated_sigma();
    let mut lower = numerical_rank(&pair.k, GRAM_TOL).max(numerical_rank(&t, GRAM_TOL));
    let mut certified = None;
    if let Some((g, w)) = graph_witness(pair) {
        if matches!(activation, Activation::Relu) {
            lower = lower.max(cp_rank_lower_bound(&t, Some(&g))?);
        }
        certified = w.filter(|w| w.residual(pair, activation) <= WITNESS_TOL * pair.norm());
    }
    let cap = n * (n + 1);
    if lower == 0 {
        let w = ConeWitness { vectors: vec![] };
        if w.residual(pair, activation) == 0.0 {
            return Ok(RankBounds {
                lower: 0,
                upper: 0,
                witness: Some(w),
            });
        }
        lower = 1;
    }
    let mut max_k = budget.max_k.unwrap_or(cap).min(cap);
    if let Some(w) = &certified {
        max_k = max_k.min(w.len().saturating_sub(1));
    }
    for k in lower..=max_k {
        if let Some(w) = find_witness(pair, activation, k, budget) {
            return Ok(RankBounds {
                lower,
                upper: k,
                witness: Some(w),
            });
        }
    }
    Ok(match certified {
        Some(w) => RankBounds {
            lower,
            upper: w.len(),
            witness: Some(w),
        },
        None => RankBounds {
            lower,
            upper: cap.max(lower),
            witness: None,
        },
    })
}

/// Looks for `k` vectors reproducing `pair`. Restarts run in parallel
/// batches; the lowest successful restart index wins, so the result does
/// not depend on the thread count.
pub fn find_witness(
    pair: &CovariancePair,
    activation: Activation,
    k: usize,
    budget: &SearchBudget,
) -> Option<ConeWitness> {
    let target = WITNESS_TOL * pair.norm();
    let batch = rayon::current_num_threads().max(1);
    let mut start = 0;
    while start < budget.restarts {
        let end = (start + batch).min(budget.restarts);
        let found = (start..end)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_for(budget.seed, &[k as u64, r as u64]);
                let z0 = initial_guess(pair, k, r, &mut rng);
                let z = levenberg_marquardt(pair, activation, z0, budget.max_iters, target);
                let w = ConeWitness::from_rows(&z);
                (w.residual(pair, activation) < target).then_some(w)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .next();
        if found.is_some() {
            return found;
        }
        start = end;
    }
    None
}

/// Even restarts rotate an eigen-factor of `K` (so `ZᵀZ = K` holds from
/// the start); odd restarts draw a scaled Gaussian matrix.
fn initial_guess(pair: &CovariancePair, k: usize, restart: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = pair.n();
    let (vals, vecs) = sym_eigen(&pair.k);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..n).filter(|&i| vals[i] > GRAM_TOL * top).collect();
    let r = kept.len();
    if restart % 2 == 0 && r > 0 && r <= k {
        let mut f = Matrix::zeros(r, n);
        for (row, &i) in kept.iter().enumerate() {
            f.row_mut(row)
                .copy_from(&(vecs.column(i).transpose() * vals[i].sqrt()));
        }
        let g = Matrix::from_fn(k, r, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        return q * f;
    }
    let scale = (pair.k.trace().max(pair.translated_sigma().trace()) / (k * n) as f64)
        .max(0.0)
        .sqrt();
    Matrix::from_fn(k, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `σ` with its kink rounded off at scale `tau`: ReLU becomes
/// `(x + √(x² + τ²))/2`. Returns values and derivatives.
fn smoothed(activation: Activation, tau: f64, z: &Matrix) -> (Matrix, Matrix) {
    let soft = |x: f64| {
        let r = x.hypot(tau);
        (0.5 * (x + r), 0.5 * (1.0 + x / r))
    };
    match activation {
        _ if tau == 0.0 => (activation.map(z), activation.derivative_map(z)),
        Activation::Identity => (z.clone(), z.map(|_| 1.0)),
        Activation::Relu => (z.map(|x| soft(x).0), z.map(|x| soft(x).1)),
        Activation::LeakyRelu(a) => (
            z.map(|x| a * x + (1.0 - a) * soft(x).0),
            z.map(|x| a + (1.0 - a) * soft(x).1),
        ),
    }
}

/// Upper-triangular residuals of both Gram equations, off-diagonal entries
/// weighted by `√2` so that `‖r‖` equals the Frobenius residual.
fn residual_vector(pair: &CovariancePair, t: &Matrix, z: &Matrix, s: &Matrix) -> DVector<f64> {
    let n = pair.n();
    let g = z.transpose() * z;
    let gs = s.transpose() * s;
    let m = n * (n + 1) / 2;
    let mut r = DVector::zeros(2 * m);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            let w = if i == j {
                1.0
            } else {
                std::f64::consts::SQRT_2
            };
            r[idx] = w * (g[(i, j)] - pair.k[(i, j)]);
            r[m + idx] = w * (gs[(i, j)] - t[(i, j)]);
            idx += 1;
        }
    }
    r
}

fn jacobian(z: &Matrix, s: &Matrix, d: &Matrix) -> Matrix {
    let (k, n) = z.shape();
    let m = n * (n + 1) / 2;
    let mut jac = Matrix::zeros(2 * m, k * n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            let w = if i == j {
                1.0
            } else {
                std::f64::consts::SQRT_2
            };
            for a in 0..k {
                jac[(idx, a * n + i)] += w * z[(a, j)];
                jac[(idx, a * n + j)] += w * z[(a, i)];
                jac[(m + idx, a * n + i)] += w * d[(a, i)] * s[(a, j)];
                jac[(m + idx, a * n + j)] += w * d[(a, j)] * s[(a, i)];
            }
            idx += 1;
        }
    }
    jac
}

/// Relative smoothing levels; the last one is the exact activation.
const SMOOTHING: [f64; 6] = [0.3, 0.1, 0.03, 0.01, 0.001, 0.0];

/// Damped Gauss-Newton steps at a fixed smoothing level. Returns the final
/// point and its residual norm.
fn lm_stage(
    pair: &CovariancePair,
    t: &Matrix,
    activation: Activation,
    tau: f64,
    mut z: Matrix,
    iters: usize,
    target: f64,
) -> (Matrix, f64) {
    let (k, n) = z.shape();
    let (mut s, mut d) = smoothed(activation, tau, &z);
    let mut r = residual_vector(pair, t, &z, &s);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3 * (1.0 + pair.norm());
    let mut stall = 0;
    for _ in 0..iters {
        if cost.sqrt() < 1e-3 * target {
            break;
        }
        let jac = jacobian(&z, &s, &d);
        let (rows, cols) = jac.shape();
        let step = if cols <= rows {
            let a = jac.transpose() * &jac + Matrix::identity(cols, cols) * mu;
            let b = -(jac.transpose() * &r);
            a.cholesky().map(|c| c.solve(&b))
        } else {
            let a = &jac * jac.transpose() + Matrix::identity(rows, rows) * mu;
            a.cholesky().map(|c| -(jac.transpose() * c.solve(&r)))
        };
        let Some(step) = step else {
            mu *= 10.0;
            continue;
        };
        let cand = &z + Matrix::from_row_slice(k, n, step.as_slice());
        let (cs, cd) = smoothed(activation, tau, &cand);
        let rc = residual_vector(pair, t, &cand, &cs);
        let cc = rc.norm_squared();
        if cc < cost {
            stall = if cc > cost * (1.0 - 1e-10) {
                stall + 1
            } else {
                0
            };
            (z, s, d, r, cost) = (cand, cs, cd, rc, cc);
            mu = (mu / 3.0).max(1e-15);
        } else {
            mu *= 4.0;
            stall += 1;
        }
        if stall > 40 || mu > 1e12 * (1.0 + pair.norm()) {
            break;
        }
    }
    (z, cost.sqrt())
}

/// Entries flipped per escape round, smallest magnitudes first.
const FLIP_CANDIDATES: usize = 30;
const FLIP_ROUNDS: usize = 16;
const FLIP_ITERS: usize = 60;

/// Damped Gauss-Newton on `‖ZᵀZ − K‖² + ‖σ(Z)ᵀσ(Z) − (Kσ − β²J)‖²`,
/// continued from a smoothed activation down to the exact one. A point
/// stuck above the target is perturbed by flipping the sign of one small
/// entry at a time and re-polished.
fn levenberg_marquardt(
    pair: &CovariancePair,
    activation: Activation,
    mut z: Matrix,
    max_iters: usize,
    target: f64,
) -> Matrix {
    let n = z.ncols();
    let t = pair.translated_sigma();
    let scale = (pair.k.trace() / n.max(1) as f64).max(0.0).sqrt();
    let per_stage = (max_iters / SMOOTHING.len()).max(1);
    let mut res = f64::INFINITY;
    for (stage, &level) in SMOOTHING.iter().enumerate() {
        let iters = if stage + 1 == SMOOTHING.len() {
            max_iters
                .saturating_sub(per_stage * (SMOOTHING.len() - 1))
                .max(1)
        } else {
            per_stage
        };
        (z, res) = lm_stage(pair, &t, activation, level * scale, z, iters, target);
    }
    if matches!(activation, Activation::Identity) {
        return z;
    }
    for _ in 0..FLIP_ROUNDS {
        if res < target {
            break;
        }
        let mut order: Vec<(usize, usize)> = (0..z.nrows())
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .collect();
        order.sort_by(|&p, &q| z[p].abs().total_cmp(&z[q].abs()));
        let mut improved = false;
        for &entry in order.iter().take(FLIP_CANDIDATES) {
            let mut zc = z.clone();
            zc[entry] = -zc[entry];
            let (zc, rc) = lm_stage(pair, &t, activation, 0.0, zc, FLIP_ITERS, target);
            if rc < 0.9 * res {
                (z, res, improved) = (zc, rc, true);
                break;
            }
        }
        if !improved {
            break;
        }
    }
    z
}

/// Rebuilds weights from a chain and witnesses for its hidden pairs. Layer
/// `ℓ` gets the witness vectors as its first `kℓ` pre-activation rows and
/// zero rows up to `widths[ℓ−1]`.
pub fn weights_from_chain(
    chain: &CovarianceChain,
    witnesses: &[ConeWitness],
    x: &Matrix,
    widths: &[usize],
    activation: Activation,
) -> Result<NetworkParams> {
    let hidden = chain.pairs.len();
    if witnesses.len() != hidden || widths.len() != hidden {
        return Err(Error::Shape(format!(
            "{hidden} hidden layers, {} witnesses, {} widths",
            witnesses.len(),
            widths.len()
        )));
    }
    let n = chain.output.ncols();
    if x.ncols() != n {
        return Err(Error::Shape("inputs and chain disagree on N".into()));
    }
    let beta = chain.pairs.first().map_or(0.0, |p| p.beta);
    let a0 = augment(x, beta);
    let k0 = a0.transpose() * a0;
    let scale = 1.0 + k0.amax();
    if (&k0 - &chain.k0_sigma).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput("Kσ₀ does not match the inputs".into()));
    }
    chain.check_images(CONSTRAINT_TOL)?;
    let mut reps = Vec::with_capacity(hidden + 1);
    for (l, (w, (pair, &width))) in witnesses
        .iter()
        .zip(chain.pairs.iter().zip(widths))
        .enumerate()
    {
        if w.len() > width {
            return Err(Error::WidthExceeded {
                layer: l + 1,
                required: w.len(),
                width,
            });
        }
        let res = w.residual(pair, activation);
        if res > WITNESS_TOL * pair.norm().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "witness of layer {} misses its pair by {res:e}",
                l + 1
            )));
        }
        let mut z = Matrix::zeros(width, n);
        z.rows_mut(0, w.len()).copy_from(&w.as_rows(n));
        reps.push(z);
    }
    reps.push(chain.output.clone());
    psi(&HiddenReps::new(reps, beta, activation, x.clone())?)
}

/// `Xᵀ(X⁻ᵀ Zᵀ_L Z_L X⁻¹)^{ℓ/L} X`, the Gram matrix of layer `ℓ` at the
/// regularized optimum of a depth-`L` linear network with invertible `X`.
pub fn linear_gram_closed_form(
    x: &Matrix,
    output: &Matrix,
    layer: usize,
    depth: usize,
) -> Result<Matrix> {
    if !x.is_square() {
        return Err(Error::Shape("closed form needs square inputs".into()));
    }
    if layer == 0 || layer > depth {
        return Err(Error::LayerOutOfRange { layer, max: depth });
    }
    let xinv = x
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("inputs are not invertible".into()))?;
    let m = xinv.transpose() * output.transpose() * output * &xinv;
    let p = layer as f64 / depth as f64;
    let (vals, vecs) = sym_eigen(&m);
    let top = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut pow = Matrix::zeros(m.nrows(), m.ncols());
    for (i, &v) in vals.iter().enumerate() {
        if v > ROUNDOFF * top {
            let q = vecs.column(i);
            pow += (q * q.transpose()) * v.powf(p);
        }
    }
    Ok(x.transpose() * pow * x)
}

#[derive(Clone, Debug)]
pub struct RepresentationCost {
    /// `2·Tr[(YᵀY)^{1/2}]`.
    pub value: f64,
    /// `K₁ = Kσ₁ = (YᵀY)^{1/2}`.
    pub pair: CovariancePair,
    /// True when a nonnegative factorization of `K₁` was found, which makes
    /// the pair reachable by a ReLU layer.
    pub cp_verified: bool,
    pub witness: Option<ConeWitness>,
}

/// Representation cost of `Y` by a shallow bias-free ReLU network on
/// `X = I_N`, assuming `(YᵀY)^{1/2}` is completely positive.
pub fn representation_cost_shallow(
    x: &Matrix,
    y: &Matrix,
    budget: &SearchBudget,
) -> Result<RepresentationCost> {
    ensure_finite(x, "inputs")?;
    ensure_finite(y, "outputs")?;
    let n = x.ncols();
    if x.nrows() != n || (x - Matrix::identity(n, n)).amax() > 1e-12 {
        return Err(Error::InvalidInput(
            "inputs must be the identity matrix".into(),
        ));
    }
    if y.ncols() != n {
        return Err(Error::Shape(format!(
            "Y has {} columns, expected {n}",
            y.ncols()
        )));
    }
    let k = sqrtm_psd(&(y.transpose() * y), PSD_TOL)?;
    let pair = CovariancePair {
        k: k.clone(),
        k_sigma: k,
        beta: 0.0,
    };
    let chain = CovarianceChain {
        pairs: vec![pair.clone()],
        output: y.clone(),
        k0_sigma: Matrix::identity(n, n),
    };
    let value = regularization_terms_k(&chain)?.iter().sum();
    let bounds = rank_sigma_bounds(&pair, Activation::Relu, budget)?;
    Ok(RepresentationCost {
        value,
        pair,
        cp_verified: bounds.witness.is_some(),
        witness: bounds.witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cprank::bipartite_matrix;
    use crate::reform_z::{loss_r, phi};
    use rand::SeedableRng;

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn vecs(rows: &Matrix) -> Vec<DVector<f64>> {
        ConeWitness::from_rows(rows).vectors
    }

    fn quick() -> SearchBudget {
        SearchBudget {
            restarts: 20,
            ..SearchBudget::default()
        }
    }

    #[test]
    fn trace_identity_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let n = rng.random_range(2..=7);
            let depth = rng.random_range(1..=3);
            let mut widths = vec![rng.random_range(1..=4)];
            for _ in 0..depth {
                widths.push(rng.random_range(1..=5));
            }
            let act = if trial % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Identity
            };
            let beta = (trial % 3) as f64 * 0.5;
            let p = NetworkParams::random(&widths, beta, act, 1.0, &mut rng).unwrap();
            let x = randn(widths[0], n, &mut rng);
            let y = randn(*widths.last().unwrap(), n, &mut rng);
            let lk = loss_k(&chain_from_weights(&p, &x).unwrap(), Cost::Mse, &y, 0.3).unwrap();
            let lr = loss_r(&phi(&p, &x).unwrap(), Cost::Mse, &y, 0.3).unwrap();
            assert!((lk - lr).abs() < 1e-8 * (1.0 + lr.abs()), "{lk} vs {lr}");
        }
    }

    #[test]
    fn zero_chain_has_cost_only() {
        let chain = CovarianceChain {
            pairs: vec![CovariancePair {
                k: Matrix::zeros(3, 3),
                k_sigma: Matrix::zeros(3, 3),
                beta: 0.0,
            }],
            output: Matrix::zeros(1, 3),
            k0_sigma: Matrix::identity(3, 3),
        };
        let y = Matrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
        assert!((loss_k(&chain, Cost::SumSquares, &y, 5.0).unwrap() - 9.0).abs() < 1e-15);
    }

    #[test]
    fn image_violation_is_an_error() {
        let chain = CovarianceChain {
            pairs: vec![],
            output: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            k0_sigma: Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        };
        let y = Matrix::zeros(1, 2);
        assert!(matches!(
            loss_k(&chain, Cost::Mse, &y, 1.0),
            Err(Error::Constraint { layer: 1, .. })
        ));
    }

    #[test]
    fn chain_gram_examples() {
        let x = Matrix::identity(3, 3);
        let w1 = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0]);
        let w2 = Matrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let p = NetworkParams::new(vec![w1, w2], 0.0, Activation::Relu).unwrap();
        let c = chain_from_weights(&p, &x).unwrap();
        assert_eq!(c.pairs[0].k, c.pairs[0].k_sigma);
        assert!(numerical_rank(&c.pairs[0].k, GRAM_TOL) <= 2);
        assert_eq!(c.k0_sigma, Matrix::identity(3, 3));
    }

    #[test]
    fn chain_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetworkParams::random(&[2, 3, 1], 1.0, Activation::Relu, 1.0, &mut rng).unwrap();
        let c = chain_from_weights(&p, &randn(2, 4, &mut rng)).unwrap();
        let text = c.to_json().unwrap();
        assert!(text.contains("\"rows\""));
        assert_eq!(CovarianceChain::from_json(&text).unwrap(), c);
    }

    #[test]
    fn cone_examples() {
        let (pair, w) =
            cone_construct(vecs(&Matrix::identity(4, 4)), 4, 0.0, Activation::Relu).unwrap();
        assert_eq!(pair.k, Matrix::identity(4, 4));
        assert_eq!(pair.k_sigma, Matrix::identity(4, 4));
        assert_eq!(w.residual(&pair, Activation::Relu), 0.0);

        let e = incidence_matrix(&Graph::cycle(5).unwrap());
        let (pair, _) = cone_construct(vecs(&e), 5, 0.0, Activation::Relu).unwrap();
        let g = e.transpose() * &e;
        assert_eq!(pair.k, g);
        assert_eq!(pair.k_sigma, g);

        let z = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (pair, _) = cone_construct(vec![z], 3, 1.0, Activation::Relu).unwrap();
        assert!(pair.validate().is_ok());
        assert_eq!(pair.k_sigma[(0, 1)], 1.0);
        assert_eq!(pair.k_sigma[(0, 0)], 2.0);
    }

    #[test]
    fn pair_validation() {
        let bad = CovariancePair::new(Matrix::identity(2, 2), Matrix::identity(2, 2) * 0.1, 1.0);
        assert!(bad.is_err());
        assert!(CovariancePair::new(-Matrix::identity(2, 2), Matrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn cone_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for act in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Identity,
        ] {
            for beta in [0.0, 1.0] {
                let (p, wp) = cone_construct(vecs(&randn(3, 4, &mut rng)), 4, beta, act).unwrap();
                let (q, wq) = cone_construct(vecs(&randn(2, 4, &mut rng)), 4, beta, act).unwrap();
                for (alpha, gamma) in [(0.3, 2.0), (1.0, 0.0), (0.0, 4.5)] {
                    let mix = p.conic_combination(alpha, &q, gamma).unwrap();
                    let w = wp.conic_combination(alpha, &wq, gamma);
                    assert_eq!(w.len(), 5);
                    assert!(w.residual(&mix, act) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bounds_for_simple_pairs() {
        let (pair, _) =
            cone_construct(vecs(&Matrix::identity(4, 4)), 4, 0.0, Activation::Relu).unwrap();
        let b = rank_sigma_bounds(&pair, Activation::Relu, &quick()).unwrap();
        assert_eq!((b.lower, b.upper), (4, 4));

        let z = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let (pair, _) = cone_construct(vec![z], 3, 0.0, Activation::Relu).unwrap();
        let b = rank_sigma_bounds(&pair, Activation::Relu, &quick()).unwrap();
        assert_eq!((b.lower, b.upper), (1, 1));
    }

    #[test]
    fn bipartite_pair_lower_bound_uses_cp_rank() {
        let b4 = bipartite_matrix(4).unwrap();
        let pair = CovariancePair::new(b4.clone(), b4, 0.0).unwrap();
        assert_eq!(numerical_rank(&pair.k, GRAM_TOL), 3);
        let b = rank_sigma_bounds(&pair, Activation::Relu, &quick()).unwrap();
        assert_eq!((b.lower, b.upper), (4, 4));
        assert!(b.witness.unwrap().residual(&pair, Activation::Relu) < 1e-12);
    }

    #[test]
    fn bounds_bracket_random_constructions() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for k in 1..=4 {
            let (pair, w) =
                cone_construct(vecs(&randn(k, 4, &mut rng)), 4, 0.0, Activation::Relu).unwrap();
            let b = rank_sigma_bounds(&pair, Activation::Relu, &quick()).unwrap();
            assert!(b.lower <= w.len());
            assert!(b.upper >= b.lower);
            assert!(b.upper <= k, "k={k} upper={}", b.upper);
        }
    }

    #[test]
    fn reconstruction_reproduces_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let x = randn(n, n, &mut rng);
        for act in [Activation::Relu, Activation::Identity] {
            for beta in [0.0, 1.0] {
                // Each layer's vectors are combinations of the previous
                // activations, so the image chain holds.
                let z1 = randn(3, n, &mut rng);
                let (p1, w1) = cone_construct(vecs(&z1), n, beta, act).unwrap();
                let a1 = augment(&act.map(&z1), beta);
                let z2 = randn(2, a1.nrows(), &mut rng) * &a1;
                let (p2, w2) = cone_construct(vecs(&z2), n, beta, act).unwrap();
                let a2 = augment(&act.map(&z2), beta);
                let out = randn(2, a2.nrows(), &mut rng) * &a2;
                let a0 = augment(&x, beta);
                let chain = CovarianceChain {
                    pairs: vec![p1, p2],
                    output: out,
                    k0_sigma: a0.transpose() * a0,
                };
                chain.check_images(1e-10).unwrap();
                let params =
                    weights_from_chain(&chain, &[w1.clone(), w2.clone()], &x, &[5, 3], act)
                        .unwrap();
                assert_eq!(params.widths(), vec![n, 5, 3, 2]);
                let back = chain_from_weights(&params, &x).unwrap();
                for l in 1..=chain.depth() {
                    let d = (back.k(l) - chain.k(l)).amax();
                    assert!(d < 1e-8 * (1.0 + chain.k(l).amax()), "layer {l}: {d}");
                }
                for (a, b) in back.pairs.iter().zip(&chain.pairs) {
                    assert!((&a.k_sigma - &b.k_sigma).amax() < 1e-8 * (1.0 + b.k_sigma.amax()));
                }
                assert!(matches!(
                    weights_from_chain(&chain, &[w1, w2], &x, &[2, 3], act),
                    Err(Error::WidthExceeded {
                        layer: 1,
                        required: 3,
                        width: 2
                    })
                ));
            }
        }
    }

    #[test]
    fn linear_closed_form_at_last_layer_is_output_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(3, 3, &mut rng);
        let z = randn(2, 3, &mut rng);
        let k = linear_gram_closed_form(&x, &z, 2, 2).unwrap();
        assert!((k - z.transpose() * &z).amax() < 1e-9);
        let k0 = linear_gram_closed_form(&x, &z, 1, 1).unwrap();
        assert!((k0 - z.transpose() * &z).amax() < 1e-9);
    }

    #[test]
    fn representation_cost_examples() {
        let b4 = bipartite_matrix(4).unwrap();
        let rc = representation_cost_shallow(&Matrix::identity(4, 4), &b4, &quick()).unwrap();
        assert!((rc.value - 16.0).abs() < 1e-10);
        assert!(rc.cp_verified);

        let rc =
            representation_cost_shallow(&Matrix::identity(5, 5), &Matrix::identity(5, 5), &quick())
                .unwrap();
        assert!((rc.value - 10.0).abs() < 1e-10);
        assert!(rc.cp_verified);
    }

    #[test]
    fn one_hot_blocks_have_inverse_root_entries() {
        let sizes = [1usize, 2, 3];
        let n: usize = sizes.iter().sum();
        let mut y = Matrix::zeros(sizes.len(), n);
        let mut col = 0;
        for (c, &m) in sizes.iter().enumerate() {
            for _ in 0..m {
                y[(c, col)] = 1.0;
                col += 1;
            }
        }
        let rc = representation_cost_shallow(&Matrix::identity(n, n), &y, &quick()).unwrap();
        let mut col = 0;
        for &m in &sizes {
            for i in col..col + m {
                for j in col..col + m {
                    assert!((rc.pair.k[(i, j)] - 1.0 / (m as f64).sqrt()).abs() < 1e-12);
                }
            }
            col += m;
        }
        let b = rank_sigma_bounds(&rc.pair, Activation::Relu, &quick()).unwrap();
        assert_eq!((b.lower, b.upper), (3, 3));
        let expected: f64 = sizes.iter().map(|&m| 2.0 * (m as f64).sqrt()).sum();
        assert!((rc.value - expected).abs() < 1e-10);
    }

    #[test]
    fn search_never_fails_on_hard_budget() {
        let b4 = bipartite_matrix(4).unwrap();
        let pair = CovariancePair::new(b4.clone(), b4 * 0.5 + Matrix::identity(4, 4), 0.0);
        if let Ok(pair) = pair {
            let budget = SearchBudget {
                restarts: 1,
                max_iters: 1,
                max_k: Some(3),
                seed: 0,
            };
            let b = rank_sigma_bounds(&pair, Activation::Relu, &budget).unwrap();
            assert!(b.upper >= b.lower);
        }
    }
}
