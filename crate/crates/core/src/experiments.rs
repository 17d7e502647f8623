//! Datasets, width sweeps, the two-neuron counterexample and force export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cprank::bipartite_matrix;
use crate::linalg::Matrix;
use crate::network::{train, Activation, Cost, NetworkParams, OptimizerConfig};
use crate::reform_k::chain_from_weights;
use crate::reform_z::{forces, phi, ForceField};
use crate::seeds::rng_for;
use crate::{Error, Result};

/// Stream tags keeping dataset, trial and perturbation randomness apart.
const DATA_STREAM: u64 = 1;
const TRIAL_STREAM: u64 = 2;
const PERTURB_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussian inputs labelled by a random ReLU network with layer widths
    /// `widths = [n₀, …, n_L]` and bias `β = 1`.
    Teacher {
        widths: Vec<usize>,
        n: usize,
        seed: u64,
    },
    /// `X = I_N`, `Y = B_N`.
    Bipartite { n: usize },
    /// `X = I_N`, `Y` the one-hot labels of `classes` nonempty classes.
    Onehot { n: usize, classes: usize, seed: u64 },
    /// `X = (1, −1)`, `Y = (1, 1)`.
    CounterexampleN2,
    /// Gaussian clusters in `dim` dimensions with one-hot labels.
    SyntheticClusters {
        n: usize,
        classes: usize,
        dim: usize,
        seed: u64,
    },
}

fn gaussian<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn labels<R: Rng>(n: usize, classes: usize, rng: &mut R) -> Result<Vec<usize>> {
    if classes == 0 || classes > n {
        return Err(Error::InvalidInput(format!(
            "need 1 <= classes <= N, got {classes} classes for N = {n}"
        )));
    }
    let mut l: Vec<usize> = (0..n)
        .map(|i| {
            if i < classes {
                i
            } else {
                rng.random_range(0..classes)
            }
        })
        .collect();
    l.shuffle(rng);
    Ok(l)
}

fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut y = Matrix::zeros(classes, labels.len());
    for (j, &c) in labels.iter().enumerate() {
        y[(c, j)] = 1.0;
    }
    y
}

impl DatasetSpec {
    /// Inputs `X` (`n₀ × N`) and targets `Y` (`n_L × N`).
    pub fn generate(&self) -> Result<(Matrix, Matrix)> {
        match self {
            DatasetSpec::Teacher { widths, n, seed } => {
                if widths.len() < 2 || widths.contains(&0) || *n == 0 {
                    return Err(Error::InvalidInput(
                        "teacher needs positive widths [n0, ..., nL] and N > 0".into(),
                    ));
                }
                let mut rng = rng_for(*seed, &[DATA_STREAM]);
                let teacher = NetworkParams::random(
                    widths,
                    1.0,
                    Activation::Relu,
                    std::f64::consts::SQRT_2,
                    &mut rng,
                )?;
                let x = gaussian(widths[0], *n, 1.0, &mut rng);
                let y = teacher.forward(&x)?.output().clone();
                Ok((x, y))
            }
            DatasetSpec::Bipartite { n } => Ok((Matrix::identity(*n, *n), bipartite_matrix(*n)?)),
            DatasetSpec::Onehot { n, classes, seed } => {
                let mut rng = rng_for(*seed, &[DATA_STREAM]);
                let l = labels(*n, *classes, &mut rng)?;
                Ok((Matrix::identity(*n, *n), one_hot(&l, *classes)))
            }
            DatasetSpec::CounterexampleN2 => Ok((
                Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
                Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            )),
            DatasetSpec::SyntheticClusters {
                n,
                classes,
                dim,
                seed,
            } => {
                if *dim == 0 {
                    return Err(Error::InvalidInput(
                        "cluster dimension must be positive".into(),
                    ));
                }
                let mut rng = rng_for(*seed, &[DATA_STREAM]);
                let l = labels(*n, *classes, &mut rng)?;
                let centers = gaussian(*dim, *classes, 2.0, &mut rng);
                let noise = gaussian(*dim, *n, 1.0, &mut rng);
                let x = Matrix::from_fn(*dim, *n, |i, j| centers[(i, l[j])] + noise[(i, j)]);
                Ok((x, one_hot(&l, *classes)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Hidden widths, strictly increasing; every hidden layer gets the same
    /// width.
    pub widths: Vec<usize>,
    pub trials: usize,
    pub depth: usize,
    pub lambda: f64,
    pub cost: String,
    pub activation: String,
    pub beta: f64,
    pub init_gain: f64,
    pub seed: u64,
    pub plateau_tol: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            widths: vec![1, 2, 4, 8],
            trials: 3,
            depth: 2,
            lambda: 1e-3,
            cost: "mse".into(),
            activation: "relu".into(),
            beta: 1.0,
            init_gain: 1.0,
            seed: 0,
            plateau_tol: 0.01,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(Cost, Activation)> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidInput(
                "widths must be positive and nonempty".into(),
            ));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "widths must be strictly increasing".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidInput("depth must be at least 2".into()));
        }
        if !(self.lambda >= 0.0) || !(self.plateau_tol >= 0.0) {
            return Err(Error::InvalidInput(
                "lambda and plateau_tol must be >= 0".into(),
            ));
        }
        Ok((
            Cost::parse(&self.cost)?,
            Activation::parse(&self.activation)?,
        ))
    }

    /// `[n₀, w, …, w, n_L]` with `depth − 1` hidden layers.
    pub fn layer_widths(&self, n0: usize, width: usize, n_out: usize) -> Vec<usize> {
        let mut w = vec![n0];
        w.extend(std::iter::repeat_n(width, self.depth - 1));
        w.push(n_out);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    /// `None` when training diverged.
    pub final_loss: Option<f64>,
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub width: usize,
    pub trials: Vec<TrialResult>,
}

impl SweepRow {
    pub fn min_loss(&self) -> Option<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.final_loss)
            .min_by(f64::total_cmp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub plateau_tol: f64,
}

impl SweepReport {
    /// Loss at the widest width that has a finite result.
    pub fn reference_loss(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(SweepRow::min_loss)
    }

    /// Smallest width whose loss is within `plateau_tol` of the reference.
    pub fn plateau_start(&self) -> Option<usize> {
        let r = self.reference_loss()?;
        self.rows
            .iter()
            .find(|row| {
                row.min_loss()
                    .is_some_and(|l| l <= (1.0 + self.plateau_tol) * r)
            })
            .map(|row| row.width)
    }

    /// Widths whose loss exceeds `(1 + plateau_tol)` times the best loss
    /// seen at any smaller width.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        let mut best = f64::INFINITY;
        let mut bad = Vec::new();
        for row in &self.rows {
            if let Some(l) = row.min_loss() {
                if l > (1.0 + self.plateau_tol) * best {
                    bad.push(row.width);
                }
                best = best.min(l);
            }
        }
        bad
    }

    /// Columns: `width,min_loss,in_plateau,loss_trial0,…`; diverged
    /// trials are written as `nan`.
    pub fn to_csv(&self) -> String {
        let trials = self.rows.iter().map(|r| r.trials.len()).max().unwrap_or(0);
        let mut s = String::from("width,min_loss,in_plateau");
        for t in 0..trials {
            let _ = write!(s, ",loss_trial{t}");
        }
        s.push('\n');
        let start = self.plateau_start();
        for row in &self.rows {
            let min = row.min_loss().map_or("nan".to_string(), |l| l.to_string());
            let plateau = start.is_some_and(|w| row.width >= w);
            let _ = write!(s, "{},{min},{}", row.width, u8::from(plateau));
            for t in &row.trials {
                let l = t.final_loss.map_or("nan".to_string(), |l| l.to_string());
                let _ = write!(s, ",{l}");
            }
            s.push('\n');
        }
        s
    }
}

/// Trains one network of hidden width `width` from the seed derived from
/// `(config.seed, width, trial)`.
pub fn run_trial(
    config: &SweepConfig,
    x: &Matrix,
    y: &Matrix,
    width: usize,
    trial: usize,
) -> Result<(TrialResult, Option<NetworkParams>)> {
    let (cost, act) = config.validate()?;
    let mut rng = rng_for(config.seed, &[TRIAL_STREAM, width as u64, trial as u64]);
    let widths = config.layer_widths(x.nrows(), width, y.nrows());
    let init = NetworkParams::random(&widths, config.beta, act, config.init_gain, &mut rng)?;
    match train(&init, x, y, cost, config.lambda, &config.optimizer) {
        Ok(rep) => Ok((
            TrialResult {
                final_loss: Some(rep.final_loss),
                grad_norm: Some(rep.grad_norm),
            },
            Some(rep.params),
        )),
        Err(Error::Divergence { .. }) => Ok((
            TrialResult {
                final_loss: None,
                grad_norm: None,
            },
            None,
        )),
        Err(e) => Err(e),
    }
}

/// Trains `trials` networks per width in parallel and collects the final
/// losses in width and trial order.
pub fn sweep(config: &SweepConfig, data: &DatasetSpec) -> Result<SweepReport> {
    config.validate()?;
    let (x, y) = data.generate()?;
    let jobs: Vec<(usize, usize)> = config
        .widths
        .iter()
        .flat_map(|&w| (0..config.trials).map(move |t| (w, t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(w, t)| run_trial(config, &x, &y, w, t).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let rows = config
        .widths
        .iter()
        .enumerate()
        .map(|(i, &width)| SweepRow {
            width,
            trials: results[i * config.trials..(i + 1) * config.trials].to_vec(),
        })
        .collect();
    Ok(SweepReport {
        rows,
        plateau_tol: config.plateau_tol,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub lambda: f64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Columns: `lambda,check,passed,value,expected`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,check,passed,value,expected\n");
        self.append_rows(&mut s);
        s
    }

    pub fn append_rows(&self, s: &mut String) {
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.lambda,
                c.name,
                u8::from(c.passed),
                c.value,
                c.expected
            );
        }
    }
}

/// Width-two network `W₁ = (a₁, a₂)ᵀ`, `W₂ = (b₁, b₂)` without bias.
pub fn counterexample_network(a: [f64; 2], b: [f64; 2]) -> NetworkParams {
    NetworkParams::new(
        vec![
            Matrix::from_row_slice(2, 2, &[a[0], 0.0, a[1], 0.0]),
            Matrix::from_row_slice(1, 3, &[b[0], b[1], 0.0]),
        ],
        0.0,
        Activation::Relu,
    )
    .expect("valid shapes")
}

pub fn counterexample_base_loss(lambda: f64) -> f64 {
    1.0 + 2.0 * lambda - lambda * lambda
}

pub fn counterexample_perturbed_loss(lambda: f64, eps: f64) -> f64 {
    lambda * lambda + (eps * eps - 1.0).powi(2) + 2.0 * lambda * (1.0 - lambda + eps * eps)
}

/// Number of random perturbations tried around the interior point.
pub const PERTURBATION_SAMPLES: usize = 10_000;
pub const PERTURBATION_RADIUS: f64 = 1e-3;

/// Checks, for the data `X = (1, −1)`, `Y = (1, 1)` and the sum-of-squares
/// cost, that the segment `W₁ = W₂ᵀ = (a₁, a₂)` with `a₁² + a₂² = 1 − λ`
/// has the predicted loss, that an interior point is a local minimum
/// under random perturbations, that every point of the segment has the
/// same covariances, and that the weights `W₁ = (√(1−λ), −ε)ᵀ`,
/// `W₂ = (√(1−λ), ε)` near the endpoint `a₂ = 0` have strictly lower loss.
pub fn verify_counterexample(
    lambda: f64,
    eps_list: &[f64],
    seed: u64,
) -> Result<VerificationReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let (x, y) = DatasetSpec::CounterexampleN2.generate()?;
    let cost = Cost::SumSquares;
    let r = (1.0 - lambda).sqrt();
    let base = counterexample_base_loss(lambda);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for theta in [
        0.0,
        0.3,
        std::f64::consts::FRAC_PI_4,
        1.2,
        std::f64::consts::FRAC_PI_2,
    ] {
        let a = [r * f64::cos(theta), r * f64::sin(theta)];
        let l = counterexample_network(a, a).loss(&x, &y, cost, lambda)?;
        worst = worst.max((l - base).abs());
    }
    checks.push(Check {
        name: "segment_loss".into(),
        passed: worst < 1e-10,
        value: worst,
        expected: 0.0,
    });

    let s = r / std::f64::consts::SQRT_2;
    let interior = counterexample_network([s, s], [s, s]);
    let l0 = interior.loss(&x, &y, cost, lambda)?;
    let mut rng = rng_for(seed, &[PERTURB_STREAM]);
    let mut min_change = f64::INFINITY;
    for _ in 0..PERTURBATION_SAMPLES {
        let mut d = [0.0f64; 4];
        d.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v *= PERTURBATION_RADIUS / norm);
        let p = counterexample_network([s + d[0], s + d[1]], [s + d[2], s + d[3]]);
        min_change = min_change.min(p.loss(&x, &y, cost, lambda)? - l0);
    }
    checks.push(Check {
        name: "interior_local_minimum".into(),
        passed: min_change >= -1e-14 * (1.0 + l0.abs()),
        value: min_change,
        expected: 0.0,
    });

    let c_mid = chain_from_weights(&interior, &x)?;
    let c_end = chain_from_weights(&counterexample_network([r, 0.0], [r, 0.0]), &x)?;
    let gap = (&c_mid.pairs[0].k - &c_end.pairs[0].k)
        .amax()
        .max((&c_mid.pairs[0].k_sigma - &c_end.pairs[0].k_sigma).amax())
        .max((&c_mid.output - &c_end.output).amax());
    checks.push(Check {
        name: "segment_shares_covariances".into(),
        passed: gap < 1e-12,
        value: gap,
        expected: 0.0,
    });

    for &eps in eps_list {
        let p = counterexample_network([r, -eps], [r, eps]);
        let l = p.loss(&x, &y, cost, lambda)?;
        let expected = counterexample_perturbed_loss(lambda, eps);
        checks.push(Check {
            name: format!("endpoint_closed_form_eps_{eps}"),
            passed: (l - expected).abs() < 1e-10,
            value: l,
            expected,
        });
        checks.push(Check {
            name: format!("endpoint_descent_eps_{eps}"),
            passed: eps == 0.0 || l < base,
            value: l,
            expected: base,
        });
    }
    Ok(VerificationReport { lambda, checks })
}

/// Writes the forces acting on hidden layer `layer` of the trained
/// network, one row per `(point, neuron)`:
///
/// ```text
/// # layer=<ℓ>,epsilon=<ε>,neurons=<nℓ>,points=<N>,duality=rows:neurons|columns:points
/// point,neuron,z,attraction,repulsion
/// ```
///
/// Grouping rows by `neuron` gives the neurons as points in `ℝᴺ`, grouping
/// by `point` gives the data points in `ℝ^{nℓ}`.
pub fn export_forces(
    params: &NetworkParams,
    x: &Matrix,
    layer: usize,
    epsilon: f64,
    out: &Path,
) -> Result<ForceField> {
    let reps = phi(params, x)?;
    let ff = forces(&reps, layer, epsilon)?;
    std::fs::write(out, forces_csv(&reps.reps[layer - 1], &ff)).map_err(|e| Error::io(out, e))?;
    Ok(ff)
}

pub fn forces_csv(z: &Matrix, ff: &ForceField) -> String {
    let (n_l, n) = z.shape();
    let mut s = format!(
        "# layer={},epsilon={},neurons={n_l},points={n},duality=rows:neurons|columns:points\n",
        ff.layer, ff.epsilon
    );
    s.push_str("point,neuron,z,attraction,repulsion\n");
    for j in 0..n {
        for i in 0..n_l {
            let _ = writeln!(
                s,
                "{j},{i},{},{},{}",
                z[(i, j)],
                ff.attraction[(i, j)],
                ff.repulsion[(i, j)]
            );
        }
    }
    s
}

/// Reads a file written by [`export_forces`] back into `(Z, attraction,
/// repulsion)`.
pub fn read_forces_csv(text: &str) -> Result<(Matrix, Matrix, Matrix)> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Parse("missing metadata line".into()))?;
    let field = |key: &str| -> Result<usize> {
        meta.split(',')
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
            .ok_or_else(|| Error::Parse(format!("metadata lacks {key}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad {key} in metadata")))
    };
    let (n_l, n) = (field("neurons")?, field("points")?);
    if lines.next() != Some("point,neuron,z,attraction,repulsion") {
        return Err(Error::Parse("unexpected column header".into()));
    }
    let mut z = Matrix::zeros(n_l, n);
    let mut att = Matrix::zeros(n_l, n);
    let mut rep = Matrix::zeros(n_l, n);
    let mut count = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse(format!("expected five fields in {line:?}")));
        }
        let idx = |s: &str, max: usize| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v < max)
                .ok_or_else(|| Error::Parse(format!("bad index {s:?}")))
        };
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
        };
        let (j, i) = (idx(f[0], n)?, idx(f[1], n_l)?);
        z[(i, j)] = num(f[2])?;
        att[(i, j)] = num(f[3])?;
        rep[(i, j)] = num(f[4])?;
        count += 1;
    }
    if count != n * n_l {
        return Err(Error::Parse(format!(
            "expected {} rows, found {count}",
            n * n_l
        )));
    }
    Ok((z, att, rep))
}

/// Settings of the `forces` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcesConfig {
    pub width: usize,
    pub layer: usize,
    /// `None` picks the scale-relative default.
    pub epsilon: Option<f64>,
}

impl Default for ForcesConfig {
    fn default() -> Self {
        ForcesConfig {
            width: 10,
            layer: 1,
            epsilon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterexampleConfig {
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        CounterexampleConfig {
            lambdas: vec![0.05, 0.1, 0.5],
            epsilons: vec![0.05, 0.1],
        }
    }
}

/// Contents of an experiment configuration file (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DatasetSpec,
    pub sweep: SweepConfig,
    pub forces: ForcesConfig,
    pub counterexample: CounterexampleConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DatasetSpec::Teacher {
                widths: vec![4, 8, 1],
                n: 20,
                seed: 0,
            },
            sweep: SweepConfig::default(),
            forces: ForcesConfig::default(),
            counterexample: CounterexampleConfig::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
