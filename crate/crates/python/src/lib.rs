//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use l2reps::compress1d::{self, Neuron, ShallowNet1D};
use l2reps::cprank::{self, Graph};
use l2reps::experiments;
use l2reps::reform_k::{self, ConeWitness, CovariancePair, SearchBudget};
use l2reps::reform_z;
use l2reps::seeds::rng_for;
use l2reps::{Activation, Cost, Matrix, NetworkParams};

type Rows = Vec<Vec<f64>>;
type Neurons = Vec<(f64, f64, f64)>;

fn err(e: l2reps::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn activation(name: &str) -> PyResult<Activation> {
    Activation::parse(name).map_err(err)
}

/// Fully connected network `Wℓ · (σ(Zℓ₋₁); β)`.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: NetworkParams,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (weights, beta = 0.0, activation = "relu"))]
    fn new(weights: Vec<Rows>, beta: f64, activation: &str) -> PyResult<Self> {
        let w = weights
            .iter()
            .map(to_matrix)
            .collect::<PyResult<Vec<_>>>()?;
        let act = self::activation(activation)?;
        Ok(PyNetwork {
            inner: NetworkParams::new(w, beta, act).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (widths, beta = 0.0, activation = "relu", gain = 1.0, seed = 0))]
    fn random(
        widths: Vec<usize>,
        beta: f64,
        activation: &str,
        gain: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mut rng = rng_for(seed, &[]);
        let act = self::activation(activation)?;
        Ok(PyNetwork {
            inner: NetworkParams::random(&widths, beta, act, gain, &mut rng).map_err(err)?,
        })
    }

    #[getter]
    fn weights(&self) -> Vec<Rows> {
        self.inner.weights.iter().map(to_rows).collect()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    fn norm_sq(&self) -> f64 {
        self.inner.norm_sq()
    }

    fn forward(&self, x: Rows) -> PyResult<Rows> {
        let t = self.inner.forward(&to_matrix(&x)?).map_err(err)?;
        Ok(to_rows(t.output()))
    }

    #[pyo3(signature = (x, y, lam, cost = "mse"))]
    fn loss(&self, x: Rows, y: Rows, lam: f64, cost: &str) -> PyResult<f64> {
        let cost = Cost::parse(cost).map_err(err)?;
        self.inner
            .loss(&to_matrix(&x)?, &to_matrix(&y)?, cost, lam)
            .map_err(err)
    }

    /// First reformulation of the loss, evaluated at `Φ(W)`.
    #[pyo3(signature = (x, y, lam, cost = "mse"))]
    fn loss_r(&self, x: Rows, y: Rows, lam: f64, cost: &str) -> PyResult<f64> {
        let cost = Cost::parse(cost).map_err(err)?;
        let reps = reform_z::phi(&self.inner, &to_matrix(&x)?).map_err(err)?;
        reform_z::loss_r(&reps, cost, &to_matrix(&y)?, lam).map_err(err)
    }

    /// Covariance form of the loss, evaluated on the chain of `W`.
    #[pyo3(signature = (x, y, lam, cost = "mse"))]
    fn loss_k(&self, x: Rows, y: Rows, lam: f64, cost: &str) -> PyResult<f64> {
        let cost = Cost::parse(cost).map_err(err)?;
        let chain = reform_k::chain_from_weights(&self.inner, &to_matrix(&x)?).map_err(err)?;
        reform_k::loss_k(&chain, cost, &to_matrix(&y)?, lam).map_err(err)
    }

    /// Pre-activations `Z₁, …, Z_L`.
    fn hidden_reps(&self, x: Rows) -> PyResult<Vec<Rows>> {
        let reps = reform_z::phi(&self.inner, &to_matrix(&x)?).map_err(err)?;
        Ok(reps.reps.iter().map(to_rows).collect())
    }

    /// Covariance chain as JSON.
    fn chain_json(&self, x: Rows) -> PyResult<String> {
        let chain = reform_k::chain_from_weights(&self.inner, &to_matrix(&x)?).map_err(err)?;
        chain.to_json().map_err(err)
    }

    /// `(attraction, repulsion)` on hidden layer `layer`.
    fn forces(&self, x: Rows, layer: usize, epsilon: f64) -> PyResult<(Rows, Rows)> {
        let reps = reform_z::phi(&self.inner, &to_matrix(&x)?).map_err(err)?;
        let ff = reform_z::forces(&reps, layer, epsilon).map_err(err)?;
        Ok((to_rows(&ff.attraction), to_rows(&ff.repulsion)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(widths={:?}, beta={})",
            self.inner.widths(),
            self.inner.beta
        )
    }
}

/// `(K, Kσ)` generated by the rows of `vectors`.
#[pyfunction]
#[pyo3(signature = (vectors, beta = 0.0, activation = "relu"))]
fn cone_construct(vectors: Rows, beta: f64, activation: &str) -> PyResult<(Rows, Rows)> {
    let z = to_matrix(&vectors)?;
    let act = self::activation(activation)?;
    let (pair, _) =
        reform_k::cone_construct(ConeWitness::from_rows(&z).vectors, z.ncols(), beta, act)
            .map_err(err)?;
    Ok((to_rows(&pair.k), to_rows(&pair.k_sigma)))
}

/// `(lower, upper, witness rows or None)` for the width needed to realize a pair.
#[pyfunction]
#[pyo3(signature = (k, k_sigma, beta = 0.0, activation = "relu", restarts = 50, seed = 0))]
fn rank_sigma_bounds(
    k: Rows,
    k_sigma: Rows,
    beta: f64,
    activation: &str,
    restarts: usize,
    seed: u64,
) -> PyResult<(usize, usize, Option<Rows>)> {
    let pair = CovariancePair::new(to_matrix(&k)?, to_matrix(&k_sigma)?, beta).map_err(err)?;
    let budget = SearchBudget {
        restarts,
        seed,
        ..SearchBudget::default()
    };
    let b =
        reform_k::rank_sigma_bounds(&pair, self::activation(activation)?, &budget).map_err(err)?;
    let n = pair.n();
    Ok((b.lower, b.upper, b.witness.map(|w| to_rows(&w.as_rows(n)))))
}

/// `(value, cp_verified)` for a shallow ReLU network on identity inputs.
#[pyfunction]
#[pyo3(signature = (y, restarts = 50, seed = 0))]
fn representation_cost_shallow(y: Rows, restarts: usize, seed: u64) -> PyResult<(f64, bool)> {
    let y = to_matrix(&y)?;
    let n = y.ncols();
    let budget = SearchBudget {
        restarts,
        seed,
        ..SearchBudget::default()
    };
    let rc =
        reform_k::representation_cost_shallow(&Matrix::identity(n, n), &y, &budget).map_err(err)?;
    Ok((rc.value, rc.cp_verified))
}

#[pyfunction]
fn bipartite_matrix(n: usize) -> PyResult<Rows> {
    Ok(to_rows(&cprank::bipartite_matrix(n).map_err(err)?))
}

/// CP-rank lower bound of the Gram matrix of the graph on `n` vertices.
#[pyfunction]
fn graph_cp_rank_lower_bound(n: usize, edges: Vec<(usize, usize)>) -> PyResult<usize> {
    let g = Graph::new(n, edges).map_err(err)?;
    cprank::cp_rank_lower_bound(&cprank::graph_gram(&g), Some(&g)).map_err(err)
}

/// Compresses a one-dimensional shallow net given as `(a, c, d)` neurons and
/// bias `b`; returns the compressed `(neurons, b)`.
#[pyfunction]
fn compress_1d(neurons: Neurons, b: f64, points: Vec<f64>) -> PyResult<(Neurons, f64)> {
    let net = ShallowNet1D {
        neurons: neurons
            .iter()
            .map(|&(a, c, d)| Neuron::new(a, c, d))
            .collect(),
        b,
    };
    let out = compress1d::compress(&net, &points).map_err(err)?;
    Ok((out.neurons.iter().map(|n| (n.a, n.c, n.d)).collect(), out.b))
}

/// `(passed, failed check names)`.
#[pyfunction]
#[pyo3(signature = (lam, epsilons, seed = 0))]
fn verify_counterexample(lam: f64, epsilons: Vec<f64>, seed: u64) -> PyResult<(bool, Vec<String>)> {
    let r = experiments::verify_counterexample(lam, &epsilons, seed).map_err(err)?;
    let failed = r.failures().into_iter().map(String::from).collect();
    Ok((r.passed(), failed))
}

#[pymodule]
fn l2reps_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(cone_construct, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sigma_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(representation_cost_shallow, m)?)?;
    m.add_function(wrap_pyfunction!(bipartite_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(graph_cp_rank_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(compress_1d, m)?)?;
    m.add_function(wrap_pyfunction!(verify_counterexample, m)?)?;
    Ok(())
}
