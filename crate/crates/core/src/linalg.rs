//! Dense linear-algebra primitives shared by every other module.
//!
//! All rank decisions go through the singular value decomposition so that
//! [`pinv`], [`row_space_projector`] and [`numerical_rank`] agree on what
//! the row space of a matrix is. Tolerances are relative to the largest
//! singular value.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Default relative singular-value cutoff.
pub const DEFAULT_TOL: f64 = 1e-10;

pub fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ones(rows: usize, cols: usize) -> Matrix {
    Matrix::from_element(rows, cols, 1.0)
}

pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

struct Svd {
    u: Matrix,
    s: Vec<f64>,
    v_t: Matrix,
}

/// Thin SVD through faer; nalgebra's bidiagonal SVD was observed to return
/// inaccurate factors on wide matrices with zero rows.
fn svd(m: &Matrix) -> Svd {
    let (r, c) = m.shape();
    let f = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let dec = f.thin_svd().expect("SVD of a finite matrix");
    let (u, v, s) = (dec.U(), dec.V(), dec.S().column_vector());
    Svd {
        u: Matrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: (0..s.nrows()).map(|i| s[i]).collect(),
        v_t: Matrix::from_fn(v.ncols(), v.nrows(), |i, j| v[(j, i)]),
    }
}

fn cutoff(s: &[f64], tol: f64) -> f64 {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    tol * smax
}

/// Moore-Penrose pseudo-inverse. Singular values at or below `tol·σ_max`
/// are treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(m, "pinv input")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, r));
    }
    let Svd { u, s, v_t } = svd(m);
    let cut = cutoff(&s, tol);
    let mut out = Matrix::zeros(c, r);
    for (i, &si) in s.iter().enumerate() {
        if si > cut && si > 0.0 {
            let v = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (v * ui.transpose()) / si;
        }
    }
    Ok(out)
}

/// Orthogonal projector `M⁺M` onto the row space of `m` (a `cols × cols`
/// matrix).
pub fn row_space_projector(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(m, "projector input")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, c));
    }
    let Svd { s, v_t, .. } = svd(m);
    let cut = cutoff(&s, tol);
    let mut p = Matrix::zeros(c, c);
    for (i, &si) in s.iter().enumerate() {
        if si > cut && si > 0.0 {
            let v = v_t.row(i).transpose();
            p += &v * v.transpose();
        }
    }
    Ok(p)
}

/// Number of singular values strictly above `tol·σ_max`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    assert!(
        m.iter().all(|x| x.is_finite()),
        "numerical_rank needs a finite matrix"
    );
    let s = svd(m).s;
    let cut = cutoff(&s, tol);
    s.iter().filter(|&&x| x > cut && x > 0.0).count()
}

/// Eigen-decomposition of the symmetrized matrix, eigenvalues ascending.
pub fn sym_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Matrix::from_columns(
        &idx.iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// True when every eigenvalue of the symmetrized matrix is at least
/// `-tol·max(|λ|)`.
pub fn is_psd(m: &Matrix, tol: f64) -> bool {
    if m.is_empty() {
        return true;
    }
    let (vals, _) = sym_eigen(m);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    vals.first().is_none_or(|&lo| lo >= -tol * scale)
}

pub(crate) const ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// Symmetric PSD square root. Eigenvalues in `[-tol·λ_max, 0)` are clamped
/// to zero, anything more negative is rejected.
pub fn sqrtm_psd(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(m, "sqrtm input")?;
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "sqrtm_psd needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let lo = vals[0];
    if lo < -tol * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: lo,
            tolerance: tol * scale,
        });
    }
    let mut out = Matrix::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        // Roundoff-level eigenvalues count as zero.
        if v > ROUNDOFF * scale {
            let q = vecs.column(i);
            out += (q * q.transpose()) * v.sqrt();
        }
    }
    Ok(symmetrize(&out))
}

/// `(k + eps·I)⁻¹` for symmetric PSD `k` and `eps > 0`.
pub fn regularized_inverse(k: &Matrix, eps: f64) -> Result<Matrix> {
    ensure_finite(k, "regularized inverse input")?;
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Tikhonov parameter must be positive, got {eps}"
        )));
    }
    let n = k.nrows();
    let a = symmetrize(k) + Matrix::identity(n, n) * eps;
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => a
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("regularized matrix is singular".into())),
    }
}

/// Serde adapters storing a matrix as `{rows, cols, data}` with `data` in
/// row-major order.
pub mod row_major {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    pub struct Dense {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    impl From<&Matrix> for Dense {
        fn from(m: &Matrix) -> Self {
            Dense {
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.transpose().iter().copied().collect(),
            }
        }
    }

    impl Dense {
        pub fn into_matrix(self) -> Result<Matrix, String> {
            if self.rows * self.cols != self.data.len() {
                return Err(format!(
                    "{}x{} matrix with {} entries",
                    self.rows,
                    self.cols,
                    self.data.len()
                ));
            }
            if self.data.iter().any(|x| !x.is_finite()) {
                return Err("non-finite entry".into());
            }
            Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
        }
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Dense::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        Dense::deserialize(d)?
            .into_matrix()
            .map_err(D::Error::custom)
    }

    pub mod vec {
        use super::{Dense, Matrix};
        use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(Dense::from).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            Vec::<Dense>::deserialize(d)?
                .into_iter()
                .map(|m| m.into_matrix().map_err(D::Error::custom))
                .collect()
        }
    }
}

/// Relative Frobenius distance `‖a − b‖ / (1 + ‖b‖)`.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}
