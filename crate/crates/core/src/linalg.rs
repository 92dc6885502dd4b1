//! Dense symmetric eigendecomposition, SVD, inverse square roots and
//! whitening.
//!
//! Data matrices follow the column-per-sample convention: a `d x N` matrix
//! holds `N` observations of a `d`-dimensional feature vector.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense `f64` matrix. Samples are columns.
pub type Matrix = Array2<f64>;

/// Eigenvalues below `-NEG_EIG_TOL * lambda_max` are treated as genuine
/// indefiniteness rather than rounding.
const NEG_EIG_TOL: f64 = 1e-10;

/// Rejects matrices holding NaN or infinite entries.
pub fn ensure_finite(m: ArrayView2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(m.dim(), format!("{what} contains non-finite entries")))
    }
}

/// Diagonal ridge added to covariance matrices before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// A fixed amount added to every diagonal entry.
    Abs(f64),
    /// A multiple of the mean diagonal entry of the matrix being regularized.
    /// Falls back to the bare factor when that mean is zero or subnormal.
    Rel(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Rel(1e-6)
    }
}

impl Ridge {
    /// Ridge amount for the square matrix `m`.
    pub fn amount(&self, m: ArrayView2<f64>) -> f64 {
        match *self {
            Ridge::Abs(e) => e,
            Ridge::Rel(e) => {
                let n = m.nrows().max(1) as f64;
                let mean_diag = m.diag().sum() / n;
                if mean_diag >= f64::MIN_POSITIVE {
                    e * mean_diag
                } else {
                    e
                }
            }
        }
    }

    /// Validated ridge amount for `m`; an overflowing amount means `m`
    /// itself has blown up.
    fn resolve(&self, m: ArrayView2<f64>) -> Result<f64> {
        self.validate()?;
        ensure_finite(m, "ridged matrix")?;
        let amount = self.amount(m);
        if amount.is_finite() {
            Ok(amount)
        } else {
            Err(Error::numeric(m.dim(), "ridge amount overflows"))
        }
    }

    fn validate(&self) -> Result<()> {
        let e = match *self {
            Ridge::Abs(e) | Ridge::Rel(e) => e,
        };
        if e.is_finite() && e >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("ridge must be finite and >= 0, got {e}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SymEig {
    /// Descending.
    pub values: Array1<f64>,
    /// Orthonormal columns, `vectors.column(i)` pairs with `values[i]`.
    pub vectors: Matrix,
}

impl SymEig {
    /// `V diag(f(lambda)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled = &self.vectors * &self.values.mapv(f);
        let out = scaled.dot(&self.vectors.t());
        symmetrize(out.view())
    }
}

fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: ArrayView2<f64>) -> Matrix {
    let mut out = m.to_owned();
    out += &m.t();
    out *= 0.5;
    out
}

fn require_square(m: ArrayView2<f64>, what: &str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::Dimension(format!("{what} must be square and non-empty, got {r}x{c}")));
    }
    Ok(r)
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_column_signs(m: &mut Matrix, partner: Option<&mut Matrix>) {
    let mut flips = Vec::with_capacity(m.ncols());
    for mut col in m.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let flip = pivot < 0.0;
        if flip {
            col.mapv_inplace(|v| -v);
        }
        flips.push(flip);
    }
    if let Some(p) = partner {
        for (mut col, flip) in p.columns_mut().into_iter().zip(flips) {
            if flip {
                col.mapv_inplace(|v| -v);
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first,
/// eigenvalues come back in descending order.
pub fn sym_eig(m: ArrayView2<f64>) -> Result<SymEig> {
    let n = require_square(m, "sym_eig input")?;
    ensure_finite(m, "sym_eig input")?;
    let sym = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::try_new(to_nalgebra(sym.view()), f64::EPSILON, 1000 * n.max(10))
        .ok_or_else(|| Error::numeric((n, n), "symmetric eigensolver did not converge"))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    fix_column_signs(&mut vectors, None);
    Ok(SymEig { values, vectors })
}

/// Applies `f` to the ridged eigenvalues of a symmetric PSD matrix after
/// clamping rounding-level negative eigenvalues to zero.
fn psd_spectral_map(m: ArrayView2<f64>, eps: f64, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config(format!("eps must be finite and >= 0, got {eps}")));
    }
    let eig = sym_eig(m)?;
    let lambda_max = eig.values[0].max(0.0);
    let tol = (NEG_EIG_TOL * lambda_max).max(f64::MIN_POSITIVE);
    let mut shifted = eig.values.clone();
    for v in shifted.iter_mut() {
        if *v < -tol {
            return Err(Error::numeric(
                m.dim(),
                format!("matrix is indefinite (eigenvalue {v:e}, largest {lambda_max:e})"),
            ));
        }
        *v = v.max(0.0) + eps;
        if *v <= 0.0 {
            return Err(Error::numeric(
                m.dim(),
                "singular matrix: zero eigenvalue with no ridge".to_string(),
            ));
        }
    }
    let eig = SymEig {
        values: shifted,
        vectors: eig.vectors,
    };
    Ok(eig.reconstruct_with(f))
}

/// `(M + eps I)^{-1/2}` for symmetric PSD `M`.
pub fn inv_sqrt_sym(m: ArrayView2<f64>, eps: f64) -> Result<Matrix> {
    psd_spectral_map(m, eps, |l| 1.0 / l.sqrt())
}

/// `(M + eps I)^{-1}` for symmetric PSD `M`.
pub fn inv_sym(m: ArrayView2<f64>, eps: f64) -> Result<Matrix> {
    psd_spectral_map(m, eps, |l| 1.0 / l)
}

/// `(M + ridge)^{-1/2}` with the ridge resolved against `m`.
pub fn inv_sqrt_ridged(m: ArrayView2<f64>, ridge: Ridge) -> Result<Matrix> {
    inv_sqrt_sym(m, ridge.resolve(m)?)
}

/// `(M + ridge)^{-1}` with the ridge resolved against `m`.
pub fn inv_ridged(m: ArrayView2<f64>, ridge: Ridge) -> Result<Matrix> {
    inv_sym(m, ridge.resolve(m)?)
}

/// Truncated singular value decomposition `M ~ U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Array1<f64>,
    pub v: Matrix,
}

/// Rank-`l` SVD with singular values in descending order. Each left singular
/// vector has its largest-magnitude entry positive.
pub fn svd_rank_l(m: ArrayView2<f64>, l: usize) -> Result<Svd> {
    let (r, c) = m.dim();
    if l == 0 || l > r.min(c) {
        return Err(Error::Dimension(format!("rank {l} out of range for {r}x{c} matrix")));
    }
    ensure_finite(m, "svd input")?;
    let svd = to_nalgebra(m)
        .try_svd(true, true, f64::EPSILON, 1000 * r.max(c).max(10))
        .ok_or_else(|| Error::numeric((r, c), "SVD did not converge"))?;
    let (Some(u_full), Some(vt_full)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(Error::numeric((r, c), "SVD returned no singular vectors"));
    };
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(l);

    let u_full = from_nalgebra(u_full);
    let vt_full = from_nalgebra(vt_full);
    let mut u = Array2::from_shape_fn((r, l), |(i, j)| u_full[[i, order[j]]]);
    let mut v = Array2::from_shape_fn((c, l), |(i, j)| vt_full[[order[j], i]]);
    let sigma = Array1::from_iter(order.iter().map(|&i| svd.singular_values[i].max(0.0)));
    fix_column_signs(&mut u, Some(&mut v));
    Ok(Svd { u, sigma, v })
}

/// `(A A^T + eps I)^{-1/2} A`: an orthonormal basis for the row space of `A`.
pub fn whiten_rows(a: ArrayView2<f64>, eps: f64) -> Result<Matrix> {
    let gram = a.dot(&a.t());
    let w = inv_sqrt_sym(gram.view(), eps)?;
    Ok(w.dot(&a))
}

/// [`whiten_rows`] with a ridge resolved against `A A^T`.
pub fn whiten_rows_ridged(a: ArrayView2<f64>, ridge: Ridge) -> Result<Matrix> {
    let gram = a.dot(&a.t());
    let w = inv_sqrt_ridged(gram.view(), ridge)?;
    Ok(w.dot(&a))
}

/// Seeded `d x l` matrix with orthonormal columns.
pub fn random_orthonormal(d: usize, l: usize, seed: u64) -> Result<Matrix> {
    if l == 0 || l > d {
        return Err(Error::Dimension(format!("cannot fit {l} orthonormal columns in dimension {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::from_shape_simple_fn((d, l), || StandardNormal.sample(&mut rng));
    orthonormalize_columns(&mut m)?;
    Ok(m)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
pub fn orthonormalize_columns(m: &mut Matrix) -> Result<()> {
    let (d, l) = m.dim();
    for j in 0..l {
        for _ in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let qk = m.column(k).to_owned();
                m.column_mut(j).scaled_add(-proj, &qk);
            }
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(Error::numeric((d, l), format!("column {j} is linearly dependent")));
        }
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(())
}

/// Row means and the row-centered copy of `m`.
pub fn center_rows(m: ArrayView2<f64>) -> (Matrix, Array1<f64>) {
    let mean = m
        .mean_axis(Axis(1))
        .unwrap_or_else(|| Array1::zeros(m.nrows()));
    let centered = &m - &mean.view().insert_axis(Axis(1));
    (centered, mean)
}

/// Largest singular value.
pub fn spectral_norm(m: ArrayView2<f64>) -> Result<f64> {
    let gram = if m.nrows() <= m.ncols() {
        m.dot(&m.t())
    } else {
        m.t().dot(&m)
    };
    let eig = sym_eig(gram.view())?;
    Ok(eig.values[0].max(0.0).sqrt())
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
