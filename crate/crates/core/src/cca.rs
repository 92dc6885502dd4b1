//! Linear CCA: the closed-form SVD solution, alternating least squares
//! (orthogonal iterations with whitening), and rank-1 gradient descent over
//! the least-squares reformulation.
//!
//! Covariances are Gram matrices of centered data without the `1/N` factor,
//! so whitened projections have orthonormal rows.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{
    center_rows, inv_ridged, inv_sqrt_ridged, random_orthonormal, spectral_norm, svd_rank_l,
    sym_eig, whiten_rows_ridged, Matrix, Ridge,
};

/// Projections and canonical correlations of a fitted linear CCA.
#[derive(Debug, Clone)]
pub struct CcaSolution {
    /// `d_x x L`; canonical variables of view 1 are `u_map^T (x - mean_x)`.
    pub u_map: Matrix,
    /// `d_y x L`.
    pub v_map: Matrix,
    /// Descending.
    pub correlations: Array1<f64>,
    pub total: f64,
    pub mean_x: Array1<f64>,
    pub mean_y: Array1<f64>,
}

impl CcaSolution {
    pub fn project_x(&self, x: ArrayView2<f64>) -> Matrix {
        let centered = &x - &self.mean_x.view().insert_axis(Axis(1));
        self.u_map.t().dot(&centered)
    }

    pub fn project_y(&self, y: ArrayView2<f64>) -> Matrix {
        let centered = &y - &self.mean_y.view().insert_axis(Axis(1));
        self.v_map.t().dot(&centered)
    }

    pub fn rank(&self) -> usize {
        self.correlations.len()
    }
}

/// Whitened cross-covariance of centered data and the whitening maps used to
/// build it.
#[derive(Debug, Clone)]
pub(crate) struct WhitenedCross {
    /// `(Sigma_ff + r)^{-1/2}`
    pub inv_sqrt_ff: Matrix,
    /// `(Sigma_gg + r)^{-1/2}`
    pub inv_sqrt_gg: Matrix,
    /// `Sigma_ff^{-1/2} Sigma_fg Sigma_gg^{-1/2}`
    pub cross: Matrix,
}

impl WhitenedCross {
    pub fn from_centered(fc: ArrayView2<f64>, gc: ArrayView2<f64>, ridge: Ridge) -> Result<Self> {
        let sff = fc.dot(&fc.t());
        let sgg = gc.dot(&gc.t());
        let sfg = fc.dot(&gc.t());
        let inv_sqrt_ff = inv_sqrt_ridged(sff.view(), ridge)?;
        let inv_sqrt_gg = inv_sqrt_ridged(sgg.view(), ridge)?;
        let cross = inv_sqrt_ff.dot(&sfg).dot(&inv_sqrt_gg);
        Ok(WhitenedCross {
            inv_sqrt_ff,
            inv_sqrt_gg,
            cross,
        })
    }
}

fn check_paired(f: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<usize> {
    if f.ncols() != g.ncols() {
        return Err(Error::Dimension(format!(
            "views have different sample counts: {} vs {}",
            f.ncols(),
            g.ncols()
        )));
    }
    Ok(f.ncols())
}

fn check_rank(l: usize, dx: usize, dy: usize) -> Result<()> {
    if l == 0 || l > dx.min(dy) {
        return Err(Error::Dimension(format!(
            "projection rank {l} must lie in 1..={} for views of dimension {dx} and {dy}",
            dx.min(dy)
        )));
    }
    Ok(())
}

/// Closed-form CCA of raw (uncentered) views `f` (`d_x x N`) and `g`
/// (`d_y x N`). Centers internally and records the means.
pub fn closed_form(f: ArrayView2<f64>, g: ArrayView2<f64>, l: usize, ridge: Ridge) -> Result<CcaSolution> {
    let n = check_paired(f, g)?;
    if n < 2 {
        return Err(Error::Data(format!("CCA needs at least 2 samples, got {n}")));
    }
    check_rank(l, f.nrows(), g.nrows())?;

    let (fc, mean_x) = center_rows(f);
    let (gc, mean_y) = center_rows(g);
    let w = WhitenedCross::from_centered(fc.view(), gc.view(), ridge)?;
    let svd = svd_rank_l(w.cross.view(), l)?;
    let u_map = w.inv_sqrt_ff.dot(&svd.u);
    let v_map = w.inv_sqrt_gg.dot(&svd.v);
    let total = svd.sigma.sum();
    Ok(CcaSolution {
        u_map,
        v_map,
        correlations: svd.sigma,
        total,
        mean_x,
        mean_y,
    })
}

/// Total canonical correlation between two equally shaped `L x M`
/// projections. This is the evaluation metric on every split.
pub fn total_correlation(p: ArrayView2<f64>, q: ArrayView2<f64>, ridge: Ridge) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "projections must share a shape, got {:?} and {:?}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(closed_form(p, q, p.nrows(), ridge)?.total)
}

fn check_centered(m: ArrayView2<f64>, what: &str) -> Result<()> {
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mean = m.mean_axis(Axis(1)).ok_or_else(|| Error::Data(format!("{what} has no samples")))?;
    let worst = mean.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if worst > 1e-8 * scale {
        return Err(Error::Data(format!(
            "{what} must be centered (largest row mean {worst:e})"
        )));
    }
    Ok(())
}

/// Iterate of the alternating least squares solver.
#[derive(Debug, Clone)]
pub struct AlsState {
    /// `L x N` whitened projection of view 1.
    pub a_proj: Matrix,
    /// `L x N` whitened projection of view 2.
    pub b_proj: Matrix,
    pub iteration: usize,
}

/// Orthogonal iterations for CCA, written as alternating regressions onto
/// the other view's whitened projection.
#[derive(Debug, Clone)]
pub struct Als {
    f: Matrix,
    g: Matrix,
    inv_ff: Matrix,
    inv_gg: Matrix,
    ridge: Ridge,
    state: AlsState,
}

impl Als {
    /// Inputs must already be centered.
    pub fn new(f: ArrayView2<f64>, g: ArrayView2<f64>, l: usize, ridge: Ridge, seed: u64) -> Result<Self> {
        let n = check_paired(f, g)?;
        if n < 2 {
            return Err(Error::Data(format!("ALS needs at least 2 samples, got {n}")));
        }
        check_rank(l, f.nrows(), g.nrows())?;
        check_centered(f, "view 1")?;
        check_centered(g, "view 2")?;

        let sff = f.dot(&f.t());
        let sgg = g.dot(&g.t());
        let inv_ff = inv_ridged(sff.view(), ridge)?;
        let inv_gg = inv_ridged(sgg.view(), ridge)?;
        let u0 = random_orthonormal(f.nrows(), l, seed)?;
        let a0 = u0.t().dot(&inv_sqrt_ridged(sff.view(), ridge)?).dot(&f);
        Ok(Als {
            f: f.to_owned(),
            g: g.to_owned(),
            inv_ff,
            inv_gg,
            ridge,
            state: AlsState {
                b_proj: Matrix::zeros(a0.dim()),
                a_proj: a0,
                iteration: 0,
            },
        })
    }

    pub fn state(&self) -> &AlsState {
        &self.state
    }

    pub fn into_state(self) -> AlsState {
        self.state
    }

    /// One sweep: regress view 2 onto `A_{t-1}` and whiten, then regress
    /// view 1 onto `B_t` and whiten.
    pub fn step(&mut self) -> Result<&AlsState> {
        let b = self
            .state
            .a_proj
            .dot(&self.g.t())
            .dot(&self.inv_gg)
            .dot(&self.g);
        let b = whiten_rows_ridged(b.view(), self.ridge)?;
        let a = b.dot(&self.f.t()).dot(&self.inv_ff).dot(&self.f);
        let a = whiten_rows_ridged(a.view(), self.ridge)?;
        self.state.a_proj = a;
        self.state.b_proj = b;
        self.state.iteration += 1;
        Ok(&self.state)
    }

    /// Runs `iterations` sweeps, handing every iterate to `observe`.
    pub fn run_observed(
        &mut self,
        iterations: usize,
        mut observe: impl FnMut(&AlsState) -> Result<()>,
    ) -> Result<&AlsState> {
        for _ in 0..iterations {
            self.step()?;
            observe(&self.state)?;
        }
        Ok(&self.state)
    }
}

/// `iterations` rounds of alternating least squares from a seeded orthonormal
/// initialization. Inputs must be centered.
pub fn als(
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
    l: usize,
    iterations: usize,
    ridge: Ridge,
    seed: u64,
) -> Result<AlsState> {
    if iterations == 0 {
        return Err(Error::Config("ALS needs at least one iteration".into()));
    }
    let mut solver = Als::new(f, g, l, ridge, seed)?;
    solver.run_observed(iterations, |_| Ok(()))?;
    Ok(solver.into_state())
}

fn projection_norm(w: ArrayView1<f64>, data: ArrayView2<f64>, what: &str) -> Result<f64> {
    let norm = data.t().dot(&w).dot(&data.t().dot(&w)).sqrt();
    if norm.is_nan() || norm < 1e-12 {
        return Err(Error::numeric(
            data.dim(),
            format!("degenerate direction: |{what}^T data| = {norm:e}"),
        ));
    }
    Ok(norm)
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
    let n = v.dot(&v).sqrt();
    v / n
}

/// Rank-1 CCA by batch gradient steps over the two least-squares problems,
/// started from seeded random unit vectors. Inputs must be centered.
pub fn gd_rank1(
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
    eta: f64,
    iterations: usize,
    seed: u64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = random_unit(f.nrows(), &mut rng);
    let v0 = random_unit(g.nrows(), &mut rng);
    gd_rank1_from(f, g, u0, v0, eta, iterations)
}

/// [`gd_rank1`] from a caller-supplied starting pair.
pub fn gd_rank1_from(
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
    mut u: Array1<f64>,
    mut v: Array1<f64>,
    eta: f64,
    iterations: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_paired(f, g)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {eta}")));
    }
    if u.len() != f.nrows() || v.len() != g.nrows() {
        return Err(Error::Dimension("initial directions do not match view dimensions".into()));
    }
    check_centered(f, "view 1")?;
    check_centered(g, "view 2")?;

    for _ in 0..iterations {
        let fu = f.t().dot(&u);
        let gv = g.t().dot(&v);
        let nu = projection_norm(u.view(), f, "u")?;
        let nv = projection_norm(v.view(), g, "v")?;
        let ru = &fu - &(&gv / nv);
        let rv = &gv - &(&fu / nu);
        u.scaled_add(-eta, &f.dot(&ru));
        v.scaled_add(-eta, &g.dot(&rv));
    }
    let nu = projection_norm(u.view(), f, "u")?;
    let nv = projection_norm(v.view(), g, "v")?;
    Ok((u / nu, v / nv))
}

/// Orthonormal basis of the row space of `a`, erroring on rank deficiency.
fn row_basis(a: ArrayView2<f64>) -> Result<Matrix> {
    let gram = a.dot(&a.t());
    let eig = sym_eig(gram.view())?;
    let top = eig.values[0];
    let bottom = eig.values[eig.values.len() - 1];
    if top.is_nan() || top <= 0.0 || bottom <= 1e-12 * top {
        return Err(Error::numeric(a.dim(), "row space is rank deficient"));
    }
    let inv_sqrt = eig.reconstruct_with(|l| 1.0 / l.sqrt());
    Ok(inv_sqrt.dot(&a))
}

/// Largest principal angle (radians) between the row spaces of two `L x N`
/// matrices.
pub fn subspace_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "subspace inputs must share a shape, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let qa = row_basis(a)?;
    let qb = row_basis(b)?;
    let overlap = qa.dot(&qb.t());
    let l = overlap.nrows();
    // cosine of the largest angle is the smallest singular value of the
    // overlap; the sine is the norm of what the projection onto B misses.
    let cos = svd_rank_l(overlap.view(), l)?.sigma[l - 1].min(1.0);
    let residual = &qa - &overlap.dot(&qb);
    let sin = spectral_norm(residual.view())?.min(1.0);
    Ok(sin.atan2(cos))
}
