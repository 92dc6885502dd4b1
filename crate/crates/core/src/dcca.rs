//! Deep CCA: the total-correlation objective and its two stochastic
//! optimizers.
//!
//! * STOL computes the exact gradient of the trace-norm objective on each
//!   (necessarily large) minibatch.
//! * NOI embeds minibatch regression steps inside orthogonal iterations.
//!   Running covariance estimates with time constant `rho` whiten the
//!   regression targets, so small minibatches suffice.

use std::io::{Read, Write};
use std::time::Instant;

use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cca::{total_correlation, WhitenedCross};
use crate::data::{minibatches, SplitData};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, inv_sqrt_ridged, spectral_norm, svd_rank_l, symmetrize, Matrix, Ridge};
use crate::nn::{Gradients, MlpParams, OptimConfig};

/// The two view networks. Each ends in a linear layer of width `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DccaModel {
    pub net_f: MlpParams,
    pub net_g: MlpParams,
}

impl DccaModel {
    pub fn new(net_f: MlpParams, net_g: MlpParams) -> Result<Self> {
        if net_f.output_dim() != net_g.output_dim() {
            return Err(Error::Config(format!(
                "view networks project to {} and {} dimensions",
                net_f.output_dim(),
                net_g.output_dim()
            )));
        }
        Ok(DccaModel { net_f, net_g })
    }

    /// Both networks initialized from `seed` (view 2 uses `seed + 1`).
    pub fn init(arch_x: &[usize], arch_y: &[usize], seed: u64) -> Result<Self> {
        DccaModel::new(
            MlpParams::init(arch_x, seed)?,
            MlpParams::init(arch_y, seed.wrapping_add(1))?,
        )
    }

    pub fn l(&self) -> usize {
        self.net_f.output_dim()
    }

    pub fn project(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Matrix, Matrix)> {
        Ok((self.net_f.predict(x)?, self.net_g.predict(y)?))
    }

    /// View-1 snapshot followed by the view-2 snapshot.
    pub fn write_snapshot(&self, out: &mut impl Write) -> std::io::Result<()> {
        self.net_f.write_snapshot(out)?;
        self.net_g.write_snapshot(out)
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_snapshot(input: &mut impl Read) -> Result<Self> {
        let net_f = MlpParams::read_snapshot(input)?;
        let net_g = MlpParams::read_snapshot(input)?;
        DccaModel::new(net_f, net_g)
    }
}

/// Total canonical correlation between the two network outputs.
pub fn objective(model: &DccaModel, x: ArrayView2<f64>, y: ArrayView2<f64>, ridge: Ridge) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "views have {} and {} samples",
            x.ncols(),
            y.ncols()
        )));
    }
    let (f, g) = model.project(x, y)?;
    total_correlation(f.view(), g.view(), ridge)
}

/// Ascent direction of the total correlation with respect to each view's
/// minibatch outputs.
#[derive(Debug, Clone)]
pub struct StolGradient {
    pub d_f: Matrix,
    pub d_g: Matrix,
    /// Sum of the top-`L` singular values at the evaluation point.
    pub total: f64,
}

/// Gradient of the sum of the top-`l` singular values of the ridged,
/// whitened cross-covariance with respect to the (centered) minibatch
/// outputs `f_b` and `g_b`.
pub fn stol_gradient(f_b: ArrayView2<f64>, g_b: ArrayView2<f64>, l: usize, ridge: Ridge) -> Result<StolGradient> {
    let n = f_b.ncols();
    if g_b.ncols() != n {
        return Err(Error::Dimension(format!("views have {n} and {} samples", g_b.ncols())));
    }
    if n < 2 {
        return Err(Error::Data(format!("STOL gradient needs at least 2 samples, got {n}")));
    }
    let (fc, _) = center_rows(f_b);
    let (gc, _) = center_rows(g_b);
    let w = WhitenedCross::from_centered(fc.view(), gc.view(), ridge)?;
    let svd = svd_rank_l(w.cross.view(), l)?;

    let left = w.inv_sqrt_ff.dot(&svd.u);
    let right = w.inv_sqrt_gg.dot(&svd.v);
    let delta_ff = (&left * &svd.sigma).dot(&left.t()) * -0.5;
    let delta_gg = (&right * &svd.sigma).dot(&right.t()) * -0.5;
    let delta_fg = left.dot(&right.t());

    let d_f = delta_ff.dot(&fc) * 2.0 + delta_fg.dot(&gc);
    let d_g = delta_gg.dot(&gc) * 2.0 + delta_fg.t().dot(&fc);
    Ok(StolGradient {
        d_f,
        d_g,
        total: svd.sigma.sum(),
    })
}

/// Running estimate of the mean and scaled covariance of one view's network
/// outputs.
#[derive(Debug, Clone)]
pub struct CovTracker {
    /// `L x L`, scaled by the training set size.
    pub cov: Matrix,
    pub mean: Array1<f64>,
    pub rho: f64,
    pub n_total: usize,
    pub initialized: bool,
}

impl CovTracker {
    pub fn new(l: usize, rho: f64, n_total: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
        }
        if n_total == 0 || l == 0 {
            return Err(Error::Config("tracker needs positive dimension and sample count".into()));
        }
        Ok(CovTracker {
            cov: Matrix::zeros((l, l)),
            mean: Array1::zeros(l),
            rho,
            n_total,
            initialized: false,
        })
    }

    /// Folds in a minibatch of outputs (`L x n`) and returns the batch
    /// centered by the updated mean. The first call replaces the estimate
    /// outright.
    pub fn update(&mut self, batch: ArrayView2<f64>) -> Result<Matrix> {
        let n = batch.ncols();
        if n == 0 {
            return Err(Error::Data("empty minibatch".into()));
        }
        if batch.nrows() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "tracker of dimension {} fed a batch with {} rows",
                self.mean.len(),
                batch.nrows()
            )));
        }
        let batch_mean = batch.mean_axis(Axis(1)).expect("non-empty batch");
        let (keep, fresh) = if self.initialized {
            (self.rho, 1.0 - self.rho)
        } else {
            (0.0, 1.0)
        };
        self.mean = &self.mean * keep + &batch_mean * fresh;
        let centered = &batch - &self.mean.view().insert_axis(Axis(1));
        let scale = self.n_total as f64 / n as f64;
        let batch_cov = centered.dot(&centered.t()) * scale;
        self.cov = symmetrize((&self.cov * keep + &batch_cov * fresh).view());
        self.initialized = true;
        Ok(centered)
    }

    /// `(cov + ridge)^{-1/2}`.
    pub fn whitener(&self, ridge: Ridge) -> Result<Matrix> {
        if !self.initialized {
            return Err(Error::Usage("covariance tracker used before its first update".into()));
        }
        inv_sqrt_ridged(self.cov.view(), ridge)
    }
}

/// Functional form of [`CovTracker::update`].
pub fn cov_update(mut tracker: CovTracker, batch: ArrayView2<f64>) -> Result<CovTracker> {
    tracker.update(batch)?;
    Ok(tracker)
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Total correlation on the tuning split (absent when the split is empty).
    pub tune_corr: Option<f64>,
    /// Mean minibatch objective over the epoch (absent for epoch 0).
    pub train_obj: Option<f64>,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

/// Per-epoch learning curve plus the final test correlation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub test_corr: Option<f64>,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn final_tune(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.tune_corr)
    }

    /// CSV with header `epoch,tune_corr,train_obj,seconds` and a closing
    /// `test,<value>,,` line. Timings are left blank unless `with_timing`,
    /// which keeps the file byte-reproducible.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("epoch,tune_corr,train_obj,seconds\n");
        for r in &self.records {
            let secs = if with_timing { r.seconds.to_string() } else { String::new() };
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                opt_field(r.tune_corr),
                opt_field(r.train_obj),
                secs
            ));
        }
        out.push_str(&format!("test,{},,\n", opt_field(self.test_corr)));
        out
    }
}

fn eval_split(model: &DccaModel, x: &Matrix, y: &Matrix, ridge: Ridge) -> Result<Option<f64>> {
    if x.ncols() < 2 {
        return Ok(None);
    }
    objective(model, x.view(), y.view(), ridge).map(Some)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_training(model: &DccaModel, data: &SplitData, cfg: &OptimConfig) -> Result<()> {
    cfg.validate()?;
    let (dx, dy) = data.dims();
    if model.net_f.input_dim() != dx || model.net_g.input_dim() != dy {
        return Err(Error::Dimension(format!(
            "networks take {}/{} inputs but data has {dx}/{dy} features",
            model.net_f.input_dim(),
            model.net_g.input_dim()
        )));
    }
    if data.train_y.ncols() != data.n_train() || data.n_train() < 2 {
        return Err(Error::Data("training split needs at least 2 paired samples".into()));
    }
    if cfg.minibatch_size > data.n_train() {
        return Err(Error::Config(format!(
            "minibatch size {} exceeds the {} training samples",
            cfg.minibatch_size,
            data.n_train()
        )));
    }
    Ok(())
}

/// Shared epoch loop: shuffles, hands each minibatch to `step`, and
/// evaluates the tuning split after every epoch (and once before training).
fn run_epochs(
    mut model: DccaModel,
    data: &SplitData,
    cfg: &OptimConfig,
    mut step: impl FnMut(&mut DccaModel, &[usize]) -> Result<Option<f64>>,
) -> Result<(DccaModel, TrainHistory)> {
    let ridge = Ridge::Rel(cfg.eps);
    let start = Instant::now();
    let mut history = TrainHistory::default();
    history.records.push(EpochRecord {
        epoch: 0,
        tune_corr: eval_split(&model, &data.tune_x, &data.tune_y, ridge)?,
        train_obj: None,
        seconds: start.elapsed().as_secs_f64(),
    });
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in minibatches(data.n_train(), cfg.minibatch_size, epoch_seed(cfg.seed, epoch))? {
            if let Some(v) = step(&mut model, &batch)? {
                sum += v;
                count += 1;
            }
        }
        history.records.push(EpochRecord {
            epoch,
            tune_corr: eval_split(&model, &data.tune_x, &data.tune_y, ridge)?,
            train_obj: (count > 0).then(|| sum / count as f64),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    history.test_corr = eval_split(&model, &data.test_x, &data.test_y, ridge)?;
    Ok((model, history))
}

/// STOL: momentum SGD on `-objective` using the exact minibatch gradient.
/// With `minibatch_size = N` this is the full-batch baseline. Minibatches
/// with fewer than two samples carry no covariance information and are
/// skipped.
pub fn train_stol(model: DccaModel, data: &SplitData, cfg: &OptimConfig) -> Result<(DccaModel, TrainHistory)> {
    check_training(&model, data, cfg)?;
    let ridge = Ridge::Rel(cfg.eps);
    let l = model.l();
    let mut vel_f = Gradients::zeros_like(&model.net_f);
    let mut vel_g = Gradients::zeros_like(&model.net_g);
    run_epochs(model, data, cfg, |m, idx| {
        if idx.len() < 2 {
            return Ok(None);
        }
        let xb = data.train_x.select(Axis(1), idx);
        let yb = data.train_y.select(Axis(1), idx);
        let (f, cache_f) = m.net_f.forward(xb.view())?;
        let (g, cache_g) = m.net_g.forward(yb.view())?;
        let grad = stol_gradient(f.view(), g.view(), l, ridge)?;
        // backward averages over the batch; scale back up so the step
        // follows the gradient of -objective itself
        let batch = idx.len() as f64;
        let gf = m.net_f.backward(&cache_f, (&grad.d_f * -batch).view())?;
        let gg = m.net_g.backward(&cache_g, (&grad.d_g * -batch).view())?;
        m.net_f.sgd_step(&gf, &mut vel_f, cfg)?;
        m.net_g.sgd_step(&gg, &mut vel_g, cfg)?;
        Ok(Some(grad.total))
    })
}

/// What one NOI step computed.
#[derive(Debug, Clone)]
pub struct NoiStep {
    /// Whitened view-2 outputs used as the view-1 regression target.
    pub target_f: Matrix,
    /// Whitened view-1 outputs used as the view-2 regression target.
    pub target_g: Matrix,
    /// Minibatch mean squared regression errors before the update.
    pub loss_f: f64,
    pub loss_g: f64,
}

/// Optimizer state of nonlinear orthogonal iterations: the two covariance
/// trackers and the momentum buffers.
#[derive(Debug, Clone)]
pub struct NoiState {
    pub tracker_f: CovTracker,
    pub tracker_g: CovTracker,
    vel_f: Gradients,
    vel_g: Gradients,
    ridge: Ridge,
}

impl NoiState {
    /// Initializes both trackers from the outputs on `(x0, y0)`.
    pub fn new(
        model: &DccaModel,
        x0: ArrayView2<f64>,
        y0: ArrayView2<f64>,
        n_total: usize,
        cfg: &OptimConfig,
    ) -> Result<Self> {
        let l = model.l();
        let mut tracker_f = CovTracker::new(l, cfg.rho, n_total)?;
        let mut tracker_g = CovTracker::new(l, cfg.rho, n_total)?;
        let (f, g) = model.project(x0, y0)?;
        tracker_f.update(f.view())?;
        tracker_g.update(g.view())?;
        Ok(NoiState {
            tracker_f,
            tracker_g,
            vel_f: Gradients::zeros_like(&model.net_f),
            vel_g: Gradients::zeros_like(&model.net_g),
            ridge: Ridge::Rel(cfg.eps),
        })
    }

    /// Whitened regression targets for a minibatch, after folding its
    /// outputs into the trackers. Returns `(target_f, target_g)`.
    pub fn targets(&mut self, f: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<(Matrix, Matrix)> {
        let fc = self.tracker_f.update(f)?;
        let gc = self.tracker_g.update(g)?;
        let target_f = self.tracker_g.whitener(self.ridge)?.dot(&gc);
        let target_g = self.tracker_f.whitener(self.ridge)?.dot(&fc);
        Ok((target_f, target_g))
    }

    /// One NOI iteration on the minibatch `(xb, yb)`. Both gradients are
    /// taken at the pre-update parameters; targets are constants.
    pub fn step(
        &mut self,
        model: &mut DccaModel,
        xb: ArrayView2<f64>,
        yb: ArrayView2<f64>,
        cfg: &OptimConfig,
    ) -> Result<NoiStep> {
        let (f, cache_f) = model.net_f.forward(xb)?;
        let (g, cache_g) = model.net_g.forward(yb)?;
        let (target_f, target_g) = self.targets(f.view(), g.view())?;

        let resid_f = &f - &target_f;
        let resid_g = &g - &target_g;
        let n = xb.ncols() as f64;
        let loss_f = resid_f.iter().map(|v| v * v).sum::<f64>() / n;
        let loss_g = resid_g.iter().map(|v| v * v).sum::<f64>() / n;

        let grad_f = model.net_f.backward(&cache_f, (resid_f * 2.0).view())?;
        let grad_g = model.net_g.backward(&cache_g, (resid_g * 2.0).view())?;
        model.net_f.sgd_step(&grad_f, &mut self.vel_f, cfg)?;
        model.net_g.sgd_step(&grad_g, &mut self.vel_g, cfg)?;
        Ok(NoiStep {
            target_f,
            target_g,
            loss_f,
            loss_g,
        })
    }
}

/// Nonlinear orthogonal iterations. The trackers are initialized from a
/// random first minibatch, then every step regresses each view onto the
/// other view's adaptively whitened outputs. The trained outputs need not
/// be whitened; evaluation always goes through a final linear CCA.
pub fn train_noi(model: DccaModel, data: &SplitData, cfg: &OptimConfig) -> Result<(DccaModel, TrainHistory)> {
    check_training(&model, data, cfg)?;
    let n_total = data.n_train();
    let mut init_batch: Vec<usize> = (0..n_total).collect();
    init_batch.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, 0)));
    init_batch.truncate(cfg.minibatch_size);
    let x0 = data.train_x.select(Axis(1), &init_batch);
    let y0 = data.train_y.select(Axis(1), &init_batch);
    let mut state = NoiState::new(&model, x0.view(), y0.view(), n_total, cfg)?;

    run_epochs(model, data, cfg, |m, idx| {
        let xb = data.train_x.select(Axis(1), idx);
        let yb = data.train_y.select(Axis(1), idx);
        let s = state.step(m, xb.view(), yb.view(), cfg)?;
        Ok(Some(s.loss_f + s.loss_g))
    })
}

/// Mean spectral-norm error of the minibatch whitened cross-covariance
/// against the full-data one, for each minibatch size in `n_list`.
pub fn estimator_error_scaling(
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
    l: usize,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let ridge = Ridge::Rel(1e-10);
    let n_total = f.ncols();
    if g.ncols() != n_total {
        return Err(Error::Dimension(format!("views have {n_total} and {} samples", g.ncols())));
    }
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let (fc, _) = center_rows(f);
    let (gc, _) = center_rows(g);
    let full = WhitenedCross::from_centered(fc.view(), gc.view(), ridge)?.cross;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n_total).collect();
    let mut table = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n < l + 1 || n > n_total {
            return Err(Error::Data(format!(
                "minibatch size {n} must lie in {}..={n_total}",
                l + 1
            )));
        }
        let mut total = 0.0;
        for _ in 0..trials {
            perm.shuffle(&mut rng);
            let idx = &perm[..n];
            let (fb, _) = center_rows(f.select(Axis(1), idx).view());
            let (gb, _) = center_rows(g.select(Axis(1), idx).view());
            let est = WhitenedCross::from_centered(fb.view(), gb.view(), ridge)?.cross;
            total += spectral_norm((&est - &full).view())?;
        }
        table.push((n, total / trials as f64));
    }
    Ok(table)
}
