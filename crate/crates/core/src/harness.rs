//! Experiment orchestration behind the `noicca` command line tool.
//!
//! Configs are line-based `key = value` files with `[section]` headers and
//! comma-separated lists:
//!
//! ```text
//! seed = 0
//! algorithm = noi          # noi | stol | cca-closed | cca-als | cca-gd
//! output = runs/noi
//!
//! [data]
//! source = synth           # synth | mnist
//! d_x = 20
//! d_y = 15
//! correlations = 0.9, 0.7, 0.5
//! n = 3000
//!
//! [model]
//! arch_x = 20, 64, 3
//! arch_y = 15, 64, 3
//!
//! [optim]
//! eta = 0.01
//! minibatch = 100
//!
//! [grid]
//! rho = 0.9, 0.99
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, ArrayView2, Axis};

use crate::cca::{closed_form, gd_rank1, Als, CcaSolution};
use crate::data::{gen_synth, load_idx, make_splits, split_halves, SplitData, SynthSpec};
use crate::dcca::{objective, train_noi, train_stol, DccaModel, EpochRecord, TrainHistory};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, inv_ridged, Matrix, Ridge};
use crate::nn::{MlpParams, OptimConfig};

/// Time constants swept by default in grid mode.
pub const RHO_GRID: [f64; 9] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.99, 0.999, 0.9999];
pub const ETA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const MU_GRID: [f64; 3] = [0.0, 0.9, 0.99];

pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const RESULT_FILE: &str = "result.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Process exit status for an error: 1 for configuration problems, 2 for
/// unreadable or malformed files, 3 for numeric failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric { .. } => 3,
        _ => 1,
    }
}

/// Parsed `key = value` file. Keys outside any section live under `""`.
#[derive(Debug, Clone, Default)]
struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        raw.sections.entry(section.clone()).or_default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {lineno}: unterminated section header")))?;
                section = name.trim().to_string();
                raw.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            let entries = raw.sections.get_mut(&section).expect("section registered");
            if entries.insert(key.clone(), (lineno, value.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {lineno}: duplicate key `{key}`")));
            }
        }
        Ok(raw)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{key} = {v}`"))),
        }
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => {
                let items: std::result::Result<Vec<T>, _> =
                    v.split(',').map(|s| s.trim().parse()).collect();
                let items = items.map_err(|_| Error::Config(format!("line {line}: cannot parse list `{key} = {v}`")))?;
                if items.is_empty() {
                    return Err(Error::Config(format!("line {line}: `{key}` is empty")));
                }
                Ok(Some(items))
            }
        }
    }

    fn finish(self) -> Result<()> {
        for (name, entries) in &self.sections {
            if !matches!(name.as_str(), "" | "data" | "model" | "optim" | "grid") {
                return Err(Error::Config(format!("unknown section [{name}]")));
            }
            if let Some((key, (line, _))) = entries.iter().next() {
                let where_ = if name.is_empty() { String::new() } else { format!(" in [{name}]") };
                return Err(Error::Config(format!("line {line}: unknown key `{key}`{where_}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Noi,
    Stol,
    CcaClosed,
    CcaAls,
    CcaGd,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "noi" => Algorithm::Noi,
            "stol" => Algorithm::Stol,
            "cca-closed" => Algorithm::CcaClosed,
            "cca-als" => Algorithm::CcaAls,
            "cca-gd" => Algorithm::CcaGd,
            other => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        })
    }
}

impl Algorithm {
    fn is_linear(self) -> bool {
        matches!(self, Algorithm::CcaClosed | Algorithm::CcaAls | Algorithm::CcaGd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Split-half MNIST. `test_images` supplies the test split when given;
    /// otherwise all three splits come from `train_images`. `limit` keeps
    /// only the first images of the training file.
    Mnist {
        train_images: PathBuf,
        test_images: Option<PathBuf>,
        limit: Option<usize>,
    },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train: usize,
    pub tune: usize,
    pub test: usize,
}

/// Hyperparameter lists for grid mode. Trials run with `rho` outermost,
/// then `minibatch`, `eta`, `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rho: Vec<f64>,
    pub minibatch: Vec<usize>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
}

impl GridSpec {
    pub fn trials(&self) -> usize {
        self.rho.len() * self.minibatch.len() * self.eta.len() * self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub data: DataConfig,
    pub arch_x: Vec<usize>,
    pub arch_y: Vec<usize>,
    pub optim: OptimConfig,
    pub grid: GridSpec,
    pub output: PathBuf,
    /// Record wall-clock seconds in `history.csv` (breaks byte-reproducibility).
    pub timing: bool,
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        ExperimentConfig::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        let seed = raw.get("", "seed")?.unwrap_or(0u64);
        let algorithm: Algorithm = raw
            .get("", "algorithm")?
            .ok_or_else(|| Error::Config("missing `algorithm`".into()))?;
        let output = raw
            .take("", "output")
            .map(|(_, v)| resolve(base, v))
            .ok_or_else(|| Error::Config("missing `output`".into()))?;
        let timing = raw.get("", "timing")?.unwrap_or(false);

        let source: String = raw.get("data", "source")?.ok_or_else(|| Error::Config("missing [data] source".into()))?;
        let data = match source.as_str() {
            "mnist" => {
                let train_images = raw
                    .take("data", "train_images")
                    .map(|(_, v)| resolve(base, v))
                    .ok_or_else(|| Error::Config("mnist source needs `train_images`".into()))?;
                let test_images = raw.take("data", "test_images").map(|(_, v)| resolve(base, v));
                DataConfig {
                    source: DataSource::Mnist {
                        train_images,
                        test_images,
                        limit: raw.get("data", "limit")?,
                    },
                    train: raw.get("data", "train")?.unwrap_or(50_000),
                    tune: raw.get("data", "tune")?.unwrap_or(10_000),
                    test: raw.get("data", "test")?.unwrap_or(10_000),
                }
            }
            "synth" => {
                let need = |v: Option<usize>, k: &str| v.ok_or_else(|| Error::Config(format!("synth source needs `{k}`")));
                let d_x = need(raw.get("data", "d_x")?, "d_x")?;
                let d_y = need(raw.get("data", "d_y")?, "d_y")?;
                let n = need(raw.get("data", "n")?, "n")?;
                let correlations: Vec<f64> = raw
                    .list("data", "correlations")?
                    .ok_or_else(|| Error::Config("synth source needs `correlations`".into()))?;
                let spec = SynthSpec {
                    d_x,
                    d_y,
                    l_true: correlations.len(),
                    correlations,
                    n,
                    seed,
                };
                spec.validate()?;
                let train = raw.get("data", "train")?.unwrap_or(n * 3 / 5);
                let tune = raw.get("data", "tune")?.unwrap_or(n / 5);
                let test = raw.get("data", "test")?.unwrap_or(n - n * 3 / 5 - n / 5);
                DataConfig {
                    source: DataSource::Synth(spec),
                    train,
                    tune,
                    test,
                }
            }
            other => return Err(Error::Config(format!("unknown data source `{other}`"))),
        };

        let arch_x: Vec<usize> = raw.list("model", "arch_x")?.ok_or_else(|| Error::Config("missing [model] arch_x".into()))?;
        let arch_y: Vec<usize> = raw.list("model", "arch_y")?.ok_or_else(|| Error::Config("missing [model] arch_y".into()))?;

        let d = OptimConfig::default();
        let optim = OptimConfig {
            eta: raw.get("optim", "eta")?.unwrap_or(d.eta),
            mu: raw.get("optim", "mu")?.unwrap_or(d.mu),
            weight_decay: raw.get("optim", "weight_decay")?.unwrap_or(d.weight_decay),
            minibatch_size: raw.get("optim", "minibatch")?.unwrap_or(d.minibatch_size),
            epochs: raw.get("optim", "epochs")?.unwrap_or(d.epochs),
            rho: raw.get("optim", "rho")?.unwrap_or(d.rho),
            eps: raw.get("optim", "eps")?.unwrap_or(d.eps),
            seed,
        };
        optim.validate()?;

        let grid = GridSpec {
            rho: raw.list("grid", "rho")?.unwrap_or_else(|| {
                if algorithm == Algorithm::Noi {
                    RHO_GRID.to_vec()
                } else {
                    vec![optim.rho]
                }
            }),
            minibatch: raw.list("grid", "minibatch")?.unwrap_or_else(|| vec![optim.minibatch_size]),
            eta: raw.list("grid", "eta")?.unwrap_or_else(|| ETA_GRID.to_vec()),
            mu: raw.list("grid", "mu")?.unwrap_or_else(|| MU_GRID.to_vec()),
        };
        raw.finish()?;

        let cfg = ExperimentConfig {
            seed,
            algorithm,
            data,
            arch_x,
            arch_y,
            optim,
            grid,
            output,
            timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let (lx, ly) = (self.arch_x.len(), self.arch_y.len());
        if lx < 2 || ly < 2 {
            return Err(Error::Config("architectures need an input and an output size".into()));
        }
        if self.arch_x[lx - 1] != self.arch_y[ly - 1] {
            return Err(Error::Config("both views must project to the same dimension".into()));
        }
        if self.algorithm.is_linear() && (lx != 2 || ly != 2) {
            return Err(Error::Config("linear CCA algorithms need single-layer architectures".into()));
        }
        if self.algorithm == Algorithm::CcaGd && self.l() != 1 {
            return Err(Error::Config("cca-gd computes a single canonical pair; set the output size to 1".into()));
        }
        if let DataSource::Synth(spec) = &self.data.source {
            if spec.d_x != self.arch_x[0] || spec.d_y != self.arch_y[0] {
                return Err(Error::Config(format!(
                    "synthetic views have {}/{} features but the architectures take {}/{}",
                    spec.d_x, spec.d_y, self.arch_x[0], self.arch_y[0]
                )));
            }
        }
        Ok(())
    }

    /// Projection dimension.
    pub fn l(&self) -> usize {
        *self.arch_x.last().expect("validated architecture")
    }

    /// Replaces every seed with `value` when it is set (e.g. from the
    /// `NOICCA_SEED` environment variable).
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("seed override `{v}` is not an unsigned integer")))?;
            self.seed = seed;
            self.optim.seed = seed;
            if let DataSource::Synth(spec) = &mut self.data.source {
                spec.seed = seed;
            }
        }
        Ok(self)
    }
}

/// Loads or generates the data described by `cfg` and splits it.
pub fn load_data(cfg: &ExperimentConfig) -> Result<SplitData> {
    let l = cfg.l();
    let d = &cfg.data;
    match &d.source {
        DataSource::Synth(spec) => {
            let (x, y, _) = gen_synth(spec)?;
            make_splits(x.view(), y.view(), (d.train, d.tune, d.test), l, cfg.seed)
        }
        DataSource::Mnist {
            train_images,
            test_images,
            limit,
        } => {
            let mut images = load_idx(train_images)?;
            if let Some(k) = *limit {
                let k = k.min(images.ncols());
                images = images.slice_move(ndarray::s![.., ..k]);
            }
            let (x, y) = split_halves(images.view())?;
            match test_images {
                None => make_splits(x.view(), y.view(), (d.train, d.tune, d.test), l, cfg.seed),
                Some(path) => {
                    let mut split = make_splits(x.view(), y.view(), (d.train, d.tune, 0), l, cfg.seed)?;
                    let test = load_idx(path)?;
                    if d.test > test.ncols() {
                        return Err(Error::Config(format!(
                            "test size {} exceeds the {} images in {}",
                            d.test,
                            test.ncols(),
                            path.display()
                        )));
                    }
                    let (tx, ty) = split_halves(test.slice(ndarray::s![.., ..d.test]))?;
                    split.test_x = tx;
                    split.test_y = ty;
                    Ok(split)
                }
            }
        }
    }
}

/// Total correlations of a model on each split (absent for splits with
/// fewer than two samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub train: Option<f64>,
    pub tune: Option<f64>,
    pub test: Option<f64>,
}

impl Evaluation {
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "train_corr = {}\ntune_corr = {}\ntest_corr = {}\n",
            f(self.train),
            f(self.tune),
            f(self.test)
        )
    }
}

pub fn evaluate(model: &DccaModel, data: &SplitData, eps: f64) -> Result<Evaluation> {
    let ridge = Ridge::Rel(eps);
    let split = |x: &Matrix, y: &Matrix| -> Result<Option<f64>> {
        if x.ncols() < 2 {
            Ok(None)
        } else {
            objective(model, x.view(), y.view(), ridge).map(Some)
        }
    };
    Ok(Evaluation {
        train: split(&data.train_x, &data.train_y)?,
        tune: split(&data.tune_x, &data.tune_y)?,
        test: split(&data.test_x, &data.test_y)?,
    })
}

/// Everything a single training run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: DccaModel,
    pub history: TrainHistory,
    pub eval: Evaluation,
}

impl RunOutcome {
    /// Writes `history.csv`, `model.bin` and `result.txt` into `dir`.
    pub fn write(&self, dir: &Path, timing: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        put(HISTORY_FILE, self.history.to_csv(timing).as_bytes())?;
        put(MODEL_FILE, &self.model.to_snapshot_bytes())?;
        put(RESULT_FILE, self.eval.to_text().as_bytes())
    }
}

/// Single-layer network computing `map^T (x - mean)`.
fn linear_net(map: ArrayView2<f64>, mean: &Array1<f64>) -> Result<MlpParams> {
    let w = map.t().to_owned();
    let b = -w.dot(mean);
    MlpParams::from_parts(vec![w], vec![b])
}

fn solution_model(sol: &CcaSolution) -> Result<DccaModel> {
    DccaModel::new(
        linear_net(sol.u_map.view(), &sol.mean_x)?,
        linear_net(sol.v_map.view(), &sol.mean_y)?,
    )
}

/// Linear map reproducing the projection `proj` (`L x N`) of centered data
/// `c` by least squares, as a `d x L` matrix.
fn regression_map(proj: ArrayView2<f64>, c: ArrayView2<f64>, ridge: Ridge) -> Result<Matrix> {
    let cov = c.dot(&c.t());
    Ok(inv_ridged(cov.view(), ridge)?.dot(&c.dot(&proj.t())))
}

fn eval_record(model: &DccaModel, data: &SplitData, epoch: usize, train_obj: Option<f64>, ridge: Ridge) -> Result<EpochRecord> {
    let tune_corr = if data.tune_x.ncols() < 2 {
        None
    } else {
        Some(objective(model, data.tune_x.view(), data.tune_y.view(), ridge)?)
    };
    Ok(EpochRecord {
        epoch,
        tune_corr,
        train_obj,
        seconds: 0.0,
    })
}

fn test_corr(model: &DccaModel, data: &SplitData, ridge: Ridge) -> Result<Option<f64>> {
    if data.test_x.ncols() < 2 {
        return Ok(None);
    }
    objective(model, data.test_x.view(), data.test_y.view(), ridge).map(Some)
}

/// Linear CCA fitted on the training split. ALS records one row per sweep
/// (`epochs` sweeps); gradient descent records its start and end.
fn train_linear(cfg: &ExperimentConfig, data: &SplitData) -> Result<(DccaModel, TrainHistory)> {
    let ridge = Ridge::Rel(cfg.optim.eps);
    let l = cfg.l();
    let mut history = TrainHistory::default();
    let model = match cfg.algorithm {
        Algorithm::CcaClosed => {
            let sol = closed_form(data.train_x.view(), data.train_y.view(), l, ridge)?;
            let model = solution_model(&sol)?;
            history.records.push(eval_record(&model, data, 0, Some(sol.total), ridge)?);
            model
        }
        Algorithm::CcaAls => {
            let (fc, mx) = center_rows(data.train_x.view());
            let (gc, my) = center_rows(data.train_y.view());
            let to_model = |a: ArrayView2<f64>, b: ArrayView2<f64>| -> Result<DccaModel> {
                DccaModel::new(
                    linear_net(regression_map(a, fc.view(), ridge)?.view(), &mx)?,
                    linear_net(regression_map(b, gc.view(), ridge)?.view(), &my)?,
                )
            };
            let mut solver = Als::new(fc.view(), gc.view(), l, ridge, cfg.seed)?;
            let a0 = solver.state().a_proj.clone();
            // before the first sweep only the view-1 projection exists
            let init = to_model(a0.view(), gc.slice(ndarray::s![..l, ..]))?;
            history.records.push(eval_record(&init, data, 0, None, ridge)?);
            let mut model = init;
            for epoch in 1..=cfg.optim.epochs {
                let state = solver.step()?;
                model = to_model(state.a_proj.view(), state.b_proj.view())?;
                let train = crate::cca::total_correlation(state.a_proj.view(), state.b_proj.view(), ridge)?;
                history.records.push(eval_record(&model, data, epoch, Some(train), ridge)?);
            }
            model
        }
        Algorithm::CcaGd => {
            let (fc, mx) = center_rows(data.train_x.view());
            let (gc, my) = center_rows(data.train_y.view());
            let pair_model = |u: Array1<f64>, v: Array1<f64>| -> Result<DccaModel> {
                DccaModel::new(
                    linear_net(u.insert_axis(Axis(1)).view(), &mx)?,
                    linear_net(v.insert_axis(Axis(1)).view(), &my)?,
                )
            };
            let (u0, v0) = gd_rank1(fc.view(), gc.view(), cfg.optim.eta, 0, cfg.seed)?;
            history.records.push(eval_record(&pair_model(u0, v0)?, data, 0, None, ridge)?);
            let (u, v) = gd_rank1(fc.view(), gc.view(), cfg.optim.eta, cfg.optim.epochs, cfg.seed)?;
            let model = pair_model(u, v)?;
            if cfg.optim.epochs > 0 {
                history.records.push(eval_record(&model, data, cfg.optim.epochs, None, ridge)?);
            }
            model
        }
        Algorithm::Noi | Algorithm::Stol => unreachable!("not a linear solver"),
    };
    history.test_corr = test_corr(&model, data, ridge)?;
    Ok((model, history))
}

/// Trains according to `cfg` on already-loaded data.
pub fn run_on(cfg: &ExperimentConfig, data: &SplitData) -> Result<RunOutcome> {
    let (model, history) = match cfg.algorithm {
        Algorithm::Noi | Algorithm::Stol => {
            let init = DccaModel::init(&cfg.arch_x, &cfg.arch_y, cfg.seed)?;
            if cfg.algorithm == Algorithm::Noi {
                train_noi(init, data, &cfg.optim)?
            } else {
                train_stol(init, data, &cfg.optim)?
            }
        }
        _ => train_linear(cfg, data)?,
    };
    let eval = evaluate(&model, data, cfg.optim.eps)?;
    Ok(RunOutcome { model, history, eval })
}

/// `noicca run`: trains and writes the artifacts into `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let data = load_data(cfg)?;
    let outcome = run_on(cfg, &data)?;
    outcome.write(&cfg.output, cfg.timing)?;
    Ok(outcome)
}

/// One grid point and its final tuning correlation (absent when the trial
/// failed numerically or there is no tuning split).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub rho: f64,
    pub minibatch: usize,
    pub eta: f64,
    pub mu: f64,
    pub tune_corr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub trials: Vec<Trial>,
    pub best: usize,
    pub best_config: ExperimentConfig,
    pub best_run: RunOutcome,
}

pub fn sweep_csv(trials: &[Trial]) -> String {
    let mut out = String::from("trial,rho,minibatch,eta,mu,tune_corr\n");
    for (i, t) in trials.iter().enumerate() {
        let corr = t.tune_corr.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{i},{},{},{},{},{corr}", t.rho, t.minibatch, t.eta, t.mu).expect("writing to a String");
    }
    out
}

/// `noicca grid`: runs every grid point, keeps the one with the highest
/// final tuning correlation (earliest wins ties), and writes its artifacts
/// plus `sweep.csv` into `cfg.output`. Trials that fail numerically are
/// recorded with an empty correlation.
pub fn grid(cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let g = &cfg.grid;
    if g.trials() == 0 {
        return Err(Error::Config("grid lists must be nonempty".into()));
    }
    let data = load_data(cfg)?;
    let mut trials = Vec::with_capacity(g.trials());
    let mut best: Option<(usize, f64, ExperimentConfig, RunOutcome)> = None;
    let mut last_numeric = None;
    for &rho in &g.rho {
        for &minibatch in &g.minibatch {
            for &eta in &g.eta {
                for &mu in &g.mu {
                    let mut trial_cfg = cfg.clone();
                    trial_cfg.optim = OptimConfig {
                        rho,
                        minibatch_size: minibatch,
                        eta,
                        mu,
                        ..cfg.optim.clone()
                    };
                    trial_cfg.optim.validate()?;
                    let index = trials.len();
                    let tune_corr = match run_on(&trial_cfg, &data) {
                        Ok(outcome) => {
                            let score = outcome.history.final_tune();
                            let key = score.unwrap_or(f64::NEG_INFINITY);
                            if best.as_ref().is_none_or(|b| key > b.1) {
                                best = Some((index, key, trial_cfg, outcome));
                            }
                            score
                        }
                        Err(e @ Error::Numeric { .. }) => {
                            last_numeric = Some(e);
                            None
                        }
                        Err(e) => return Err(e),
                    };
                    trials.push(Trial {
                        rho,
                        minibatch,
                        eta,
                        mu,
                        tune_corr,
                    });
                }
            }
        }
    }
    let Some((best, _, best_config, best_run)) = best else {
        return Err(last_numeric.expect("every trial failed numerically"));
    };
    best_run.write(&cfg.output, cfg.timing)?;
    let p = cfg.output.join(SWEEP_FILE);
    fs::write(&p, sweep_csv(&trials)).map_err(|e| Error::io(p, e))?;
    Ok(GridOutcome {
        trials,
        best,
        best_config,
        best_run,
    })
}

/// `noicca eval`: correlations of a saved model on the config's splits.
pub fn eval(model_path: &Path, cfg: &ExperimentConfig) -> Result<Evaluation> {
    let file = fs::File::open(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = DccaModel::read_snapshot(&mut std::io::BufReader::new(file))?;
    let data = load_data(cfg)?;
    evaluate(&model, &data, cfg.optim.eps)
}
