//! Dataset preparation: IDX image files, split-half views, synthetic data
//! with known canonical structure, train/tune/test splits and minibatching.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, random_orthonormal, Matrix};

/// Magic number of an unsigned-byte, rank-3 IDX file.
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

const IDX_HEADER_LEN: usize = 16;
const IMAGE_SIDE: usize = 28;
const HALF_SIDE: usize = IMAGE_SIDE / 2;

/// Paired views split into training, tuning and test sets. Views hold one
/// sample per column.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_x: Matrix,
    pub train_y: Matrix,
    pub tune_x: Matrix,
    pub tune_y: Matrix,
    pub test_x: Matrix,
    pub test_y: Matrix,
    /// Target projection dimension.
    pub l: usize,
}

impl SplitData {
    pub fn n_train(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.train_x.nrows(), self.train_y.nrows())
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            msg: "file truncated inside header".into(),
        })
}

/// Decodes an IDX image file held in memory. Gzip-compressed input is
/// detected from its two-byte header and inflated first. Pixels are scaled
/// to `[0, 1]`; column `i` is image `i` flattened row-major.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut raw).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("corrupt gzip stream: {e}"),
        })?;
        return parse_idx_images(&raw);
    }

    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("expected image magic {IDX_IMAGE_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = IDX_HEADER_LEN + count * pixels;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("file truncated: {count} images of {rows}x{cols} need {expected} bytes"),
        });
    }
    if pixels == 0 || count == 0 {
        return Err(Error::Format {
            offset: 4,
            msg: "image file declares no pixels".into(),
        });
    }

    let body = &bytes[IDX_HEADER_LEN..expected];
    let by_image = Array2::from_shape_fn((count, pixels), |(i, p)| f64::from(body[i * pixels + p]) / 255.0);
    Ok(by_image.reversed_axes().as_standard_layout().into_owned())
}

/// Reads an IDX image file (optionally gzipped) from disk.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

/// Encodes raw pixel bytes as an uncompressed IDX image file.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Dimension(format!(
            "{} pixel bytes for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(IDX_HEADER_LEN + pixels.len());
    for v in [IDX_IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Splits 28x28 images (one per column) into left and right 28x14 halves,
/// each flattened row-major to 392 features.
pub fn split_halves(images: ArrayView2<f64>) -> Result<(Matrix, Matrix)> {
    if images.nrows() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::Dimension(format!(
            "expected {} pixel rows, got {}",
            IMAGE_SIDE * IMAGE_SIDE,
            images.nrows()
        )));
    }
    let half = |offset: usize| -> Vec<usize> {
        (0..IMAGE_SIDE)
            .flat_map(|r| (0..HALF_SIDE).map(move |c| r * IMAGE_SIDE + offset + c))
            .collect()
    };
    let left = images.select(Axis(0), &half(0));
    let right = images.select(Axis(0), &half(HALF_SIDE));
    Ok((left, right))
}

/// Seeded permutation of the samples, then contiguous train/tune/test
/// assignment.
pub fn make_splits(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sizes: (usize, usize, usize),
    l: usize,
    seed: u64,
) -> Result<SplitData> {
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::Dimension(format!("views have {n} and {} samples", y.ncols())));
    }
    let (tr, tu, te) = sizes;
    if tr + tu + te > n {
        return Err(Error::Config(format!(
            "split sizes {tr}+{tu}+{te} exceed the {n} available samples"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = perm.split_at(tr);
    let (tune, rest) = rest.split_at(tu);
    let test = &rest[..te];
    Ok(SplitData {
        train_x: x.select(Axis(1), train),
        train_y: y.select(Axis(1), train),
        tune_x: x.select(Axis(1), tune),
        tune_y: y.select(Axis(1), tune),
        test_x: x.select(Axis(1), test),
        test_y: y.select(Axis(1), test),
        l,
    })
}

/// Shuffled partition of `0..n_samples` into consecutive chunks of size `n`
/// (the last chunk may be smaller).
pub fn minibatches(n_samples: usize, n: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n > n_samples {
        return Err(Error::Config(format!(
            "minibatch size {n} must lie in 1..={n_samples}"
        )));
    }
    let mut perm: Vec<usize> = (0..n_samples).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(perm.chunks(n).map(<[usize]>::to_vec).collect())
}

/// Parameters of a synthetic two-view dataset with known population
/// canonical correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d_x: usize,
    pub d_y: usize,
    pub l_true: usize,
    /// Descending, each in `(0, 1]`, length `l_true`.
    pub correlations: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l_true == 0 || self.l_true > self.d_x.min(self.d_y) {
            return Err(Error::Config(format!(
                "l_true = {} must lie in 1..={}",
                self.l_true,
                self.d_x.min(self.d_y)
            )));
        }
        if self.correlations.len() != self.l_true {
            return Err(Error::Config(format!(
                "{} correlations given for l_true = {}",
                self.correlations.len(),
                self.l_true
            )));
        }
        if self.correlations.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::Config("correlations must lie in (0, 1]".into()));
        }
        if self.correlations.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config("correlations must be in descending order".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("synthetic sample count must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded well-conditioned full-rank `d x d` mixing map: a random rotation
/// times a diagonal with entries spread over `[1, 2]` in shuffled order.
fn mixing_map(d: usize, seed: u64) -> Result<Matrix> {
    let q = random_orthonormal(d, d, seed)?;
    let mut scales: Vec<f64> = (0..d)
        .map(|i| if d == 1 { 1.0 } else { 1.0 + i as f64 / (d - 1) as f64 })
        .collect();
    scales.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(q * &ndarray::Array1::from(scales))
}

/// Draws `(X, Y)` whose population canonical correlations are
/// `spec.correlations` (and zero beyond `l_true`). Returns the population
/// total correlation alongside the sample.
pub fn gen_synth(spec: &SynthSpec) -> Result<(Matrix, Matrix, f64)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let mut normals = |rows: usize| -> Matrix {
        Array2::from_shape_simple_fn((rows, n), || StandardNormal.sample(&mut rng))
    };
    let shared = normals(spec.l_true);
    let mut sx = normals(spec.d_x);
    let mut sy = normals(spec.d_y);
    for (j, &c) in spec.correlations.iter().enumerate() {
        let (signal, noise) = (c.sqrt(), (1.0 - c).sqrt());
        for s in [&mut sx, &mut sy] {
            let mut row = s.row_mut(j);
            row *= noise;
            row.scaled_add(signal, &shared.row(j));
        }
    }
    let ax = mixing_map(spec.d_x, spec.seed.wrapping_add(1))?;
    let ay = mixing_map(spec.d_y, spec.seed.wrapping_add(2))?;
    let total = spec.correlations.iter().sum();
    Ok((ax.dot(&sx), ay.dot(&sy), total))
}

/// Centered views whose *sample* canonical correlations are exactly
/// `sigmas` (padded with zeros), for convergence tests with an engineered
/// spectrum. Needs `n > d_x + d_y`.
pub fn exact_spectrum_pair(
    d_x: usize,
    d_y: usize,
    sigmas: &[f64],
    n: usize,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    if sigmas.len() > d_x.min(d_y) {
        return Err(Error::Config(format!(
            "{} correlations do not fit views of dimension {d_x} and {d_y}",
            sigmas.len()
        )));
    }
    if sigmas.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::Config("correlations must lie in [0, 1]".into()));
    }
    if n <= d_x + d_y {
        return Err(Error::Data(format!("need more than {} samples, got {n}", d_x + d_y)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Matrix = Array2::from_shape_simple_fn((n, d_x + d_y), || StandardNormal.sample(&mut rng));
    // columns orthogonal to the all-ones vector give centered rows below
    let means = basis.mean_axis(Axis(0)).expect("non-empty");
    basis -= &means;
    orthonormalize_columns(&mut basis)?;

    let fw = basis.slice(ndarray::s![.., ..d_x]).t().to_owned();
    let mut gw = basis.slice(ndarray::s![.., d_x..]).t().to_owned();
    for (j, &s) in sigmas.iter().enumerate() {
        let mut row = gw.row_mut(j);
        row *= (1.0 - s * s).sqrt();
        row.scaled_add(s, &fw.row(j));
    }

    let mix = |d: usize, offset: u64| -> Result<Matrix> {
        let left = mixing_map(d, seed.wrapping_add(offset))?;
        let right = random_orthonormal(d, d, seed.wrapping_add(offset + 1))?;
        Ok(left.dot(&right.t()))
    };
    Ok((mix(d_x, 10)?.dot(&fw), mix(d_y, 20)?.dot(&gw)))
}
