//! Benchmark fixtures.

use ndarray::Axis;
use noicca::data::{gen_synth, make_splits, SynthSpec};
use noicca::{Matrix, SplitData};

/// Synthetic two-view data with `l` correlated directions.
pub fn synth_views(d_x: usize, d_y: usize, l: usize, n: usize) -> (Matrix, Matrix) {
    let spec = SynthSpec {
        d_x,
        d_y,
        l_true: l,
        correlations: (0..l).map(|i| 0.9 - 0.8 * i as f64 / l as f64).collect(),
        n,
        seed: 7,
    };
    let (x, y, _) = gen_synth(&spec).expect("valid fixture spec");
    (x, y)
}

/// Scaled covariance of a `d`-dimensional synthetic view.
pub fn covariance(d: usize, n: usize) -> Matrix {
    let (x, _) = synth_views(d, d, 1, n);
    let mean = x.mean_axis(Axis(1)).expect("non-empty fixture");
    let c = &x - &mean.insert_axis(Axis(1));
    c.dot(&c.t())
}

/// Training-only split of synthetic data.
pub fn train_split(d_x: usize, d_y: usize, l: usize, n: usize) -> SplitData {
    let (x, y) = synth_views(d_x, d_y, l, n);
    make_splits(x.view(), y.view(), (n, 0, 0), l, 1).expect("sizes fit")
}
