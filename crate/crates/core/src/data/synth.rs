use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// `k` isotropic unit-variance Gaussian blobs in `d` dimensions, `n` points in
/// total (class `i % k` for point `i`).
///
/// Class `c` is centred at `separation` along axis `c % d`, shifted by a further
/// `separation · (c / d)` along axis 0 when there are more classes than axes, so
/// distinct centres are at least `separation` apart.
pub fn synth_blobs(
    n: usize,
    d: usize,
    k: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if k < 2 || d == 0 {
        return Err(Error::InvalidConfig(format!(
            "blobs need k >= 2 classes and d >= 1 dims, got k={k}, d={d}"
        )));
    }
    let centre = |c: usize| {
        let mut v = vec![0.0; d];
        v[c % d] += separation;
        v[0] += separation * (c / d) as f64;
        v
    };
    let centres: Vec<Vec<f64>> = (0..k).map(centre).collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c);
        for &mu in &centres[c] {
            data.push(mu + rng.standard_normal());
        }
    }
    Dataset::new(Matrix::new(n, d, data)?, labels, k)
}

/// The four XOR points with labels `[0, 1, 1, 0]`.
pub fn synth_xor() -> Dataset {
    let x =
        Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).expect("static shape");
    Dataset::new(x, vec![0, 1, 1, 0], 2).expect("static labels")
}
