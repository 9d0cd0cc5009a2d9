//! Dense matrices, the seeded generator, and weight initializers.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

use crate::error::{Error, Result};

/// He normal initializer: i.i.d. `N(0, 2 / fan_in)` with `fan_in = rows`.
pub fn he_normal(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(format!(
            "he_normal needs a non-empty shape, got {rows}x{cols}"
        )));
    }
    let std = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| std * rng.standard_normal())
        .collect();
    Matrix::new(rows, cols, data)
}
