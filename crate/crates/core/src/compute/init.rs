use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ComputeError, Matrix};

/// Fills a `rows × cols` matrix uniformly in `[−a, a]` with
/// `a = √(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix, ComputeError> {
    if rows == 0 || cols == 0 {
        return Err(ComputeError::InvalidArgument(format!(
            "xavier init needs a non-empty shape, got {rows}x{cols}"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Ok(Matrix::from_shape_simple_fn((rows, cols), || dist.sample(rng)))
}

/// Seeded Xavier init. A 1-D shape `[n]` becomes a `1 × n` row whose fan-in
/// and fan-out are both `n`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Matrix, ComputeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *shape {
        [n] => {
            if n == 0 {
                return Err(ComputeError::InvalidArgument(
                    "xavier init needs a non-empty shape".into(),
                ));
            }
            let bound = (6.0 / (2 * n) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            Ok(Matrix::from_shape_simple_fn((1, n), || dist.sample(&mut rng)))
        }
        [rows, cols] => xavier_uniform(rows, cols, &mut rng),
        _ => Err(ComputeError::InvalidArgument(format!(
            "xavier init supports 1-D and 2-D shapes, got {shape:?}"
        ))),
    }
}
