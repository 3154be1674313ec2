use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::{device, Error, Result};

/// Draws a `[batch, dim]` block of i.i.d. standard normal values. With a
/// seed the draw is reproducible (ChaCha8 stream); without one it comes from
/// the thread RNG.
pub fn sample_noise(batch: usize, dim: usize, seed: Option<u64>, dtype: DType) -> Result<Tensor> {
    if batch == 0 {
        return Err(Error::InvalidArgument("noise batch must be at least 1".into()));
    }
    let n = batch * dim;
    let values: Vec<f64> = match seed {
        Some(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        None => {
            let mut rng = rand::rng();
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    Ok(Tensor::from_vec(values, (batch, dim), &device())?.to_dtype(dtype)?)
}
