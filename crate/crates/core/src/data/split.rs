use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Generator behind every shuffle in this crate: ChaCha with 8 rounds,
/// seeded through `SeedableRng::seed_from_u64`. Both are specified
/// bit-for-bit by their crates, so splits are portable across platforms.
pub type SplitRng = rand_chacha::ChaCha8Rng;

/// Reproduces a 56000/14000 split on a 70000-image corpus.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train_fraction: f64,
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

/// Uniform integer in `0..bound` (Lemire's multiply-shift with rejection).
fn below(rng: &mut SplitRng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = rng.next_u64() as u128 * bound as u128;
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// In-place Fisher–Yates shuffle driven by [`SplitRng`].
pub fn shuffle<T>(items: &mut [T], rng: &mut SplitRng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Shuffles `ids` with `seed` and assigns the first `⌊n·train_fraction⌋` to
/// the training set.
pub fn make_split(ids: &[String], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a corpus of {} item(s)",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    let mut rng = SplitRng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999….
    let n_train = ((ids.len() as f64 * train_fraction) + 1e-9).floor() as usize;
    let test_ids = order.split_off(n_train);
    Ok(DatasetSplit {
        seed,
        train_fraction,
        train_ids: order,
        test_ids,
    })
}

pub fn write_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(split)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
