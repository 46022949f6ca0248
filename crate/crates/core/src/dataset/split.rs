use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Rollout indices per split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle of `0..n` cut into train/val/test at rollout granularity.
/// Train and val sizes are rounded, test takes the remainder, and each part
/// keeps at least one rollout.
pub fn split_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split, DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(DatasetError::BadRatios(ratios));
    }
    if n < 3 {
        return Err(DatasetError::TooFewRollouts { n, parts: 3 });
    }
    let train = (n as f64 * ratios[0]).round() as usize;
    let val = (n as f64 * ratios[1]).round() as usize;
    let mut sizes = [train.min(n), val.min(n - train.min(n)), 0];
    sizes[2] = n - sizes[0] - sizes[1];
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..3).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap();
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(sizes[0] + sizes[1]);
    let val = idx.split_off(sizes[0]);
    Ok(Split { train: idx, val, test })
}
