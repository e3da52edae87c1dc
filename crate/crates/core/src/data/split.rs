use rand::seq::SliceRandom;

use crate::data::DatasetManifest;
use crate::error::{param_err, Result};
use crate::rng::seeded;

/// Seeded shuffle followed by a two-way cut. The second partition receives
/// `floor(n · second)` items and the first takes everything else, so the
/// rounding remainder always lands in the first partition.
pub fn split_items<T: Clone>(items: &[T], fractions: (f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = fractions;
    if !(a > 0.0 && b > 0.0) || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(param_err!("split fractions must be positive and sum to 1, got ({a}, {b})"));
    }
    let n = items.len();
    let second = ((n as f64 * b) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let first = order[..n - second].iter().map(|&i| items[i].clone()).collect();
    let rest = order[n - second..].iter().map(|&i| items[i].clone()).collect();
    Ok((first, rest))
}

pub fn split(manifest: &DatasetManifest, fractions: (f64, f64), seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    manifest.split(fractions, seed)
}
