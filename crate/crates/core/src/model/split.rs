use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;

pub const DEFAULT_TEST_FRACTION: f64 = 0.25;
pub const DEFAULT_SEED: u64 = 1;

/// Seeded shuffle split. The test part holds `floor(n · fraction)` items;
/// both parts keep the input's relative order.
pub fn split<T: Clone>(records: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), ModelError> {
    let n = records.len();
    if n < 2 {
        return Err(ModelError::Split(format!("need at least 2 records, have {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ModelError::Split(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    // tolerate representation error such as 0.29 * 100 = 28.999999999999996
    let n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
    if n_test == 0 || n_test >= n {
        return Err(ModelError::Split(format!(
            "test fraction {test_fraction} of {n} records leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| records[i].clone()).collect(),
        test_idx.iter().map(|&i| records[i].clone()).collect(),
    ))
}
