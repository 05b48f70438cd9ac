use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Frame-level train/val/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub ratios: [f64; 3],
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Seeded shuffle, then `floor(n * r)` frames each for validation and test;
/// train takes the remainder. For 4248 frames at 0.8/0.1/0.1 this gives
/// 3400/424/424.
pub fn split_dataset(frame_ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    let n = frame_ids.len();
    if n < 3 {
        return Err(DatasetError::TooFewFrames(n));
    }
    let mut ids = frame_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon absorbs ratios like 150/1800 landing just below an integer
    let n_val = ((n as f64 * ratios[1]) + 1e-9).floor() as usize;
    let n_test = ((n as f64 * ratios[2]) + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    Ok(DatasetSplit {
        train_ids: ids,
        val_ids,
        test_ids,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i:05}")).collect()
    }

    #[test]
    fn small_split_sizes() {
        for seed in 0..5 {
            let s = split_dataset(&ids(10), [0.8, 0.1, 0.1], seed).unwrap();
            assert_eq!(s.sizes(), (8, 1, 1));
        }
    }

    #[test]
    fn full_scale_split_sizes() {
        let s = split_dataset(&ids(4248), [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!(s.sizes(), (3400, 424, 424));
    }

    #[test]
    fn count_ratios_are_exact() {
        let n = 1800.0;
        let s = split_dataset(&ids(1800), [1500.0 / n, 150.0 / n, 150.0 / n], 3).unwrap();
        assert_eq!(s.sizes(), (1500, 150, 150));
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let all = ids(57);
        let a = split_dataset(&all, [0.7, 0.2, 0.1], 9).unwrap();
        assert_eq!(a, split_dataset(&all, [0.7, 0.2, 0.1], 9).unwrap());
        let union: HashSet<&String> = a.train_ids.iter().chain(&a.val_ids).chain(&a.test_ids).collect();
        assert_eq!(union.len(), all.len());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            split_dataset(&ids(10), [0.8, 0.1, 0.2], 0),
            Err(DatasetError::InvalidRatios(_))
        ));
        assert!(matches!(
            split_dataset(&ids(10), [1.2, -0.1, -0.1], 0),
            Err(DatasetError::InvalidRatios(_))
        ));
        assert!(matches!(
            split_dataset(&ids(2), [0.8, 0.1, 0.1], 0),
            Err(DatasetError::TooFewFrames(2))
        ));
    }
}
