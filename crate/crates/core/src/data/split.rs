use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schema::{Dataset, Splits};
use crate::error::{BicError, Result};
use crate::numerics::{derive_seed, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::new(0.8, 0.1, 0.1)
    }
}

/// Integer allocation of `n` items by `ratios`, largest-remainder rounding,
/// bumped so every positive-ratio bucket is non-empty when `n` allows it.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>().min(n);
    for &i in order.iter().cycle().take(3 * 3) {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    let positive: Vec<usize> = (0..3).filter(|&i| ratios[i] > 0.0).collect();
    if n >= positive.len() {
        for &i in &positive {
            if counts[i] == 0 {
                let donor = (0..3).max_by_key(|&j| (counts[j], usize::MAX - j)).expect("three buckets");
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Label-stratified, seeded train/val/test split over the labelled users.
pub fn split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let r = ratios.as_array();
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(BicError::Config(format!(
            "split ratios {r:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut out = Splits::default();
    for class in [0u8, 1u8] {
        let mut ids: Vec<String> = dataset
            .users()
            .iter()
            .filter(|u| u.label == Some(class))
            .map(|u| u.id.clone())
            .collect();
        ids.shuffle(&mut rng_from(derive_seed(seed, &[class as u64])));
        let counts = allocate(ids.len(), r);
        let positive = r.iter().filter(|&&x| x > 0.0).count();
        if ids.len() >= positive {
            if let Some(i) = (0..3).find(|&i| r[i] > 0.0 && counts[i] == 0) {
                return Err(BicError::Stratification(format!(
                    "class {class} missing from split {i} despite {} members",
                    ids.len()
                )));
            }
        }
        let mut it = ids.into_iter();
        out.train.extend(it.by_ref().take(counts[0]));
        out.val.extend(it.by_ref().take(counts[1]));
        out.test.extend(it.by_ref().take(counts[2]));
    }
    for v in [&mut out.train, &mut out.val, &mut out.test] {
        v.sort();
    }
    dataset.with_splits(out)
}
