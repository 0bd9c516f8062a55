use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];
/// Strata smaller than this are pooled together before allocation.
pub const MIN_STRATUM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Global split sizes: rounded train and validation shares, test takes the rest.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * SPLIT_FRACTIONS[0]).round() as usize;
    let val = ((n as f64 * SPLIT_FRACTIONS[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Integer allocation of stratum sizes to splits with exact row and column
/// totals, rounding by largest remainder.
fn allocate(strata: &[usize], totals: [usize; 3]) -> Vec<[usize; 3]> {
    let mut alloc: Vec<[usize; 3]> = Vec::with_capacity(strata.len());
    let mut rema = Vec::new();
    for (c, &n_c) in strata.iter().enumerate() {
        let mut row = [0usize; 3];
        for s in 0..3 {
            let q = n_c as f64 * SPLIT_FRACTIONS[s];
            row[s] = q.floor() as usize;
            rema.push((q - q.floor(), c, s));
        }
        alloc.push(row);
    }
    let mut row_left: Vec<usize> = strata.iter().zip(&alloc).map(|(n, r)| n - r.iter().sum::<usize>()).collect();
    let mut col_left: [usize; 3] =
        std::array::from_fn(|s| totals[s] - alloc.iter().map(|r| r[s]).sum::<usize>());
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, s) in &rema {
        if row_left[c] > 0 && col_left[s] > 0 {
            alloc[c][s] += 1;
            row_left[c] -= 1;
            col_left[s] -= 1;
        }
    }
    for c in 0..strata.len() {
        while row_left[c] > 0 {
            let s = (0..3).find(|&s| col_left[s] > 0).expect("totals match");
            alloc[c][s] += 1;
            row_left[c] -= 1;
            col_left[s] -= 1;
        }
    }
    alloc
}

/// Stratified 70/10/20 split by joint `(tas_stable, tvs_stable)` class.
/// `classes[i]` is the class of sample id `i`.
pub fn split_dataset(classes: &[(bool, bool)], seed: u64) -> Result<DatasetSplit> {
    let n = classes.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 samples to split, got {n}")));
    }
    let mut by_class: BTreeMap<(bool, bool), Vec<usize>> = BTreeMap::new();
    for (id, &c) in classes.iter().enumerate() {
        by_class.entry(c).or_default().push(id);
    }
    let mut strata: Vec<Vec<usize>> = Vec::new();
    let mut pooled: Vec<usize> = Vec::new();
    for (class, ids) in by_class {
        if ids.len() < MIN_STRATUM {
            log::warn!("class {class:?} has {} samples; pooled for the split", ids.len());
            pooled.extend(ids);
        } else {
            strata.push(ids);
        }
    }
    if !pooled.is_empty() {
        pooled.sort_unstable();
        strata.push(pooled);
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let alloc = allocate(&sizes, split_sizes(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (ids, row) in strata.iter_mut().zip(&alloc) {
        ids.shuffle(&mut rng);
        let mut at = 0;
        for s in 0..3 {
            parts[s].extend_from_slice(&ids[at..at + row[s]]);
            at += row[s];
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train_ids, val_ids, test_ids] = parts;
    Ok(DatasetSplit { train_ids, val_ids, test_ids, seed })
}
