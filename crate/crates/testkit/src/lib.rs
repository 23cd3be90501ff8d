//! Shared test support: reference oracles, random instances, and the
//! randomized equivalence checks used by the test suites.

pub mod checks;
pub mod oracles;

use active_core::dataio::MultiViewDataset;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use oracles::Rows;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_rows(x: ArrayView2<'_, f64>) -> Rows {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn from_rows(rows: &Rows) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// `mask[i][v]` as nested vectors.
pub fn mask_rows(mask: &Array2<bool>) -> Vec<Vec<bool>> {
    mask.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn uniform_rows(rng: &mut impl Rng, n: usize, d: usize) -> Rows {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Points on a small integer grid, so equal distances are common.
pub fn grid_rows(rng: &mut impl Rng, n: usize, d: usize, side: i32) -> Rows {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0..side) as f64).collect())
        .collect()
}

/// Random availability with every sample observed somewhere and every view
/// holding at least two samples.
pub fn random_mask(rng: &mut impl Rng, n: usize, views: usize, missing: f64) -> Array2<bool> {
    loop {
        let mut mask = Array2::from_elem((n, views), true);
        for i in 0..n {
            for v in 0..views {
                mask[[i, v]] = rng.random::<f64>() >= missing;
            }
            if (0..views).all(|v| !mask[[i, v]]) {
                let keep = rng.random_range(0..views);
                mask[[i, keep]] = true;
            }
        }
        if (0..views).all(|v| (0..n).filter(|&i| mask[[i, v]]).count() >= 2) {
            return mask;
        }
    }
}

/// Random masked dataset with features in `[0, 1)` (or on an integer grid).
pub fn random_dataset(rng: &mut impl Rng, n: usize, dims: &[usize], missing: f64, grid: bool) -> MultiViewDataset {
    let mask = random_mask(rng, n, dims.len(), missing);
    let views = dims
        .iter()
        .enumerate()
        .map(|(v, &d)| {
            let rows = if grid {
                grid_rows(rng, n, d, 4)
            } else {
                (0..n)
                    .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
                    .collect()
            };
            let mut x = from_rows(&rows);
            for i in 0..n {
                if !mask[[i, v]] {
                    x.row_mut(i).fill(f64::NAN);
                }
            }
            x
        })
        .collect();
    let labels = (0..n).map(|i| i % 2).collect();
    MultiViewDataset::new(views, mask, Some(labels), 2).expect("valid random dataset")
}
