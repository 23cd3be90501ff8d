//! Final clustering (k-means++ / Lloyd) and quality metrics: accuracy under
//! the optimal cluster-to-class matching, normalised mutual information,
//! adjusted Rand index and imputation NRMSE.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::dataio::MultiViewDataset;
use crate::error::{Error, Result};
use crate::rng::{rng_from, split_seed, streams};

pub const DEFAULT_KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, row.as_slice().expect("standard layout"));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], c: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.len();
    let d = points[0].len();
    let mut centroids = Array2::zeros((c, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&Array1::from(points[first].clone()));
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    for k in 1..c {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // Every point coincides with a chosen centre.
            rng.random_range(0..n)
        };
        centroids.row_mut(k).assign(&Array1::from(points[pick].clone()));
        for (cd, p) in closest.iter_mut().zip(points) {
            *cd = cd.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Array2<f64>) -> KMeansResult {
    let n = points.len();
    let (c, d) = centroids.dim();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, _) = nearest_centroid(p, &centroids);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((c, d));
        let mut counts = vec![0usize; c];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums.row_mut(l).iter_mut().zip(p) {
                *s += x;
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let mut row = sums.row_mut(k);
                row /= counts[k] as f64;
                centroids.row_mut(k).assign(&row);
            } else {
                // Reseed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], centroids.row(labels[a]).as_slice().unwrap());
                        let db = sq_dist(&points[b], centroids.row(labels[b]).as_slice().unwrap());
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centroids.row_mut(k).assign(&Array1::from(points[far].clone()));
                labels[far] = k;
            }
        }
    }
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (best, dist) = nearest_centroid(p, &centroids);
        labels[i] = best;
        inertia += dist;
    }
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// k-means with k-means++ seeding; the best of `restarts` runs by inertia
/// (earliest run on ties). Deterministic in `seed`.
pub fn kmeans(z: ArrayView2<'_, f64>, c: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = z.nrows();
    if c == 0 || n < c {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= C <= N, got C = {c}, N = {n}"
        )));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let points: Vec<Vec<f64>> = z.outer_iter().map(|r| r.to_vec()).collect();
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng_from(split_seed(seed, r as u64), streams::KMEANS);
        let init = kmeans_plus_plus(&points, c, &mut rng);
        let run = lloyd(&points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Maximum-weight perfect matching on a square matrix (Hungarian method,
/// O(n^3)). Returns `assignment[row] = column`.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // Minimise max - w with 1-based potentials.
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

struct Contingency {
    table: Vec<Vec<i64>>,
    rows: Vec<i64>,
    cols: Vec<i64>,
    n: i64,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty labelling".into()));
    }
    let (p, np) = dense_ids(pred);
    let (t, nt) = dense_ids(truth);
    let mut table = vec![vec![0i64; nt]; np];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..nt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        table,
        rows,
        cols,
        n: pred.len() as i64,
    })
}

/// Fraction of samples correctly labelled under the best one-to-one
/// mapping of predicted clusters to classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let size = ct.rows.len().max(ct.cols.len());
    let mut square = vec![vec![0i64; size]; size];
    for (i, row) in ct.table.iter().enumerate() {
        square[i][..row.len()].copy_from_slice(row);
    }
    let assignment = max_weight_assignment(&square);
    let matched: i64 = assignment.iter().enumerate().map(|(i, &j)| square[i][j]).sum();
    Ok(matched as f64 / ct.n as f64)
}

fn entropy(counts: &[i64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalised by the geometric mean of the entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let n = ct.n as f64;
    let hp = entropy(&ct.rows, n);
    let ht = entropy(&ct.cols, n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (ct.rows[i] as f64 * ct.cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn comb2(x: i64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index from pair counts, in exact integer arithmetic up to
/// the final division.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let index: i128 = ct.table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: i128 = ct.rows.iter().map(|&c| comb2(c)).sum();
    let sum_cols: i128 = ct.cols.iter().map(|&c| comb2(c)).sum();
    let total = comb2(ct.n);
    // (index - E) / (max - E) with E = rows*cols/total and max = (rows+cols)/2,
    // scaled by 2*total.
    let num = 2 * (index * total - sum_rows * sum_cols);
    let den = (sum_rows + sum_cols) * total - 2 * sum_rows * sum_cols;
    if total == 0 || den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Per-view RMSE over missing cells divided by the ground-truth value range
/// of that view. Views without missing cells yield `None`.
pub fn nrmse(dataset: &MultiViewDataset, imputed: &[Array2<f64>]) -> Result<Vec<Option<f64>>> {
    let truth = dataset
        .ground_truth_views
        .as_ref()
        .ok_or(Error::MissingGroundTruth)?;
    if imputed.len() != dataset.num_views() {
        return Err(Error::DimensionMismatch {
            expected: dataset.num_views(),
            got: imputed.len(),
        });
    }
    let mut out = Vec::with_capacity(dataset.num_views());
    for (v, (t, imp)) in truth.iter().zip(imputed).enumerate() {
        if imp.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                got: imp.len(),
            });
        }
        let mut sse = 0.0;
        let mut cells = 0usize;
        for i in 0..dataset.num_samples() {
            if !dataset.is_available(i, v) {
                for (a, b) in imp.row(i).iter().zip(t.row(i)) {
                    sse += (a - b) * (a - b);
                    cells += 1;
                }
            }
        }
        if cells == 0 {
            out.push(None);
            continue;
        }
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        out.push(Some((sse / cells as f64).sqrt() / range));
    }
    Ok(out)
}

/// Baseline imputation: each missing cell gets its column's observed mean.
pub fn mean_imputation(dataset: &MultiViewDataset) -> Vec<Array2<f64>> {
    dataset
        .views
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut out = x.clone();
            for col in 0..x.ncols() {
                let (sum, count) = (0..x.nrows())
                    .filter(|&i| dataset.is_available(i, v))
                    .fold((0.0, 0usize), |(s, c), i| (s + x[[i, col]], c + 1));
                let mean = if count > 0 { sum / count as f64 } else { 0.0 };
                for i in 0..x.nrows() {
                    if !dataset.is_available(i, v) {
                        out[[i, col]] = mean;
                    }
                }
            }
            out
        })
        .collect()
}

/// Clustering and imputation quality of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    /// Per view; `None` where a view has no missing cells or no ground truth exists.
    pub nrmse: Vec<Option<f64>>,
    pub predicted: Vec<usize>,
}

impl MetricsReport {
    pub fn from_labels(predicted: Vec<usize>, truth: &[usize], nrmse: Vec<Option<f64>>) -> Result<Self> {
        Ok(MetricsReport {
            acc: accuracy(&predicted, truth)?,
            nmi: nmi(&predicted, truth)?,
            ari: ari(&predicted, truth)?,
            nrmse,
            predicted,
        })
    }

    /// Mean NRMSE over views that have missing cells.
    pub fn mean_nrmse(&self) -> Option<f64> {
        let vals: Vec<f64> = self.nrmse.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "acc={}", self.acc);
        let _ = writeln!(out, "nmi={}", self.nmi);
        let _ = writeln!(out, "ari={}", self.ari);
        for (v, value) in self.nrmse.iter().enumerate() {
            match value {
                Some(x) => {
                    let _ = writeln!(out, "nrmse.{v}={x}");
                }
                None => {
                    let _ = writeln!(out, "nrmse.{v}=absent");
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 0, 1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        assert!((ari(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn metric_length_mismatch() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn hungarian_small() {
        let w = vec![vec![1, 9, 1], vec![9, 1, 1], vec![1, 1, 9]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0, 2]);
    }

    #[test]
    fn kmeans_groups_far_pairs() {
        let z = array![[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]];
        let r = kmeans(z.view(), 2, 3, 5).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
    }

    #[test]
    fn kmeans_c_equals_n() {
        let z = array![[0.0], [1.0], [5.0]];
        let r = kmeans(z.view(), 3, 0, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_duplicates_are_deterministic() {
        let z = Array2::from_elem((5, 2), 1.0);
        let a = kmeans(z.view(), 2, 7, 3).unwrap();
        let b = kmeans(z.view(), 2, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn kmeans_rejects_c_above_n() {
        let z = array![[0.0], [1.0]];
        assert!(kmeans(z.view(), 3, 0, 1).is_err());
    }

    fn masked_dataset() -> MultiViewDataset {
        let other = array![[0.5], [0.25], [0.0]];
        let views = vec![array![[f64::NAN, f64::NAN], [1.0, 2.0], [3.0, 6.0]], other.clone()];
        let mut mask = Array2::from_elem((3, 2), true);
        mask[[0, 0]] = false;
        MultiViewDataset::new(views, mask, None, 1)
            .unwrap()
            .with_ground_truth(vec![array![[0.0, 10.0], [1.0, 2.0], [3.0, 6.0]], other])
            .unwrap()
    }

    #[test]
    fn nrmse_examples() {
        let ds = masked_dataset();
        let truth = ds.ground_truth_views.clone().unwrap();
        assert_eq!(nrmse(&ds, &truth).unwrap(), vec![Some(0.0), None]);
        let shifted = vec![&truth[0] + 0.5, truth[1].clone()];
        let r = nrmse(&ds, &shifted).unwrap()[0].unwrap();
        assert!((r - 0.5 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn nrmse_absent_without_missing_cells() {
        let views = vec![array![[0.0], [1.0]]];
        let ds = MultiViewDataset::new(views.clone(), Array2::from_elem((2, 1), true), None, 1)
            .unwrap()
            .with_ground_truth(views.clone())
            .unwrap();
        assert_eq!(nrmse(&ds, &views).unwrap(), vec![None]);
        let bare = MultiViewDataset::new(views.clone(), Array2::from_elem((2, 1), true), None, 1).unwrap();
        assert!(matches!(nrmse(&bare, &views), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn mean_imputation_fills_column_means() {
        let ds = masked_dataset();
        let imp = mean_imputation(&ds);
        assert_eq!(imp[0].row(0).to_vec(), vec![2.0, 4.0]);
    }
}
