//! Partial multi-view datasets: in-memory representation, the on-disk
//! directory format, missing-view mask generation, a synthetic blob
//! generator and per-feature min-max normalization.
//!
//! Directory layout:
//!
//! ```text
//! meta.txt        key=value lines: V, C, N, dims (comma separated)
//! view_{v}.csv    N rows, d_v columns; masked rows hold the token NaN
//! mask.csv        N rows, V columns of 0/1
//! labels.csv      optional, N rows, one integer column
//! truth_{v}.csv   optional, complete view matrices (synthetic data only)
//! ```
//!
//! All CSV files are UTF-8, comma separated, row-major and have no header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from, streams};

/// Token used for missing cells on disk.
pub const MISSING_TOKEN: &str = "NaN";

/// V feature matrices sharing N rows, with an availability mask.
///
/// Missing cells hold `f64::NAN` in memory; available cells are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<Array2<f64>>,
    /// `mask[[i, v]]` is true iff sample `i` is observed in view `v`.
    pub mask: Array2<bool>,
    pub labels: Option<Vec<usize>>,
    pub num_clusters: usize,
    /// Complete view matrices, kept only for synthetic data (imputation error).
    pub ground_truth_views: Option<Vec<Array2<f64>>>,
}

impl MultiViewDataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        views: Vec<Array2<f64>>,
        mask: Array2<bool>,
        labels: Option<Vec<usize>>,
        num_clusters: usize,
    ) -> Result<Self> {
        let ds = MultiViewDataset {
            views,
            mask,
            labels,
            num_clusters,
            ground_truth_views: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_ground_truth(mut self, truth: Vec<Array2<f64>>) -> Result<Self> {
        if truth.len() != self.num_views() {
            return Err(Error::InvalidDataset(format!(
                "{} ground-truth views for {} views",
                truth.len(),
                self.num_views()
            )));
        }
        for (v, t) in truth.iter().enumerate() {
            if t.dim() != self.views[v].dim() {
                return Err(Error::InvalidDataset(format!(
                    "ground truth of view {v} has shape {:?}, expected {:?}",
                    t.dim(),
                    self.views[v].dim()
                )));
            }
        }
        self.ground_truth_views = Some(truth);
        Ok(self)
    }

    pub fn num_samples(&self) -> usize {
        self.mask.nrows()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|x| x.ncols()).collect()
    }

    pub fn is_available(&self, sample: usize, view: usize) -> bool {
        self.mask[[sample, view]]
    }

    /// Availability column of one view.
    pub fn availability(&self, view: usize) -> Vec<bool> {
        self.mask.column(view).to_vec()
    }

    pub fn available_count(&self, view: usize) -> usize {
        self.mask.column(view).iter().filter(|&&a| a).count()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&a| !a).count()
    }

    pub fn row(&self, view: usize, sample: usize) -> ArrayView1<'_, f64> {
        self.views[view].row(sample)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mask.nrows();
        if self.views.is_empty() {
            return Err(Error::InvalidDataset("no views".into()));
        }
        if self.mask.ncols() != self.views.len() {
            return Err(Error::InvalidDataset(format!(
                "mask has {} columns for {} views",
                self.mask.ncols(),
                self.views.len()
            )));
        }
        if self.num_clusters == 0 {
            return Err(Error::InvalidDataset("cluster count must be positive".into()));
        }
        for (v, x) in self.views.iter().enumerate() {
            if x.nrows() != n {
                return Err(Error::InvalidDataset(format!(
                    "view {v} has {} rows, mask has {n}",
                    x.nrows()
                )));
            }
        }
        for (i, row) in self.mask.outer_iter().enumerate() {
            if !row.iter().any(|&a| a) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} missing in all views"
                )));
            }
        }
        for (v, x) in self.views.iter().enumerate() {
            for (i, row) in x.outer_iter().enumerate() {
                let avail = self.mask[[i, v]];
                for &c in row.iter() {
                    if avail && !c.is_finite() {
                        return Err(Error::InvalidDataset(format!(
                            "non-finite value in available row {i} of view {v}"
                        )));
                    }
                    if !avail && !c.is_nan() {
                        return Err(Error::InvalidDataset(format!(
                            "masked row {i} of view {v} holds a value"
                        )));
                    }
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_clusters) {
                return Err(Error::InvalidDataset(format!(
                    "label {bad} outside [0, {})",
                    self.num_clusters
                )));
            }
        }
        Ok(())
    }
}

/// How samples are removed from views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRegime {
    /// Remove `p%` of samples from every view, keeping each sample in at least one view.
    PerViewRemoval,
    /// Two views only: `p%` of samples keep both views, the rest keep exactly one.
    TwoViewPaired,
}

impl std::str::FromStr for MaskRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-view-removal" => Ok(MaskRegime::PerViewRemoval),
            "two-view-paired" => Ok(MaskRegime::TwoViewPaired),
            other => Err(Error::InvalidArgument(format!("unknown mask regime {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaskRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskRegime::PerViewRemoval => "per-view-removal",
            MaskRegime::TwoViewPaired => "two-view-paired",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub regime: MaskRegime,
    /// Percentage in `[0, 100]`.
    pub p: f64,
    pub seed: u64,
}

/// `round(n * p / 100)` with ties away from zero.
pub fn percent_count(n: usize, p: f64) -> usize {
    (n as f64 * p / 100.0).round() as usize
}

const MASK_ATTEMPTS: usize = 1000;

/// Draws an `N x V` availability mask. Deterministic in `(n, v, spec)`.
pub fn generate_mask(n: usize, num_views: usize, spec: &MaskSpec) -> Result<Array2<bool>> {
    if !(0.0..=100.0).contains(&spec.p) {
        return Err(Error::InvalidArgument(format!(
            "missing percentage {} outside [0, 100]",
            spec.p
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if num_views == 0 {
        return Err(Error::InvalidArgument("need at least one view".into()));
    }
    let count = percent_count(n, spec.p);
    let mut rng = rng_from(spec.seed, streams::MASK);

    match spec.regime {
        MaskRegime::TwoViewPaired => {
            if num_views != 2 {
                return Err(Error::InvalidArgument(format!(
                    "two-view-paired regime needs V = 2, got {num_views}"
                )));
            }
            let mut mask = Array2::from_elem((n, 2), false);
            let mut paired = vec![false; n];
            for i in index::sample(&mut rng, n, count) {
                paired[i] = true;
            }
            for (i, &both) in paired.iter().enumerate() {
                if both {
                    mask[[i, 0]] = true;
                    mask[[i, 1]] = true;
                } else {
                    let keep = usize::from(rng.random::<bool>());
                    mask[[i, keep]] = true;
                }
            }
            Ok(mask)
        }
        MaskRegime::PerViewRemoval => {
            // Every removal must leave the row with another view.
            if count * num_views > n * (num_views - 1) {
                return Err(Error::Infeasible(format!(
                    "cannot remove {count} of {n} samples from each of {num_views} views \
                     while keeping every sample in at least one view"
                )));
            }
            'attempt: for _ in 0..MASK_ATTEMPTS {
                let mut mask = Array2::from_elem((n, num_views), true);
                let mut remaining = vec![num_views; n];
                for v in 0..num_views {
                    let eligible: Vec<usize> = (0..n).filter(|&i| remaining[i] >= 2).collect();
                    if eligible.len() < count {
                        continue 'attempt;
                    }
                    for k in index::sample(&mut rng, eligible.len(), count) {
                        let i = eligible[k];
                        mask[[i, v]] = false;
                        remaining[i] -= 1;
                    }
                }
                return Ok(mask);
            }
            Err(Error::Infeasible(format!(
                "no valid mask found after {MASK_ATTEMPTS} attempts (N={n}, V={num_views}, p={})",
                spec.p
            )))
        }
    }
}

/// Parameters of the Gaussian blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub num_clusters: usize,
    /// Feature dimension of each view; its length is V.
    pub dims: Vec<usize>,
    /// Minimum pairwise distance between cluster centres within a view.
    pub separation: f64,
    pub mask: MaskSpec,
}

const CENTER_ATTEMPTS: usize = 10_000;

/// Generates unit-variance Gaussian blobs with shared cluster membership
/// across views, then masks them. Deterministic in `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiViewDataset> {
    let n = spec.num_samples;
    let c = spec.num_clusters;
    let num_views = spec.dims.len();
    if num_views == 0 {
        return Err(Error::InvalidArgument("need at least one view".into()));
    }
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    if n < c * num_views {
        return Err(Error::InvalidArgument(format!(
            "N = {n} is smaller than C * V = {}",
            c * num_views
        )));
    }
    if let Some(&d) = spec.dims.iter().find(|&&d| d < 2) {
        return Err(Error::InvalidArgument(format!("view dimension {d} < 2")));
    }
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be positive, got {}",
            spec.separation
        )));
    }

    let mut rng = rng_from(spec.mask.seed, streams::SYNTHETIC);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut truth = Vec::with_capacity(num_views);
    for &d in &spec.dims {
        // Box wide enough that rejection sampling of C centres succeeds quickly.
        let half_width = spec.separation * (c as f64).powf(1.0 / d as f64).max(1.0);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
        let mut attempts = 0;
        while centers.len() < c {
            attempts += 1;
            if attempts > CENTER_ATTEMPTS {
                return Err(Error::Infeasible(format!(
                    "could not place {c} centres {} apart in {d} dimensions",
                    spec.separation
                )));
            }
            let cand: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-half_width..half_width))
                .collect();
            let far = centers.iter().all(|other| {
                let d2: f64 = other.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= spec.separation
            });
            if far {
                centers.push(cand);
            }
        }
        let mut x = Array2::zeros((n, d));
        for (i, mut row) in x.outer_iter_mut().enumerate() {
            let center = &centers[labels[i]];
            for (cell, mu) in row.iter_mut().zip(center) {
                let noise: f64 = rng.sample(StandardNormal);
                *cell = mu + noise;
            }
        }
        truth.push(x);
    }

    let mask = generate_mask(n, num_views, &spec.mask)?;
    let views = truth
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut observed = x.clone();
            for (i, mut row) in observed.outer_iter_mut().enumerate() {
                if !mask[[i, v]] {
                    row.fill(f64::NAN);
                }
            }
            observed
        })
        .collect();

    MultiViewDataset::new(views, mask, Some(labels), c)?.with_ground_truth(truth)
}

/// Min-max scales every feature column to `[0, 1]` using available rows only.
///
/// Constant columns become 0. Ground-truth views, when present, receive the
/// same affine map so imputation error is measured in the scaled space.
pub fn normalize(dataset: &MultiViewDataset) -> MultiViewDataset {
    let mut out = dataset.clone();
    for v in 0..dataset.num_views() {
        let x = &dataset.views[v];
        for col in 0..x.ncols() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..x.nrows() {
                if dataset.mask[[i, v]] {
                    lo = lo.min(x[[i, col]]);
                    hi = hi.max(x[[i, col]]);
                }
            }
            if !lo.is_finite() {
                continue;
            }
            let range = hi - lo;
            let scale = if range > 0.0 { 1.0 / range } else { 1.0 };
            let map = |value: f64| (value - lo) * scale;
            for i in 0..x.nrows() {
                if dataset.mask[[i, v]] {
                    out.views[v][[i, col]] = map(x[[i, col]]);
                }
            }
            if let Some(truth) = out.ground_truth_views.as_mut() {
                truth[v].column_mut(col).mapv_inplace(map);
            }
        }
    }
    out
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv_reader(path)?;
    reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parsed `meta.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_views: usize,
    pub num_clusters: usize,
    pub num_samples: usize,
    pub dims: Vec<usize>,
}

fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut views = None;
    let mut clusters = None;
    let mut samples = None;
    let mut dims = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(path, lineno + 1, "expected key=value"))?;
        let value = value.trim();
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_error(path, lineno + 1, format!("bad integer {s:?}")))
        };
        match key.trim() {
            "V" => views = Some(int(value)?),
            "C" => clusters = Some(int(value)?),
            "N" => samples = Some(int(value)?),
            "dims" => {
                dims = Some(value.split(',').map(int).collect::<Result<Vec<_>>>()?);
            }
            _ => {}
        }
    }
    let missing = |k: &str| parse_error(path, 0, format!("missing key {k}"));
    let meta = DatasetMeta {
        num_views: views.ok_or_else(|| missing("V"))?,
        num_clusters: clusters.ok_or_else(|| missing("C"))?,
        num_samples: samples.ok_or_else(|| missing("N"))?,
        dims: dims.ok_or_else(|| missing("dims"))?,
    };
    if meta.dims.len() != meta.num_views {
        return Err(parse_error(
            path,
            0,
            format!("dims lists {} entries for V = {}", meta.dims.len(), meta.num_views),
        ));
    }
    Ok(meta)
}

fn read_matrix(path: &Path, rows: usize, cols: usize, mask: Option<&[bool]>) -> Result<Array2<f64>> {
    let records = read_records(path)?;
    if records.len() != rows {
        return Err(Error::InvalidDataset(format!(
            "{} has {} rows, expected {rows}",
            path.display(),
            records.len()
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != cols {
            return Err(parse_error(
                path,
                i + 1,
                format!("{} columns, expected {cols}", rec.len()),
            ));
        }
        let available = mask.is_none_or(|m| m[i]);
        for (j, cell) in rec.iter().enumerate() {
            if available {
                let value: f64 = cell
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| parse_error(path, i + 1, format!("non-numeric cell {cell:?}")))?;
                out[[i, j]] = value;
            } else {
                if cell != MISSING_TOKEN {
                    return Err(parse_error(
                        path,
                        i + 1,
                        format!("masked row holds {cell:?} instead of {MISSING_TOKEN}"),
                    ));
                }
                out[[i, j]] = f64::NAN;
            }
        }
    }
    Ok(out)
}

fn view_path(dir: &Path, v: usize) -> PathBuf {
    dir.join(format!("view_{v}.csv"))
}

fn truth_path(dir: &Path, v: usize) -> PathBuf {
    dir.join(format!("truth_{v}.csv"))
}

/// Reads a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Err(Error::InvalidDataset(format!(
            "missing meta file {}",
            meta_path.display()
        )));
    }
    let meta = read_meta(&meta_path)?;
    let n = meta.num_samples;

    let mask_path = dir.join("mask.csv");
    let mut mask = Array2::from_elem((n, meta.num_views), false);
    let records = read_records(&mask_path)?;
    if records.len() != n {
        return Err(Error::InvalidDataset(format!(
            "mask has {} rows, expected {n}",
            records.len()
        )));
    }
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != meta.num_views {
            return Err(parse_error(&mask_path, i + 1, "wrong number of mask columns"));
        }
        for (v, cell) in rec.iter().enumerate() {
            mask[[i, v]] = match cell {
                "1" => true,
                "0" => false,
                other => {
                    return Err(parse_error(&mask_path, i + 1, format!("mask cell {other:?}")))
                }
            };
        }
        if !mask.row(i).iter().any(|&a| a) {
            return Err(Error::InvalidDataset(format!(
                "sample {i} missing in all views"
            )));
        }
    }

    let mut views = Vec::with_capacity(meta.num_views);
    for (v, &d) in meta.dims.iter().enumerate() {
        let avail = mask.column(v).to_vec();
        views.push(read_matrix(&view_path(dir, v), n, d, Some(&avail))?);
    }

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let records = read_records(&labels_path)?;
        if records.len() != n {
            return Err(Error::InvalidDataset(format!(
                "labels has {} rows, expected {n}",
                records.len()
            )));
        }
        let labels = records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                rec.get(0)
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_error(&labels_path, i + 1, "bad label"))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(labels)
    } else {
        None
    };

    let mut dataset = MultiViewDataset::new(views, mask, labels, meta.num_clusters)?;
    if (0..meta.num_views).all(|v| truth_path(dir, v).exists()) {
        let truth = meta
            .dims
            .iter()
            .enumerate()
            .map(|(v, &d)| read_matrix(&truth_path(dir, v), n, d, None))
            .collect::<Result<Vec<_>>>()?;
        dataset = dataset.with_ground_truth(truth)?;
    }
    Ok(dataset)
}

fn write_matrix(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in x.outer_iter() {
        for (j, value) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display for f64 is the shortest representation that round-trips.
            let _ = write!(out, "{value}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a dataset directory readable by [`load_dataset`].
pub fn save_dataset(dataset: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims: Vec<String> = dataset.dims().iter().map(ToString::to_string).collect();
    let meta = format!(
        "V={}\nC={}\nN={}\ndims={}\n",
        dataset.num_views(),
        dataset.num_clusters,
        dataset.num_samples(),
        dims.join(",")
    );
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;

    for (v, x) in dataset.views.iter().enumerate() {
        write_matrix(&view_path(dir, v), x)?;
    }
    let mut mask = String::new();
    for row in dataset.mask.outer_iter() {
        let cells: Vec<&str> = row.iter().map(|&a| if a { "1" } else { "0" }).collect();
        mask.push_str(&cells.join(","));
        mask.push('\n');
    }
    let mask_path = dir.join("mask.csv");
    fs::write(&mask_path, mask).map_err(|e| Error::io(&mask_path, e))?;

    if let Some(labels) = &dataset.labels {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        let path = dir.join("labels.csv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(truth) = &dataset.ground_truth_views {
        for (v, x) in truth.iter().enumerate() {
            write_matrix(&truth_path(dir, v), x)?;
        }
    }
    Ok(())
}

/// Number of zeros per mask column.
pub fn removed_per_view(mask: &Array2<bool>) -> Vec<usize> {
    mask.axis_iter(Axis(1))
        .map(|col| col.iter().filter(|&&a| !a).count())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(regime: MaskRegime, p: f64, seed: u64) -> MaskSpec {
        MaskSpec { regime, p, seed }
    }

    #[test]
    fn mask_zero_percent_removal_is_all_ones() {
        let m = generate_mask(4, 2, &spec(MaskRegime::PerViewRemoval, 0.0, 3)).unwrap();
        assert!(m.iter().all(|&a| a));
    }

    #[test]
    fn paired_mask_at_zero_percent_is_all_single_view() {
        let m = generate_mask(4, 2, &spec(MaskRegime::TwoViewPaired, 0.0, 3)).unwrap();
        for row in m.outer_iter() {
            assert_eq!(row.iter().filter(|&&a| a).count(), 1);
        }
    }

    #[test]
    fn paired_mask_half() {
        let m = generate_mask(4, 2, &spec(MaskRegime::TwoViewPaired, 50.0, 11)).unwrap();
        let both = m.outer_iter().filter(|r| r[0] && r[1]).count();
        assert_eq!(both, 2);
        assert!(m.outer_iter().all(|r| r[0] || r[1]));
    }

    #[test]
    fn per_view_removal_counts() {
        let m = generate_mask(100, 3, &spec(MaskRegime::PerViewRemoval, 30.0, 5)).unwrap();
        // Column sums and row minima, checked independently of the generator.
        for v in 0..3 {
            let ones: usize = (0..100).map(|i| usize::from(m[[i, v]])).sum();
            assert_eq!(ones, 70);
        }
        for i in 0..100 {
            let kept: usize = (0..3).map(|v| usize::from(m[[i, v]])).sum();
            assert!(kept >= 1);
        }
    }

    #[test]
    fn mask_rejects_bad_input() {
        assert!(generate_mask(10, 2, &spec(MaskRegime::PerViewRemoval, 101.0, 0)).is_err());
        assert!(generate_mask(10, 2, &spec(MaskRegime::PerViewRemoval, -1.0, 0)).is_err());
        assert!(matches!(
            generate_mask(10, 2, &spec(MaskRegime::PerViewRemoval, 100.0, 0)),
            Err(Error::Infeasible(_))
        ));
        assert!(generate_mask(10, 3, &spec(MaskRegime::TwoViewPaired, 50.0, 0)).is_err());
        assert!(generate_mask(1, 2, &spec(MaskRegime::TwoViewPaired, 50.0, 0)).is_err());
    }

    #[test]
    fn percent_count_rounds_half_away_from_zero() {
        assert_eq!(percent_count(5, 50.0), 3);
        assert_eq!(percent_count(3, 50.0), 2);
        assert_eq!(percent_count(300, 30.0), 90);
    }

    #[test]
    fn synthetic_single_cluster_labels_zero() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_samples: 20,
            num_clusters: 1,
            dims: vec![3, 2],
            separation: 4.0,
            mask: spec(MaskRegime::TwoViewPaired, 50.0, 1),
        })
        .unwrap();
        assert!(ds.labels.as_ref().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn synthetic_mask_column_sums() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_samples: 300,
            num_clusters: 3,
            dims: vec![4, 5, 6],
            separation: 6.0,
            mask: spec(MaskRegime::PerViewRemoval, 30.0, 9),
        })
        .unwrap();
        for v in 0..3 {
            assert_eq!(ds.available_count(v), 210);
        }
        let truth = ds.ground_truth_views.as_ref().unwrap();
        for v in 0..3 {
            for i in 0..300 {
                if ds.is_available(i, v) {
                    assert_eq!(ds.views[v].row(i), truth[v].row(i));
                } else {
                    assert!(ds.views[v].row(i).iter().all(|x| x.is_nan()));
                }
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let s = SyntheticSpec {
            num_samples: 30,
            num_clusters: 3,
            dims: vec![2, 3],
            separation: 5.0,
            mask: spec(MaskRegime::TwoViewPaired, 40.0, 77),
        };
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.ground_truth_views, b.ground_truth_views);
    }

    #[test]
    fn synthetic_rejects_bad_shapes() {
        let mut s = SyntheticSpec {
            num_samples: 5,
            num_clusters: 3,
            dims: vec![2, 3],
            separation: 5.0,
            mask: spec(MaskRegime::TwoViewPaired, 40.0, 77),
        };
        assert!(generate_synthetic(&s).is_err());
        s.num_samples = 30;
        s.dims = vec![1, 3];
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn normalize_min_max() {
        let views = vec![array![[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]];
        let mask = Array2::from_elem((3, 1), true);
        let ds = MultiViewDataset::new(views, mask, None, 1).unwrap();
        let out = normalize(&ds);
        assert_eq!(out.views[0].column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.views[0].column(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_ignores_missing_rows() {
        let views = vec![
            array![[0.0], [f64::NAN], [10.0]],
            array![[1.0], [2.0], [3.0]],
        ];
        let mut mask = Array2::from_elem((3, 2), true);
        mask[[1, 0]] = false;
        let ds = MultiViewDataset::new(views, mask, None, 1)
            .unwrap()
            .with_ground_truth(vec![array![[0.0], [100.0], [10.0]], array![[1.0], [2.0], [3.0]]])
            .unwrap();
        let out = normalize(&ds);
        assert_eq!(out.views[0][[0, 0]], 0.0);
        assert!(out.views[0][[1, 0]].is_nan());
        assert_eq!(out.views[0][[2, 0]], 1.0);
        assert_eq!(out.ground_truth_views.unwrap()[0][[1, 0]], 10.0);
    }

    #[test]
    fn dataset_rejects_all_missing_row() {
        let views = vec![array![[f64::NAN]], array![[f64::NAN]]];
        let mask = Array2::from_elem((1, 2), false);
        let err = MultiViewDataset::new(views, mask, None, 1).unwrap_err();
        assert!(err.to_string().contains("sample 0 missing in all views"));
    }
}
