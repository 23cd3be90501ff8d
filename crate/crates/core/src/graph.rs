//! Relation graphs: exact k-nearest-neighbour lists per view, transfer of
//! neighbour lists onto samples missing from a view, and graphs rebuilt on
//! learned representations.
//!
//! Distances are Euclidean and compared as exact squared sums of
//! differences, so ordering is reproducible. Ties go to the lower index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::dataio::MultiViewDataset;
use crate::error::{Error, Result};

/// Whether a neighbour list was computed in its own view or transferred in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrigin {
    Native,
    Transferred,
}

impl EdgeOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeOrigin::Native => "native",
            EdgeOrigin::Transferred => "transferred",
        }
    }
}

/// Per-view, per-sample ordered neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    k: usize,
    neighbors: Vec<Vec<Vec<usize>>>,
    origin: Vec<Vec<EdgeOrigin>>,
}

impl RelationGraph {
    pub fn from_parts(
        k: usize,
        neighbors: Vec<Vec<Vec<usize>>>,
        origin: Vec<Vec<EdgeOrigin>>,
    ) -> Self {
        RelationGraph { k, neighbors, origin }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_views(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_samples(&self) -> usize {
        self.neighbors.first().map_or(0, Vec::len)
    }

    pub fn neighbors(&self, view: usize, sample: usize) -> &[usize] {
        &self.neighbors[view][sample]
    }

    pub fn origin(&self, view: usize, sample: usize) -> EdgeOrigin {
        self.origin[view][sample]
    }

    /// Neighbour in slot `slot` (0-based), cycling through shorter lists.
    pub fn neighbor_at(&self, view: usize, sample: usize, slot: usize) -> usize {
        let list = &self.neighbors[view][sample];
        list[slot % list.len()]
    }

    /// Total number of (sample, neighbour) edges over all views.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().flatten().map(Vec::len).sum()
    }

    /// True when every view holds only native lists.
    pub fn all_native(&self) -> bool {
        self.origin
            .iter()
            .flatten()
            .all(|&o| o == EdgeOrigin::Native)
    }

    /// Checks the structural invariants against a mask (`None` = all available).
    pub fn check_invariants(&self, mask: Option<&Array2<bool>>) -> Result<()> {
        for (v, lists) in self.neighbors.iter().enumerate() {
            for (i, list) in lists.iter().enumerate() {
                if list.is_empty() {
                    return Err(Error::InvalidDataset(format!(
                        "empty neighbour list for sample {i} in view {v}"
                    )));
                }
                if list.len() > self.k {
                    return Err(Error::InvalidDataset(format!(
                        "sample {i} in view {v} has {} > K neighbours",
                        list.len()
                    )));
                }
                for (pos, &j) in list.iter().enumerate() {
                    if j == i {
                        return Err(Error::InvalidDataset(format!("self-loop at {i} in view {v}")));
                    }
                    if list[..pos].contains(&j) {
                        return Err(Error::InvalidDataset(format!(
                            "duplicate neighbour {j} for sample {i} in view {v}"
                        )));
                    }
                    if let Some(mask) = mask {
                        if !mask[[j, v]] {
                            return Err(Error::InvalidDataset(format!(
                                "neighbour {j} of sample {i} is missing in view {v}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `view,sample,rank,neighbor,origin` rows (rank is 1-based).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("view,sample,rank,neighbor,origin\n");
        for (v, lists) in self.neighbors.iter().enumerate() {
            for (i, list) in lists.iter().enumerate() {
                let origin = self.origin[v][i].as_str();
                for (rank, j) in list.iter().enumerate() {
                    let _ = writeln!(out, "{v},{i},{},{j},{origin}", rank + 1);
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView2<'_, f64>, avail: &[bool], query: usize, k: usize) -> Vec<usize> {
    let q = x.row(query).to_vec();
    let mut cands: Vec<(f64, usize)> = (0..x.nrows())
        .filter(|&j| j != query && avail[j])
        .map(|j| {
            let row = x.row(j);
            let d = match row.as_slice() {
                Some(r) => squared_distance(&q, r),
                None => squared_distance(&q, &row.to_vec()),
            };
            (d, j)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cands.len() {
        cands.select_nth_unstable_by(k, order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(order);
    cands.into_iter().map(|(_, j)| j).collect()
}

/// The `k` available samples closest to row `sample` (fewer if fewer exist).
pub fn knn_available(
    x: ArrayView2<'_, f64>,
    avail: &[bool],
    sample: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if avail.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: avail.len(),
        });
    }
    if !avail[sample] {
        return Err(Error::InvalidArgument(format!(
            "query sample {sample} is not available"
        )));
    }
    Ok(nearest(x, avail, sample, k))
}

/// Neighbour list for a sample missing from `view`, built from the native
/// lists of the views where it is observed.
///
/// Each source list is filtered to samples present in `view`; the filtered
/// lists are merged rank by rank (all first neighbours, then all second
/// neighbours, ...), de-duplicated and cut to K. If nothing survives, the
/// source views are searched past K for the nearest sample present in `view`.
pub fn transfer_graph(
    dataset: &MultiViewDataset,
    native: &RelationGraph,
    view: usize,
    sample: usize,
) -> Result<Vec<usize>> {
    if dataset.is_available(sample, view) {
        return Err(Error::AlreadyAvailable { sample, view });
    }
    let sources: Vec<usize> = (0..dataset.num_views())
        .filter(|&w| w != view && dataset.is_available(sample, w))
        .collect();
    if sources.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "sample {sample} missing in all views"
        )));
    }

    let filtered: Vec<Vec<usize>> = sources
        .iter()
        .map(|&w| {
            native
                .neighbors(w, sample)
                .iter()
                .copied()
                .filter(|&j| dataset.is_available(j, view))
                .collect()
        })
        .collect();

    let mut merged = Vec::with_capacity(native.k());
    let longest = filtered.iter().map(Vec::len).max().unwrap_or(0);
    'ranks: for rank in 0..longest {
        for list in &filtered {
            if let Some(&j) = list.get(rank) {
                if !merged.contains(&j) {
                    merged.push(j);
                    if merged.len() == native.k() {
                        break 'ranks;
                    }
                }
            }
        }
    }
    if !merged.is_empty() {
        return Ok(merged);
    }

    for &w in &sources {
        let avail = dataset.availability(w);
        let found = nearest(dataset.views[w].view(), &avail, sample, usize::MAX)
            .into_iter()
            .find(|&j| dataset.is_available(j, view));
        if let Some(j) = found {
            return Ok(vec![j]);
        }
    }
    Err(Error::Infeasible(format!(
        "no sample reachable from sample {sample} is observed in view {view}"
    )))
}

/// Native lists for observed samples only; missing entries are left empty.
fn native_graphs(dataset: &MultiViewDataset, k: usize) -> RelationGraph {
    let n = dataset.num_samples();
    let mut neighbors = Vec::with_capacity(dataset.num_views());
    let mut origin = Vec::with_capacity(dataset.num_views());
    for v in 0..dataset.num_views() {
        let avail = dataset.availability(v);
        let x = dataset.views[v].view();
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| if avail[i] { nearest(x, &avail, i, k) } else { Vec::new() })
            .collect();
        let kinds = (0..n)
            .map(|i| if avail[i] { EdgeOrigin::Native } else { EdgeOrigin::Transferred })
            .collect();
        neighbors.push(lists);
        origin.push(kinds);
    }
    RelationGraph { k, neighbors, origin }
}

/// Initial graphs on raw features: native lists where a sample is observed,
/// transferred lists where it is missing.
pub fn build_initial_graphs(dataset: &MultiViewDataset, k: usize) -> Result<RelationGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    for v in 0..dataset.num_views() {
        if dataset.available_count(v) < 2 {
            return Err(Error::InvalidDataset(format!(
                "view {v} has fewer than two observed samples"
            )));
        }
    }
    let mut graph = native_graphs(dataset, k);
    for v in 0..dataset.num_views() {
        for i in 0..dataset.num_samples() {
            if !dataset.is_available(i, v) {
                graph.neighbors[v][i] = transfer_graph(dataset, &graph, v, i)?;
            }
        }
    }
    Ok(graph)
}

/// Graphs on learned representations; every row of every view participates.
pub fn build_learned_graphs(reprs: &[Array2<f64>], k: usize) -> Result<RelationGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut neighbors = Vec::with_capacity(reprs.len());
    let mut origin = Vec::with_capacity(reprs.len());
    for (v, z) in reprs.iter().enumerate() {
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("representations of view {v}")));
        }
        if z.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        let avail = vec![true; z.nrows()];
        neighbors.push((0..z.nrows()).map(|i| nearest(z.view(), &avail, i, k)).collect());
        origin.push(vec![EdgeOrigin::Native; z.nrows()]);
    }
    Ok(RelationGraph { k, neighbors, origin })
}

/// Fraction of edges joining samples with different labels.
pub fn graph_error(graph: &RelationGraph, labels: Option<&[usize]>) -> Result<f64> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if labels.len() != graph.num_samples() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_samples(),
            got: labels.len(),
        });
    }
    let mut wrong = 0usize;
    let mut total = 0usize;
    for lists in &graph.neighbors {
        for (i, list) in lists.iter().enumerate() {
            total += list.len();
            wrong += list.iter().filter(|&&j| labels[j] != labels[i]).count();
        }
    }
    Ok(if total == 0 { 0.0 } else { wrong as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line_points() -> Array2<f64> {
        array![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]
    }

    #[test]
    fn knn_small_cases() {
        let x = line_points();
        let avail = [true; 3];
        assert_eq!(knn_available(x.view(), &avail, 0, 1).unwrap(), vec![1]);
        assert_eq!(knn_available(x.view(), &avail, 0, 2).unwrap(), vec![1, 2]);
        assert_eq!(knn_available(x.view(), &avail, 0, 5).unwrap(), vec![1, 2]);
    }

    #[test]
    fn knn_rejects_unavailable_query() {
        let x = line_points();
        assert!(knn_available(x.view(), &[false, true, true], 0, 1).is_err());
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        let x = array![[0.0], [1.0], [-1.0], [1.0]];
        let avail = [true; 4];
        assert_eq!(knn_available(x.view(), &avail, 0, 3).unwrap(), vec![1, 2, 3]);
    }

    fn two_view(mask_rows: &[[bool; 2]], v0: Array2<f64>, v1: Array2<f64>) -> MultiViewDataset {
        let n = mask_rows.len();
        let mut mask = Array2::from_elem((n, 2), false);
        let mut views = [v0, v1];
        for (i, r) in mask_rows.iter().enumerate() {
            for v in 0..2 {
                mask[[i, v]] = r[v];
                if !r[v] {
                    views[v].row_mut(i).fill(f64::NAN);
                }
            }
        }
        MultiViewDataset::new(views.to_vec(), mask, None, 1).unwrap()
    }

    #[test]
    fn transfer_drops_missing_neighbours() {
        // Sample 0 is missing in view 0; its view-1 neighbours are 1, 2, 3 in
        // that order, and sample 2 is missing in view 0.
        let v0 = array![[0.0], [1.0], [0.0], [3.0]];
        let v1 = array![[0.0], [1.0], [2.0], [3.0]];
        let ds = two_view(
            &[[false, true], [true, true], [false, true], [true, true]],
            v0,
            v1,
        );
        let g = build_initial_graphs(&ds, 3).unwrap();
        assert_eq!(g.neighbors(1, 0), &[1, 2, 3]);
        assert_eq!(g.neighbors(0, 0), &[1, 3]);
        assert_eq!(g.origin(0, 0), EdgeOrigin::Transferred);
        assert_eq!(g.origin(1, 0), EdgeOrigin::Native);
        g.check_invariants(Some(&ds.mask)).unwrap();
    }

    #[test]
    fn transfer_identity_when_nothing_pruned() {
        let v0 = array![[0.0], [1.0], [2.0], [3.0]];
        let v1 = array![[0.0], [1.0], [2.0], [3.0]];
        let ds = two_view(&[[false, true], [true, true], [true, true], [true, true]], v0, v1);
        let g = build_initial_graphs(&ds, 2).unwrap();
        assert_eq!(g.neighbors(0, 0), g.neighbors(1, 0));
    }

    #[test]
    fn transfer_rejects_available_sample() {
        let v0 = array![[0.0], [1.0], [2.0]];
        let v1 = array![[0.0], [1.0], [2.0]];
        let ds = two_view(&[[true, true], [true, true], [true, true]], v0, v1);
        let g = build_initial_graphs(&ds, 1).unwrap();
        assert!(matches!(
            transfer_graph(&ds, &g, 0, 0),
            Err(Error::AlreadyAvailable { .. })
        ));
    }

    #[test]
    fn transfer_fallback_reaches_past_k() {
        // Sample 0's only view-1 neighbour at K=1 is sample 1, which is
        // missing in view 0. The fallback continues to sample 2.
        let v0 = array![[0.0], [0.0], [2.0], [9.0]];
        let v1 = array![[0.0], [1.0], [2.0], [9.0]];
        let ds = two_view(&[[false, true], [false, true], [true, true], [true, true]], v0, v1);
        let g = build_initial_graphs(&ds, 1).unwrap();
        assert_eq!(g.neighbors(0, 0), &[2]);
        g.check_invariants(Some(&ds.mask)).unwrap();
    }

    #[test]
    fn three_view_merge_interleaves_ranks() {
        // Sample 0 missing in view 0, present in views 1 and 2 with
        // neighbour lists [1, 2] and [2, 3].
        let n = 5;
        let v0 = array![[f64::NAN], [1.0], [2.0], [3.0], [4.0]];
        let v1 = array![[0.0], [1.0], [2.0], [10.0], [20.0]];
        let v2 = array![[0.0], [9.0], [1.0], [2.0], [20.0]];
        let mut mask = Array2::from_elem((n, 3), true);
        mask[[0, 0]] = false;
        let ds = MultiViewDataset::new(vec![v0, v1, v2], mask, None, 1).unwrap();
        let g = build_initial_graphs(&ds, 2).unwrap();
        assert_eq!(g.neighbors(1, 0), &[1, 2]);
        assert_eq!(g.neighbors(2, 0), &[2, 3]);
        // With K = 2 the interleave [1, 2, 2, 3] dedupes to [1, 2].
        assert_eq!(g.neighbors(0, 0), &[1, 2]);

        // Source lists [1, 2] and [2, 3] under K = 3 merge to [1, 2, 3].
        let native = RelationGraph::from_parts(
            3,
            vec![
                vec![vec![]; n],
                vec![vec![1, 2], vec![], vec![], vec![], vec![]],
                vec![vec![2, 3], vec![], vec![], vec![], vec![]],
            ],
            vec![vec![EdgeOrigin::Native; n]; 3],
        );
        assert_eq!(transfer_graph(&ds, &native, 0, 0).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn learned_graph_pair() {
        let z = vec![array![[0.0, 1.0], [3.0, 4.0]]];
        let g = build_learned_graphs(&z, 1).unwrap();
        assert_eq!(g.neighbors(0, 0), &[1]);
        assert_eq!(g.neighbors(0, 1), &[0]);
    }

    #[test]
    fn learned_graph_rejects_nan() {
        let z = vec![array![[0.0, f64::NAN], [3.0, 4.0]]];
        assert!(build_learned_graphs(&z, 1).is_err());
    }

    #[test]
    fn graph_error_counts() {
        let g = RelationGraph::from_parts(
            1,
            vec![vec![vec![1], vec![0], vec![0]]],
            vec![vec![EdgeOrigin::Native; 3]],
        );
        assert_eq!(graph_error(&g, Some(&[0, 0, 0])).unwrap(), 0.0);
        assert_eq!(graph_error(&g, Some(&[0, 1, 1])).unwrap(), 1.0);
        assert!((graph_error(&g, Some(&[0, 0, 1])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(graph_error(&g, None), Err(Error::MissingLabels)));
    }
}
