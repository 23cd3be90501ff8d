//! The training objective: reconstruction toward the sample (or its
//! transferred neighbours), within-view graph contrast, and cross-view
//! graph consistency, each with an exact gradient with respect to the
//! representations or reconstructions it consumes.
//!
//! Batch-level functions take representation matrices whose rows are
//! "positions"; batch members and their neighbours are referred to by
//! position so the same row can serve as anchor, negative and positive.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::dataio::MultiViewDataset;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;

/// Trade-off weights and ablation switches for the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub enable_rec: bool,
    pub enable_wgc: bool,
    pub enable_cgc: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            enable_rec: true,
            enable_wgc: true,
            enable_cgc: true,
        }
    }
}

impl LossWeights {
    /// Effective multiplier of each term: `(rec, wgc, cgc)`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (
            if self.enable_rec { 1.0 } else { 0.0 },
            if self.enable_wgc { self.alpha } else { 0.0 },
            if self.enable_cgc { self.beta } else { 0.0 },
        )
    }
}

/// Which terms enter the contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WgcDenominator {
    /// Every batch member `m`, including the anchor itself.
    #[default]
    Literal,
    /// As `Literal`, minus the anchor's similarity with itself.
    ExcludeSelf,
}

impl std::str::FromStr for WgcDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(WgcDenominator::Literal),
            "exclude_self" | "exclude-self" => Ok(WgcDenominator::ExcludeSelf),
            other => Err(Error::InvalidArgument(format!("unknown wgc denominator {other:?}"))),
        }
    }
}

impl std::fmt::Display for WgcDenominator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WgcDenominator::Literal => "literal",
            WgcDenominator::ExcludeSelf => "exclude_self",
        })
    }
}

static ZERO_NORM_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of zero-norm vectors seen by the cosine similarity since start-up.
pub fn zero_norm_events() -> u64 {
    ZERO_NORM_EVENTS.load(Ordering::Relaxed)
}

fn note_zero_norm() {
    ZERO_NORM_EVENTS.fetch_add(1, Ordering::Relaxed);
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_sim(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        note_zero_norm();
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Rows whose features a sample's reconstruction is compared against:
/// the sample itself when observed, its transferred neighbours otherwise.
pub fn rec_target_rows(dataset: &MultiViewDataset, graph: &RelationGraph, view: usize, sample: usize) -> Vec<usize> {
    if dataset.is_available(sample, view) {
        vec![sample]
    } else {
        graph.neighbors(view, sample).to_vec()
    }
}

/// Reconstruction loss of one sample in one view.
pub fn rec_loss_sample(
    xhat: ArrayView1<'_, f64>,
    sample: usize,
    view: usize,
    dataset: &MultiViewDataset,
    graph: &RelationGraph,
) -> Result<f64> {
    if xhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction".into()));
    }
    let rows = rec_target_rows(dataset, graph, view, sample);
    if rows.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "empty transferred graph for sample {sample} in view {view}"
        )));
    }
    let x = &dataset.views[view];
    let mut total = 0.0;
    for &j in &rows {
        let diff = &xhat - &x.row(j);
        total += diff.dot(&diff);
    }
    Ok(total / rows.len() as f64)
}

/// Reconstruction targets in closed form.
///
/// `(1/K) sum_k |xhat - x_k|^2 = |xhat - mean|^2 + (1/K) sum_k |x_k - mean|^2`,
/// so every sample is summarised by its target mean and a constant offset.
#[derive(Debug, Clone, PartialEq)]
pub struct RecTargets {
    /// Per view, `N x d_v` target means.
    pub means: Vec<Array2<f64>>,
    /// Per view, length-`N` spread of the targets around their mean.
    pub offsets: Vec<Array1<f64>>,
}

impl RecTargets {
    pub fn new(dataset: &MultiViewDataset, graph: &RelationGraph) -> Result<Self> {
        let n = dataset.num_samples();
        let mut means = Vec::with_capacity(dataset.num_views());
        let mut offsets = Vec::with_capacity(dataset.num_views());
        for v in 0..dataset.num_views() {
            let x = &dataset.views[v];
            let mut mean = Array2::zeros(x.dim());
            let mut offset = Array1::zeros(n);
            for i in 0..n {
                let rows = rec_target_rows(dataset, graph, v, i);
                if rows.is_empty() {
                    return Err(Error::InvalidDataset(format!(
                        "empty transferred graph for sample {i} in view {v}"
                    )));
                }
                let mut m = Array1::<f64>::zeros(x.ncols());
                for &j in &rows {
                    m += &x.row(j);
                }
                m /= rows.len() as f64;
                let spread: f64 = rows
                    .iter()
                    .map(|&j| {
                        let d = &x.row(j) - &m;
                        d.dot(&d)
                    })
                    .sum();
                offset[i] = spread / rows.len() as f64;
                mean.row_mut(i).assign(&m);
            }
            means.push(mean);
            offsets.push(offset);
        }
        Ok(RecTargets { means, offsets })
    }
}

/// Mean reconstruction loss over `scope` and all views, with the gradient
/// with respect to each view's reconstruction rows.
///
/// `xhat[v]` row `r` is the reconstruction of sample `scope[r]` in view `v`.
pub fn rec_loss_with_grad(
    xhat: &[Array2<f64>],
    scope: &[usize],
    targets: &RecTargets,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if scope.is_empty() {
        return Err(Error::InvalidArgument("empty reconstruction scope".into()));
    }
    let views = xhat.len();
    let norm = 1.0 / (scope.len() * views) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(views);
    for (v, xh) in xhat.iter().enumerate() {
        if xh.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("reconstruction of view {v}")));
        }
        let target = targets.means[v].select(Axis(0), scope);
        let diff = xh - &target;
        let offset: f64 = scope.iter().map(|&i| targets.offsets[v][i]).sum();
        loss += (diff.iter().map(|d| d * d).sum::<f64>() + offset) * norm;
        grads.push(diff * (2.0 * norm));
    }
    Ok((loss, grads))
}

/// Mean reconstruction loss over `scope`; see [`rec_loss_with_grad`].
pub fn rec_loss_total(xhat: &[Array2<f64>], scope: &[usize], targets: &RecTargets) -> Result<f64> {
    rec_loss_with_grad(xhat, scope, targets).map(|(l, _)| l)
}

/// Row-normalised copy of `z` and the row norms.
fn unit_rows(z: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let mut u = z.to_owned();
    let mut norms = Array1::zeros(z.nrows());
    for (mut row, n) in u.outer_iter_mut().zip(norms.iter_mut()) {
        let norm = row.dot(&row).sqrt();
        *n = norm;
        if norm > 0.0 {
            row /= norm;
        } else {
            note_zero_norm();
        }
    }
    (u, norms)
}

fn check_contrastive_shape(z: ArrayView2<'_, f64>, members: &[usize], neighbors: &[Vec<usize>]) -> Result<usize> {
    if members.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs at least 2 batch members, got {}",
            members.len()
        )));
    }
    if neighbors.len() != members.len() {
        return Err(Error::DimensionMismatch {
            expected: members.len(),
            got: neighbors.len(),
        });
    }
    let k = neighbors[0].len();
    if k == 0 || neighbors.iter().any(|n| n.len() != k) {
        return Err(Error::InvalidArgument(
            "every batch member needs the same positive number of neighbour slots".into(),
        ));
    }
    let rows = z.nrows();
    if members.iter().chain(neighbors.iter().flatten()).any(|&p| p >= rows) {
        return Err(Error::InvalidArgument("position out of range".into()));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("representations".into()));
    }
    Ok(k)
}

/// Log-sum-exp of `terms` and the softmax weights, written into `weights`.
fn log_sum_exp(terms: &[f64], weights: &mut Vec<f64>) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    weights.clear();
    weights.extend(terms.iter().map(|&t| (t - max).exp()));
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
    max + sum.ln()
}

/// Sum of the contrastive loss over all anchors of one view and its
/// gradient with respect to `z`.
///
/// `members[a]` is the position of batch member `a`; `neighbors[a][k]` the
/// position of its `k`-th neighbour. For anchor `a` and slot `k` the
/// denominator runs over every member `m`: `exp(s(a, m)) + exp(s(a, m_k))`.
pub fn wgc_view_with_grad(
    z: ArrayView2<'_, f64>,
    members: &[usize],
    neighbors: &[Vec<usize>],
    mode: WgcDenominator,
) -> Result<(f64, Array2<f64>)> {
    let k = check_contrastive_shape(z, members, neighbors)?;
    let m = members.len();
    let (u, norms) = unit_rows(z);
    let anchors = u.select(Axis(0), members);
    // sim[[a, p]] = s(member a, position p)
    let sim = anchors.dot(&u.t());
    let mut dsim = Array2::<f64>::zeros(sim.dim());

    // Cosine similarities lie in [-1, 1], so a fixed shift of 1 keeps every
    // exponential in (0, 1] without a per-row maximum.
    let inv_k = 1.0 / k as f64;
    let exclude_self = mode == WgcDenominator::ExcludeSelf;
    let mut total = 0.0;
    let mut e = vec![0.0; sim.ncols()];
    for a in 0..m {
        let srow = sim.row(a);
        for (ep, &s) in e.iter_mut().zip(srow.iter()) {
            *ep = (s - 1.0).exp();
        }
        let mut member_sum: f64 = members.iter().map(|&p| e[p]).sum();
        if exclude_self {
            member_sum -= e[members[a]];
        }
        let mut drow = dsim.row_mut(a);
        let mut member_coef = 0.0;
        for slot in 0..k {
            let neighbor_sum: f64 = neighbors.iter().map(|nb| e[nb[slot]]).sum();
            let denom = member_sum + neighbor_sum;
            let positive = neighbors[a][slot];
            total += (1.0 + denom.ln() - srow[positive]) * inv_k;
            drow[positive] -= inv_k;
            let scale = inv_k / denom;
            member_coef += scale;
            for nb in neighbors {
                drow[nb[slot]] += e[nb[slot]] * scale;
            }
        }
        for (b, &p) in members.iter().enumerate() {
            if !(exclude_self && b == a) {
                drow[p] += e[p] * member_coef;
            }
        }
    }

    // sim = A U^T with A = U[members]: dU = dsim^T A, plus dA scattered back.
    let mut du = dsim.t().dot(&anchors);
    let da = dsim.dot(&u);
    for (a, &p) in members.iter().enumerate() {
        let mut row = du.row_mut(p);
        row += &da.row(a);
    }
    let mut dz = Array2::zeros(z.dim());
    for p in 0..z.nrows() {
        let n = norms[p];
        if n > 0.0 {
            let up = u.row(p);
            let g = du.row(p);
            let proj = g.dot(&up);
            let mut out = dz.row_mut(p);
            out.assign(&((&g - &(&up * proj)) / n));
        }
    }
    Ok((total, dz))
}

/// Contrastive loss of one anchor (`anchor` indexes `members`).
pub fn wgc_loss_sample(
    z: ArrayView2<'_, f64>,
    members: &[usize],
    neighbors: &[Vec<usize>],
    anchor: usize,
    mode: WgcDenominator,
) -> Result<f64> {
    let k = check_contrastive_shape(z, members, neighbors)?;
    if anchor >= members.len() {
        return Err(Error::InvalidArgument(format!("anchor {anchor} out of range")));
    }
    let zi = z.row(members[anchor]);
    let mut total = 0.0;
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for slot in 0..k {
        terms.clear();
        for (b, &pb) in members.iter().enumerate() {
            if !(mode == WgcDenominator::ExcludeSelf && b == anchor) {
                terms.push(cosine_sim(zi, z.row(pb)));
            }
            terms.push(cosine_sim(zi, z.row(neighbors[b][slot])));
        }
        let lse = log_sum_exp(&terms, &mut weights);
        total += lse - cosine_sim(zi, z.row(neighbors[anchor][slot]));
    }
    Ok(total / k as f64)
}

/// Contrastive loss averaged over views and their batch members.
///
/// A view whose member list is empty contributes zero.
pub fn wgc_loss_with_grad(
    zs: &[ArrayView2<'_, f64>],
    members: &[Vec<usize>],
    neighbors: &[Vec<Vec<usize>>],
    mode: WgcDenominator,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let views = zs.len();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(views);
    for v in 0..views {
        if members[v].is_empty() {
            grads.push(Array2::zeros(zs[v].dim()));
            continue;
        }
        let (sum, mut g) = wgc_view_with_grad(zs[v], &members[v], &neighbors[v], mode)?;
        let scale = 1.0 / (members[v].len() * views) as f64;
        loss += sum * scale;
        g *= scale;
        grads.push(g);
    }
    Ok((loss, grads))
}

pub fn wgc_loss_total(
    zs: &[ArrayView2<'_, f64>],
    members: &[Vec<usize>],
    neighbors: &[Vec<Vec<usize>>],
    mode: WgcDenominator,
) -> Result<f64> {
    wgc_loss_with_grad(zs, members, neighbors, mode).map(|(l, _)| l)
}

/// Cross-view consistency of one sample in view `view`: its view-`view`
/// neighbour positions compared between `view` and every other view.
pub fn cgc_loss_sample(zs: &[ArrayView2<'_, f64>], neighbors: &[usize], view: usize) -> f64 {
    let k = neighbors.len() as f64;
    let mut total = 0.0;
    for (j, zj) in zs.iter().enumerate() {
        if j == view {
            continue;
        }
        for &p in neighbors {
            let d = &zs[view].row(p) - &zj.row(p);
            total += d.dot(&d);
        }
    }
    total / k
}

/// Cross-view consistency averaged over views and batch members, with
/// gradients. `neighbors[v][a]` lists member `a`'s neighbour positions in
/// view `v`'s graph.
pub fn cgc_loss_with_grad(
    zs: &[ArrayView2<'_, f64>],
    neighbors: &[Vec<Vec<usize>>],
) -> Result<(f64, Vec<Array2<f64>>)> {
    let views = zs.len();
    let members = neighbors.first().map_or(0, Vec::len);
    if members == 0 {
        return Err(Error::InvalidArgument("empty consistency scope".into()));
    }
    if zs.iter().any(|z| z.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("representations".into()));
    }
    let norm = 1.0 / (members * views) as f64;
    let mut grads: Vec<Array2<f64>> = zs.iter().map(|z| Array2::zeros(z.dim())).collect();
    let mut loss = 0.0;
    for (v, lists) in neighbors.iter().enumerate() {
        for list in lists {
            if list.is_empty() {
                return Err(Error::InvalidArgument("empty neighbour list".into()));
            }
            let scale = norm / list.len() as f64;
            for j in (0..views).filter(|&j| j != v) {
                for &p in list {
                    let d = &zs[v].row(p) - &zs[j].row(p);
                    loss += d.dot(&d) * scale;
                    let g = &d * (2.0 * scale);
                    let mut gv = grads[v].row_mut(p);
                    gv += &g;
                    let mut gj = grads[j].row_mut(p);
                    gj -= &g;
                }
            }
        }
    }
    Ok((loss, grads))
}

pub fn cgc_loss_total(zs: &[ArrayView2<'_, f64>], neighbors: &[Vec<Vec<usize>>]) -> Result<f64> {
    cgc_loss_with_grad(zs, neighbors).map(|(l, _)| l)
}

/// Weighted combination of the three terms; disabled terms contribute 0.
pub fn total_loss(rec: f64, wgc: f64, cgc: f64, weights: &LossWeights) -> f64 {
    let (cr, cw, cc) = weights.coefficients();
    let mut total = 0.0;
    if cr != 0.0 {
        total += cr * rec;
    }
    if cw != 0.0 {
        total += cw * wgc;
    }
    if cc != 0.0 {
        total += cc * cgc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(array![1.0, 0.0].view(), array![1.0, 0.0].view()), 1.0);
        assert_eq!(cosine_sim(array![1.0, 0.0].view(), array![0.0, 1.0].view()), 0.0);
        let s = cosine_sim(array![1.0, 2.0].view(), array![3.0, 4.0].view());
        assert!((s - 11.0 / (5f64.sqrt() * 5.0)).abs() < 1e-15);
        assert!((s - 0.983_869_910_099_907_5).abs() < 1e-15);
        let before = zero_norm_events();
        assert_eq!(cosine_sim(array![0.0, 0.0].view(), array![1.0, 0.0].view()), 0.0);
        assert!(zero_norm_events() > before);
    }

    fn tiny_dataset() -> (MultiViewDataset, RelationGraph) {
        // View 0: sample 0 missing with neighbours 1 and 2 at (0) and (2).
        let views = vec![array![[f64::NAN], [0.0], [2.0]], array![[0.0], [1.0], [1.5]]];
        let mut mask = Array2::from_elem((3, 2), true);
        mask[[0, 0]] = false;
        let ds = MultiViewDataset::new(views, mask, None, 1).unwrap();
        let g = crate::graph::build_initial_graphs(&ds, 2).unwrap();
        assert_eq!(g.neighbors(0, 0), &[1, 2]);
        (ds, g)
    }

    #[test]
    fn rec_sample_examples() {
        let (ds, g) = tiny_dataset();
        assert_eq!(rec_loss_sample(array![1.0].view(), 0, 0, &ds, &g).unwrap(), 1.0);
        assert_eq!(rec_loss_sample(array![2.0].view(), 2, 0, &ds, &g).unwrap(), 0.0);
        let views = vec![array![[0.0, 0.0], [1.0, 1.0]]];
        let ds2 = MultiViewDataset::new(views, Array2::from_elem((2, 1), true), None, 1).unwrap();
        let g2 = crate::graph::build_initial_graphs(&ds2, 1).unwrap();
        assert_eq!(rec_loss_sample(array![1.0, 2.0].view(), 0, 0, &ds2, &g2).unwrap(), 5.0);
    }

    #[test]
    fn rec_total_is_mean_of_samples() {
        let (ds, g) = tiny_dataset();
        let targets = RecTargets::new(&ds, &g).unwrap();
        // View 0 only: samples 0 and 1 with per-sample losses 1 and 3.
        let xhat = vec![array![[1.0], [3f64.sqrt()]]];
        let t = RecTargets {
            means: vec![targets.means[0].clone()],
            offsets: vec![targets.offsets[0].clone()],
        };
        let total = rec_loss_total(&xhat, &[0, 1], &t).unwrap();
        assert!((total - 2.0).abs() < 1e-12);
        assert!(rec_loss_total(&xhat, &[], &t).is_err());
    }

    #[test]
    fn wgc_identical_representations_give_log_four() {
        let z = array![[1.0, 2.0], [1.0, 2.0]];
        let members = [0, 1];
        let neighbors = vec![vec![1], vec![0]];
        let l = wgc_loss_sample(z.view(), &members, &neighbors, 0, WgcDenominator::Literal).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
        let (sum, _) = wgc_view_with_grad(z.view(), &members, &neighbors, WgcDenominator::Literal).unwrap();
        assert!((sum - 2.0 * 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn wgc_needs_two_members() {
        let z = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(wgc_loss_sample(z.view(), &[0], &[vec![1]], 0, WgcDenominator::Literal).is_err());
    }

    #[test]
    fn wgc_total_single_view_and_duplicated_views() {
        let z = array![[1.0, 0.2], [0.3, 1.0], [0.5, 0.5]];
        let members = vec![0, 1];
        let nb = vec![vec![2], vec![2]];
        let one = wgc_loss_total(&[z.view()], &[members.clone()], &[nb.clone()], WgcDenominator::Literal).unwrap();
        let l0 = wgc_loss_sample(z.view(), &members, &nb, 0, WgcDenominator::Literal).unwrap();
        let l1 = wgc_loss_sample(z.view(), &members, &nb, 1, WgcDenominator::Literal).unwrap();
        assert!((one - (l0 + l1) / 2.0).abs() < 1e-14);
        let two = wgc_loss_total(
            &[z.view(), z.view()],
            &[members.clone(), members],
            &[nb.clone(), nb],
            WgcDenominator::Literal,
        )
        .unwrap();
        assert!((one - two).abs() < 1e-14);
    }

    #[test]
    fn cgc_examples() {
        let z1 = array![[0.0, 0.0], [1.0, 0.0]];
        let z2 = array![[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(cgc_loss_sample(&[z1.view(), z2.view()], &[1], 0), 1.0);
        assert_eq!(cgc_loss_sample(&[z1.view(), z1.view()], &[1], 0), 0.0);
        let total = cgc_loss_total(&[z1.view(), z1.view()], &[vec![vec![1]], vec![vec![0]]]).unwrap();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let mut w = LossWeights {
            alpha: 0.5,
            beta: 0.1,
            ..LossWeights::default()
        };
        assert!((total_loss(1.0, 2.0, 3.0, &w) - 2.3).abs() < 1e-15);
        w.alpha = 0.0;
        w.beta = 0.0;
        assert_eq!(total_loss(1.0, 2.0, 3.0, &w), 1.0);
        w.enable_rec = false;
        w.enable_wgc = false;
        w.enable_cgc = false;
        assert_eq!(total_loss(1.0, 2.0, 3.0, &w), 0.0);
    }
}
