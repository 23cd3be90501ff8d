//! Straightforward reference implementations on plain vectors.
//!
//! Nothing here shares code with `active-core`; every function is a direct
//! loop over the defining formula.

pub type Rows = Vec<Vec<f64>>;

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Relative difference with a floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Full ranking of available `j != i` by (distance, index).
pub fn ranking(x: &Rows, avail: &[bool], i: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = Vec::new();
    for j in 0..x.len() {
        if j != i && avail[j] {
            all.push((sq_dist(&x[i], &x[j]), j));
        }
    }
    // Insertion sort keeps the oracle free of library comparators.
    for a in 1..all.len() {
        let mut b = a;
        while b > 0 && (all[b].0 < all[b - 1].0 || (all[b].0 == all[b - 1].0 && all[b].1 < all[b - 1].1)) {
            all.swap(b, b - 1);
            b -= 1;
        }
    }
    all.into_iter().map(|(_, j)| j).collect()
}

pub fn knn(x: &Rows, avail: &[bool], i: usize, k: usize) -> Vec<usize> {
    let mut r = ranking(x, avail, i);
    r.truncate(k);
    r
}

/// Transferred list for sample `i` missing from view `v`.
///
/// `mask[i][w]` is availability. Sources are taken in view order.
pub fn transfer(views: &[Rows], mask: &[Vec<bool>], v: usize, i: usize, k: usize) -> Vec<usize> {
    let nviews = views.len();
    let avail = |w: usize| -> Vec<bool> { mask.iter().map(|row| row[w]).collect() };
    let mut lists = Vec::new();
    for w in 0..nviews {
        if w == v || !mask[i][w] {
            continue;
        }
        let native = knn(&views[w], &avail(w), i, k);
        let mut kept = Vec::new();
        for j in native {
            if mask[j][v] {
                kept.push(j);
            }
        }
        lists.push(kept);
    }
    let mut merged: Vec<usize> = Vec::new();
    for rank in 0..k {
        for list in &lists {
            if rank < list.len() && !merged.contains(&list[rank]) {
                merged.push(list[rank]);
            }
        }
    }
    merged.truncate(k);
    if merged.is_empty() {
        for w in 0..nviews {
            if w == v || !mask[i][w] {
                continue;
            }
            for j in ranking(&views[w], &avail(w), i) {
                if mask[j][v] {
                    return vec![j];
                }
            }
        }
    }
    merged
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Mean squared distance from `xhat` to each target row.
pub fn rec_sample(xhat: &[f64], targets: &[&[f64]]) -> f64 {
    let mut s = 0.0;
    for t in targets {
        s += sq_dist(xhat, t);
    }
    s / targets.len() as f64
}

/// Contrastive loss of anchor `a`: rows of `z` are addressed by position,
/// `members[m]` is member `m`'s position and `neighbors[m][k]` the position
/// of its `k`-th neighbour.
pub fn wgc_sample(z: &Rows, members: &[usize], neighbors: &[Vec<usize>], a: usize, exclude_self: bool) -> f64 {
    let k = neighbors[a].len();
    let za = &z[members[a]];
    let mut loss = 0.0;
    for slot in 0..k {
        let num = cosine(za, &z[neighbors[a][slot]]).exp();
        let mut den = 0.0;
        for m in 0..members.len() {
            if !(exclude_self && m == a) {
                den += cosine(za, &z[members[m]]).exp();
            }
            den += cosine(za, &z[neighbors[m][slot]]).exp();
        }
        loss -= (num / den).ln();
    }
    loss / k as f64
}

/// Cross-view consistency of `view`'s neighbour list, rows by position.
pub fn cgc_sample(zs: &[Rows], neighbors: &[usize], view: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..zs.len() {
        if j == view {
            continue;
        }
        for &p in neighbors {
            s += sq_dist(&zs[view][p], &zs[j][p]);
        }
    }
    s / neighbors.len() as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best accuracy over every relabelling (small label counts only).
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let c = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut best = 0;
    for perm in permutations(c) {
        let hits = pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let mut h = 0.0;
    for l in 0..c {
        let cnt = labels.iter().filter(|&&x| x == l).count() as f64;
        if cnt > 0.0 {
            h -= cnt / n * (cnt / n).ln();
        }
    }
    h
}

/// NMI normalised by the geometric mean of the two entropies.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ca = a.iter().max().map_or(0, |m| m + 1);
    let cb = b.iter().max().map_or(0, |m| m + 1);
    let mut mi = 0.0;
    for x in 0..ca {
        for y in 0..cb {
            let nxy = a.iter().zip(b).filter(|(p, q)| **p == x && **q == y).count() as f64;
            if nxy == 0.0 {
                continue;
            }
            let nx = a.iter().filter(|&&p| p == x).count() as f64;
            let ny = b.iter().filter(|&&q| q == y).count() as f64;
            mi += nxy / n * (n * nxy / (nx * ny)).ln();
        }
    }
    let (ha, hb) = (entropy(a), entropy(b));
    if ha == 0.0 || hb == 0.0 {
        return if ha == hb { 1.0 } else { 0.0 };
    }
    mi / (ha * hb).sqrt()
}

/// Adjusted Rand index by counting agreeing sample pairs.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = (only_a + only_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}
