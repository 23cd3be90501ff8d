//! Randomized comparisons of the library against the oracles.

use active_core::dataio::MultiViewDataset;
use active_core::eval;
use active_core::graph::{build_initial_graphs, build_learned_graphs, knn_available, transfer_graph, RelationGraph};
use active_core::losses::{
    cgc_loss_sample, cgc_loss_total, rec_loss_sample, rec_loss_total, total_loss, wgc_loss_sample, wgc_loss_total,
    LossWeights, RecTargets, WgcDenominator,
};
use active_core::network::{encode_all, init_params, Activation, ArchitectureSpec, AutoencoderParams};
use active_core::trainer::Objective;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::oracles::{self, rel_err, Rows};
use crate::{from_rows, mask_rows, random_dataset, rng, to_rows, uniform_rows};

/// Outcome of a randomized check.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub cases: usize,
    /// Largest observed error (relative, unless stated otherwise).
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Summary {
    fn record(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        if err > self.worst || err.is_nan() {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err < tol) {
            self.failures.push(format!("{} (error {err:e})", what()));
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Which part of the objective a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Rec,
    Wgc,
    Cgc,
    Combined,
}

pub const TERMS: [Term; 4] = [Term::Rec, Term::Wgc, Term::Cgc, Term::Combined];

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Rec => "rec",
            Term::Wgc => "wgc",
            Term::Cgc => "cgc",
            Term::Combined => "combined",
        }
    }

    fn weights(self, rng: &mut impl Rng) -> LossWeights {
        let only = |rec, wgc, cgc| LossWeights {
            alpha: 1.0,
            beta: 1.0,
            enable_rec: rec,
            enable_wgc: wgc,
            enable_cgc: cgc,
        };
        match self {
            Term::Rec => only(true, false, false),
            Term::Wgc => only(false, true, false),
            Term::Cgc => only(false, false, true),
            Term::Combined => LossWeights {
                alpha: rng.random_range(0.2..2.0),
                beta: rng.random_range(0.2..2.0),
                ..only(true, true, true)
            },
        }
    }
}

fn flat(p: &AutoencoderParams) -> Vec<f64> {
    p.tensors().into_iter().flatten().copied().collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A small random training problem.
pub struct GradientInstance {
    pub dataset: MultiViewDataset,
    pub targets: RecTargets,
    pub graph: RelationGraph,
    pub params: AutoencoderParams,
    pub batch: Vec<usize>,
    pub mode: WgcDenominator,
    pub exclude_missing: bool,
}

impl GradientInstance {
    /// `d_v <= 8`, `M <= 6`, `K <= 2`, `V <= 3`.
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let views = r.random_range(2..=3);
        let dims: Vec<usize> = (0..views).map(|_| r.random_range(2..=8)).collect();
        let n = 10;
        let mut dataset = random_dataset(&mut r, n, &dims, 0.3, false);
        dataset.num_clusters = r.random_range(2..=4);
        let k = r.random_range(1..=2);
        let initial = build_initial_graphs(&dataset, k).expect("initial graph");
        let targets = RecTargets::new(&dataset, &initial).expect("targets");
        let graph = if seed % 2 == 0 {
            initial
        } else {
            let z: Vec<Array2<f64>> = (0..views)
                .map(|_| from_rows(&uniform_rows(&mut r, n, dataset.num_clusters)))
                .collect();
            build_learned_graphs(&z, k).expect("learned graph")
        };
        let spec = ArchitectureSpec {
            input_dims: dims,
            hidden: vec![5, 4],
            latent: dataset.num_clusters,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        };
        // An encoder whose ReLUs are all dead maps every sample to the same
        // point; its gradient is identically zero, so draw again.
        let params = loop {
            let mut params = init_params(&spec, r.random());
            for t in params.tensors_mut() {
                for x in t.iter_mut() {
                    *x += r.random_range(-0.1..0.1);
                }
            }
            let z = encode_all(&params, &targets.means);
            if z.iter().all(|zv| zv.outer_iter().any(|row| row != zv.row(0))) {
                break params;
            }
        };
        let m = r.random_range(2..=6);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        order.truncate(m);
        GradientInstance {
            dataset,
            targets,
            graph,
            params,
            batch: order,
            mode: if r.random::<bool>() {
                WgcDenominator::Literal
            } else {
                WgcDenominator::ExcludeSelf
            },
            exclude_missing: r.random_range(0..4) == 0,
        }
    }

    pub fn objective(&self, weights: LossWeights) -> Objective<'_> {
        Objective {
            dataset: &self.dataset,
            targets: &self.targets,
            graph: &self.graph,
            weights,
            mode: self.mode,
            exclude_missing_anchors: self.exclude_missing,
        }
    }

    /// Norm-wise relative error between the analytic gradient and central
    /// differences over every parameter.
    pub fn gradient_error(&self, weights: LossWeights, h: f64) -> f64 {
        let obj = self.objective(weights);
        let (_, grads) = obj.evaluate(&self.params, &self.batch).expect("objective");
        let analytic = flat(&grads);
        let loss = |p: &AutoencoderParams| obj.evaluate(p, &self.batch).expect("objective").0.total;
        let mut numeric = Vec::with_capacity(analytic.len());
        let sizes: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        for (t, &len) in sizes.iter().enumerate() {
            for idx in 0..len {
                let mut plus = self.params.clone();
                plus.tensors_mut()[t][idx] += h;
                let mut minus = self.params.clone();
                minus.tensors_mut()[t][idx] -= h;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
            }
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
    }
}

/// Analytic versus finite-difference gradients, per term.
pub fn gradient_check(instances: usize, seed: u64, tol: f64) -> Vec<(Term, Summary)> {
    let mut out: Vec<(Term, Summary)> = TERMS.iter().map(|&t| (t, Summary::default())).collect();
    for i in 0..instances {
        let inst = GradientInstance::random(seed.wrapping_add(i as u64));
        let mut r = rng(seed ^ (i as u64 + 1).wrapping_mul(0x9E37));
        for (term, summary) in &mut out {
            let w = term.weights(&mut r);
            let err = inst.gradient_error(w, 1e-5);
            summary.record(err, tol, || format!("{} instance {i}", term.name()));
        }
    }
    out
}

fn targets_of(ds: &MultiViewDataset, graph: &RelationGraph, v: usize, i: usize) -> Vec<usize> {
    if ds.is_available(i, v) {
        vec![i]
    } else {
        graph.neighbors(v, i).to_vec()
    }
}

/// Library losses against loop references on random instances.
pub fn loss_oracle_check(instances: usize, seed: u64, tol: f64) -> Summary {
    let mut s = Summary::default();
    for inst in 0..instances {
        let mut r = rng(seed.wrapping_add(inst as u64));
        let views = r.random_range(1..=3);
        let dims: Vec<usize> = (0..views).map(|_| r.random_range(1..=5)).collect();
        let n = r.random_range(8..=12);
        let ds = random_dataset(&mut r, n, &dims, if views > 1 { 0.3 } else { 0.0 }, false);
        let k = r.random_range(1..=3);
        let graph = build_initial_graphs(&ds, k).expect("graph");
        let targets = RecTargets::new(&ds, &graph).expect("targets");
        let m = r.random_range(2..=8).min(n);
        let mut scope: Vec<usize> = (0..n).collect();
        scope.shuffle(&mut r);
        scope.truncate(m);

        // Reconstruction.
        let xhat: Vec<Rows> = dims.iter().map(|&d| uniform_rows(&mut r, m, d)).collect();
        let views_rows: Vec<Rows> = ds.views.iter().map(|x| to_rows(x.view())).collect();
        let mut expected = 0.0;
        for v in 0..views {
            for (row, &i) in scope.iter().enumerate() {
                let t: Vec<&[f64]> = targets_of(&ds, &graph, v, i)
                    .into_iter()
                    .map(|j| views_rows[v][j].as_slice())
                    .collect();
                let want = oracles::rec_sample(&xhat[v][row], &t);
                let got = rec_loss_sample(ndarray::ArrayView1::from(&xhat[v][row]), i, v, &ds, &graph).unwrap();
                s.record(rel_err(got, want), tol, || format!("rec sample {inst}/{v}/{i}"));
                expected += want;
            }
        }
        expected /= (m * views) as f64;
        let xh: Vec<Array2<f64>> = xhat.iter().map(from_rows).collect();
        let rec = rec_loss_total(&xh, &scope, &targets).unwrap();
        s.record(rel_err(rec, expected), tol, || format!("rec total {inst}"));

        // Contrastive and consistency terms on positions.
        let rows = r.random_range(m..=m + 8);
        let c = r.random_range(1..=5);
        let kk = r.random_range(1..=3);
        let zs: Vec<Rows> = (0..views).map(|_| uniform_rows(&mut r, rows, c)).collect();
        let zarr: Vec<Array2<f64>> = zs.iter().map(from_rows).collect();
        let zviews: Vec<_> = zarr.iter().map(|z| z.view()).collect();
        let mut positions: Vec<usize> = (0..rows).collect();
        positions.shuffle(&mut r);
        let members: Vec<usize> = positions[..m].to_vec();
        let slots: Vec<Vec<Vec<usize>>> = (0..views)
            .map(|_| {
                (0..m)
                    .map(|_| (0..kk).map(|_| r.random_range(0..rows)).collect())
                    .collect()
            })
            .collect();
        for mode in [WgcDenominator::Literal, WgcDenominator::ExcludeSelf] {
            let excl = mode == WgcDenominator::ExcludeSelf;
            let mut want = 0.0;
            for v in 0..views {
                for a in 0..m {
                    let o = oracles::wgc_sample(&zs[v], &members, &slots[v], a, excl);
                    let got = wgc_loss_sample(zviews[v], &members, &slots[v], a, mode).unwrap();
                    s.record(rel_err(got, o), tol, || format!("wgc sample {inst}/{v}/{a} {mode}"));
                    want += o;
                }
            }
            want /= (m * views) as f64;
            let mem = vec![members.clone(); views];
            let got = wgc_loss_total(&zviews, &mem, &slots, mode).unwrap();
            s.record(rel_err(got, want), tol, || format!("wgc total {inst} {mode}"));
        }

        let lists: Vec<Vec<Vec<usize>>> = (0..views)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let len = r.random_range(1..=3);
                        let mut l: Vec<usize> = (0..rows).collect();
                        l.shuffle(&mut r);
                        l.truncate(len);
                        l
                    })
                    .collect()
            })
            .collect();
        let mut want = 0.0;
        for v in 0..views {
            for list in &lists[v] {
                let o = oracles::cgc_sample(&zs, list, v);
                let got = cgc_loss_sample(&zviews, list, v);
                if views > 1 {
                    s.record(rel_err(got, o), tol, || format!("cgc sample {inst}/{v}"));
                } else {
                    s.expect(got == 0.0 && o == 0.0, || format!("cgc single view {inst}"));
                }
                want += o;
            }
        }
        want /= (m * views) as f64;
        let cgc = cgc_loss_total(&zviews, &lists).unwrap();
        if views > 1 {
            s.record(rel_err(cgc, want), tol, || format!("cgc total {inst}"));
        }

        let w = LossWeights {
            alpha: r.random_range(0.0..2.0),
            beta: r.random_range(0.0..2.0),
            enable_rec: r.random(),
            enable_wgc: r.random(),
            enable_cgc: r.random(),
        };
        let (a, b, c) = (r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
        let mut want = 0.0;
        if w.enable_rec {
            want += a;
        }
        if w.enable_wgc {
            want += w.alpha * b;
        }
        if w.enable_cgc {
            want += w.beta * c;
        }
        let got = total_loss(a, b, c, &w);
        s.record((got - want).abs() / want.abs().max(1e-300), tol, || format!("total {inst}"));
    }
    s
}

/// Neighbour search and transfer against exhaustive references.
pub fn graph_oracle_check(instances: usize, seed: u64) -> Summary {
    let mut s = Summary::default();
    for inst in 0..instances {
        let mut r = rng(seed.wrapping_add(inst as u64));
        let n = r.random_range(10..=200);
        let d = r.random_range(1..=4);
        let grid = inst % 2 == 0;
        let x = if grid {
            crate::grid_rows(&mut r, n, d, 4)
        } else {
            uniform_rows(&mut r, n, d)
        };
        let mut avail: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.8).collect();
        avail[0] = true;
        avail[1] = true;
        let k = r.random_range(1..=8);
        let xa = from_rows(&x);
        for i in (0..n).filter(|&i| avail[i]) {
            let got = knn_available(xa.view(), &avail, i, k).unwrap();
            let want = oracles::knn(&x, &avail, i, k);
            s.expect(got == want, || format!("knn {inst} sample {i}: {got:?} vs {want:?}"));
        }

        let z: Vec<Rows> = (0..2)
            .map(|_| if grid { crate::grid_rows(&mut r, n, 2, 3) } else { uniform_rows(&mut r, n, 3) })
            .collect();
        let za: Vec<Array2<f64>> = z.iter().map(from_rows).collect();
        let learned = build_learned_graphs(&za, k).unwrap();
        let all = vec![true; n];
        for (v, zv) in z.iter().enumerate() {
            for i in 0..n {
                let want = oracles::knn(zv, &all, i, k);
                s.expect(learned.neighbors(v, i) == want.as_slice(), || {
                    format!("learned {inst} view {v} sample {i}")
                });
            }
        }

        // Transfer on a masked multi-view instance.
        let views = r.random_range(2..=3);
        let nn = r.random_range(10..=40);
        let dims: Vec<usize> = (0..views).map(|_| r.random_range(1..=3)).collect();
        let missing = r.random_range(0.2..0.6);
        let kk = r.random_range(1..=4);
        // Redraw until every missing cell can be reached; a refusal must
        // agree with the reference.
        let (ds, graph, vrows, mask) = loop {
            let ds = random_dataset(&mut r, nn, &dims, missing, grid);
            let vrows: Vec<Rows> = ds.views.iter().map(|x| to_rows(x.view())).collect();
            let mask = mask_rows(&ds.mask);
            let unreachable = (0..views)
                .any(|v| (0..nn).any(|i| !mask[i][v] && oracles::transfer(&vrows, &mask, v, i, kk).is_empty()));
            match build_initial_graphs(&ds, kk) {
                Ok(graph) => {
                    s.expect(!unreachable, || format!("initial {inst}: built despite unreachable cell"));
                    break (ds, graph, vrows, mask);
                }
                Err(e) => s.expect(unreachable, || format!("initial {inst}: unexpected error {e}")),
            }
        };
        for v in 0..views {
            let av = ds.availability(v);
            for i in 0..nn {
                let want = if mask[i][v] {
                    oracles::knn(&vrows[v], &av, i, kk)
                } else {
                    oracles::transfer(&vrows, &mask, v, i, kk)
                };
                s.expect(graph.neighbors(v, i) == want.as_slice(), || {
                    format!("initial {inst} view {v} sample {i}: {:?} vs {want:?}", graph.neighbors(v, i))
                });
                if !mask[i][v] {
                    let direct = transfer_graph(&ds, &graph, v, i).unwrap();
                    s.expect(direct == want, || format!("transfer {inst} view {v} sample {i}"));
                }
            }
        }
        s.expect(graph.check_invariants(Some(&ds.mask)).is_ok(), || format!("invariants {inst}"));
    }
    s
}

/// Hand-computed metric values, permutation invariance and oracle
/// agreement on random labelings.
pub fn metric_check(relabelings: usize, seed: u64) -> Summary {
    let mut s = Summary::default();
    let truth = [0, 0, 1, 1];
    let pred = [0, 1, 0, 1];
    s.expect(eval::accuracy(&pred, &truth).unwrap() == 0.5, || "acc example".into());
    s.expect(eval::nmi(&pred, &truth).unwrap() == 0.0, || "nmi example".into());
    s.expect(eval::ari(&pred, &truth).unwrap() == -0.5, || "ari example".into());
    s.expect(eval::accuracy(&truth, &truth).unwrap() == 1.0, || "acc identity".into());
    s.expect(eval::nmi(&truth, &truth).unwrap() == 1.0, || "nmi identity".into());
    s.expect(eval::ari(&truth, &truth).unwrap() == 1.0, || "ari identity".into());
    s.expect(eval::ari(&[0, 0, 0], &[0, 0, 0]).unwrap() == 1.0, || "ari one cluster".into());
    s.expect(eval::accuracy(&[1, 1, 0, 0], &truth).unwrap() == 1.0, || "acc relabel".into());

    let mut r = rng(seed);
    for t in 0..relabelings {
        let c = r.random_range(2..=5);
        let n = r.random_range(c..=60);
        let truth: Vec<usize> = (0..n).map(|i| i % c).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut r);
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = eval::accuracy(&pred, &truth).unwrap();
        let b = eval::accuracy(&relabeled, &truth).unwrap();
        s.expect(a == b, || format!("acc permutation {t}: {a} vs {b}"));
        let o = oracles::accuracy(&pred, &truth);
        s.expect((a - o).abs() < 1e-12, || format!("acc oracle {t}: {a} vs {o}"));
        s.expect(a >= 1.0 / c as f64 - 1e-12, || format!("acc lower bound {t}"));
        let nm = eval::nmi(&pred, &truth).unwrap();
        let on = oracles::nmi(&pred, &truth);
        s.expect((nm - on).abs() < 1e-10, || format!("nmi oracle {t}: {nm} vs {on}"));
        let ar = eval::ari(&pred, &truth).unwrap();
        let oa = oracles::ari(&pred, &truth);
        s.expect((ar - oa).abs() < 1e-10, || format!("ari oracle {t}: {ar} vs {oa}"));
    }
    s
}
