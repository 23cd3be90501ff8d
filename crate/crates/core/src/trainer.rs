//! Two-stage optimisation of the joint objective.
//!
//! Stage I computes the graph terms on the initial graph built from raw
//! features (with transferred lists for missing samples). From
//! `stage2_start` on, the graph is rebuilt from the current representations
//! every `q_rebuild_interval` epochs. Reconstruction targets always follow
//! the initial graph. An optional KL clustering phase fine-tunes the
//! encoders and a set of centroids on the fused representation.

use std::path::PathBuf;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::dataio::MultiViewDataset;
use crate::error::{Error, Result};
use crate::eval::{self, KMeansResult};
use crate::graph::{build_initial_graphs, build_learned_graphs, graph_error, RelationGraph};
use crate::losses::{
    cgc_loss_with_grad, rec_loss_with_grad, wgc_loss_with_grad, LossWeights, RecTargets,
    WgcDenominator,
};
use crate::network::{encode_all, init_params, save_checkpoint, Activation, ArchitectureSpec, AutoencoderParams};
use crate::rng::{rng_from, split_seed, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Neighbours per relation-graph list.
    pub k: usize,
    pub max_epochs: usize,
    /// First epoch (1-based) trained on the learned graph.
    pub stage2_start: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub q_rebuild_interval: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub wgc_denominator: WgcDenominator,
    /// Whether samples missing from a view act as anchors and negatives in
    /// that view's contrastive term during stage I.
    pub include_missing_in_wgc: bool,
    /// Encoder hidden widths (decoder mirrors them).
    pub hidden: Vec<usize>,
    pub finetune: bool,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    /// Weight of the clustering loss against reconstruction while fine-tuning.
    pub finetune_gamma: f64,
    /// Build learned graphs and cluster (k-means and KL phase) on
    /// row-normalised representations instead of raw ones.
    pub unit_embedding: bool,
    pub kmeans_restarts: usize,
    /// Stop when the epoch loss improves by less than this relative amount
    /// over `plateau_patience` epochs. `None` trains for the full budget.
    pub plateau_tolerance: Option<f64>,
    pub plateau_patience: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint period in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            max_epochs: 2000,
            stage2_start: 300,
            learning_rate: 0.01,
            batch_size: 128,
            q_rebuild_interval: 10,
            seed: 0,
            weights: LossWeights::default(),
            wgc_denominator: WgcDenominator::Literal,
            include_missing_in_wgc: true,
            hidden: ArchitectureSpec::DEFAULT_HIDDEN.to_vec(),
            finetune: true,
            finetune_epochs: 50,
            finetune_learning_rate: 0.001,
            finetune_gamma: 0.1,
            unit_embedding: true,
            kmeans_restarts: eval::DEFAULT_KMEANS_RESTARTS,
            plateau_tolerance: None,
            plateau_patience: 50,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.stage2_start == 0 {
            return bad("stage-II start epoch must be positive".into());
        }
        if self.max_epochs > 0 && self.stage2_start > self.max_epochs {
            return bad(format!(
                "stage-II start {} exceeds max epochs {}",
                self.stage2_start, self.max_epochs
            ));
        }
        if self.q_rebuild_interval == 0 {
            return bad("graph rebuild interval must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.weights.alpha < 0.0 || self.weights.beta < 0.0 {
            return bad("loss weights must be nonnegative".into());
        }
        if self.kmeans_restarts == 0 {
            return bad("k-means restarts must be positive".into());
        }
        Ok(())
    }
}

/// Adam with bias correction over a fixed list of flat tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &AutoencoderParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adam::new(&sizes)
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, learning_rate: f64) {
        assert_eq!(params.len(), self.first.len(), "tensor count changed");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One Adam update of every autoencoder parameter.
pub fn optimizer_step(params: &mut AutoencoderParams, grads: &AutoencoderParams, state: &mut Adam, learning_rate: f64) {
    state.step(params.tensors_mut(), grads.tensors(), learning_rate);
}

/// Which graph the graph terms were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphStage {
    Initial,
    Learned,
}

impl GraphStage {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphStage::Initial => "initial",
            GraphStage::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rec: f64,
    pub wgc: f64,
    pub cgc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: GraphStage,
    pub loss: LossBreakdown,
    /// Label disagreement of the graph in use; `None` without labels.
    pub graph_error: Option<f64>,
}

/// The objective on one mini-batch, with exact gradients.
pub struct Objective<'a> {
    pub dataset: &'a MultiViewDataset,
    pub targets: &'a RecTargets,
    pub graph: &'a RelationGraph,
    pub weights: LossWeights,
    pub mode: WgcDenominator,
    /// Drop samples missing from a view from that view's contrastive term.
    pub exclude_missing_anchors: bool,
}

impl Objective<'_> {
    /// Loss of `batch` and its gradient with respect to every parameter.
    ///
    /// Batch members and all their graph neighbours are encoded in every
    /// view in a single pass, so neighbours receive gradient too.
    pub fn evaluate(&self, params: &AutoencoderParams, batch: &[usize]) -> Result<(LossBreakdown, AutoencoderParams)> {
        let (cr, cw, cc) = self.weights.coefficients();
        let views = params.num_views();
        let n = self.dataset.num_samples();
        let m = batch.len();
        let k = self.graph.k();

        // Gather positions: batch first, then neighbours in first-seen order.
        let mut position = vec![usize::MAX; n];
        let mut rows = Vec::with_capacity(m * (1 + views * k));
        for &i in batch {
            if position[i] != usize::MAX {
                return Err(Error::InvalidArgument(format!("sample {i} repeated in batch")));
            }
            position[i] = rows.len();
            rows.push(i);
        }
        if cw != 0.0 || cc != 0.0 {
            for &i in batch {
                for v in 0..views {
                    for &j in self.graph.neighbors(v, i) {
                        if position[j] == usize::MAX {
                            position[j] = rows.len();
                            rows.push(j);
                        }
                    }
                }
            }
        }

        let mut grads = params.zeros_like();
        let traces: Vec<_> = params
            .views
            .iter()
            .zip(&self.targets.means)
            .map(|(ae, x)| ae.encoder.forward_trace(x.select(Axis(0), &rows).view()))
            .collect();
        let zs: Vec<ArrayView2<'_, f64>> = traces.iter().map(|t| t.output().view()).collect();
        let mut dz: Vec<Array2<f64>> = zs.iter().map(|z| Array2::zeros(z.dim())).collect();
        let mut loss = LossBreakdown::default();

        if cr != 0.0 {
            let dec_traces: Vec<_> = params
                .views
                .iter()
                .zip(&zs)
                .map(|(ae, z)| ae.decoder.forward_trace(z.slice(s![..m, ..])))
                .collect();
            let xhat: Vec<Array2<f64>> = dec_traces.iter().map(|t| t.output().clone()).collect();
            let (rec, gx) = rec_loss_with_grad(&xhat, batch, self.targets)?;
            loss.rec = rec;
            for (v, g) in gx.into_iter().enumerate() {
                let gz = params.views[v]
                    .decoder
                    .backward(&dec_traces[v], g * cr, &mut grads.views[v].decoder);
                let mut head = dz[v].slice_mut(s![..m, ..]);
                head += &gz;
            }
        }

        if cw != 0.0 {
            let mut members = Vec::with_capacity(views);
            let mut neighbors = Vec::with_capacity(views);
            for v in 0..views {
                let keep: Vec<usize> = (0..m)
                    .filter(|&a| !self.exclude_missing_anchors || self.dataset.is_available(batch[a], v))
                    .collect();
                if keep.len() < 2 {
                    members.push(Vec::new());
                    neighbors.push(Vec::new());
                    continue;
                }
                neighbors.push(
                    keep.iter()
                        .map(|&a| {
                            (0..k)
                                .map(|slot| position[self.graph.neighbor_at(v, batch[a], slot)])
                                .collect()
                        })
                        .collect(),
                );
                members.push(keep);
            }
            let (wgc, g) = wgc_loss_with_grad(&zs, &members, &neighbors, self.mode)?;
            loss.wgc = wgc;
            for (d, g) in dz.iter_mut().zip(g) {
                d.scaled_add(cw, &g);
            }
        }

        if cc != 0.0 && views > 1 {
            let neighbors: Vec<Vec<Vec<usize>>> = (0..views)
                .map(|v| {
                    batch
                        .iter()
                        .map(|&i| self.graph.neighbors(v, i).iter().map(|&j| position[j]).collect())
                        .collect()
                })
                .collect();
            let (cgc, g) = cgc_loss_with_grad(&zs, &neighbors)?;
            loss.cgc = cgc;
            for (d, g) in dz.iter_mut().zip(g) {
                d.scaled_add(cc, &g);
            }
        }

        loss.total = crate::losses::total_loss(loss.rec, loss.wgc, loss.cgc, &self.weights);
        if !loss.total.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        for (v, d) in dz.into_iter().enumerate() {
            params.views[v]
                .encoder
                .backward(&traces[v], d, &mut grads.views[v].encoder);
        }
        Ok((loss, grads))
    }
}

/// Shuffled mini-batches; a trailing batch of one is merged into the previous one.
fn make_batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: AutoencoderParams,
    pub optimizer: Adam,
    /// Graph built on raw features; drives reconstruction targets throughout.
    pub initial_graph: RelationGraph,
    /// Graph used by the graph terms in the most recent epoch.
    pub graph: RelationGraph,
    pub stage: GraphStage,
    pub targets: RecTargets,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Cluster centres learned by KL fine-tuning.
    pub centroids: Option<Array2<f64>>,
    pub finetune_history: Vec<f64>,
    pub unit_embedding: bool,
}

impl TrainState {
    /// Untrained state for `dataset` under `config`.
    pub fn initialize(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let initial_graph = build_initial_graphs(dataset, config.k)?;
        let targets = RecTargets::new(dataset, &initial_graph)?;
        let arch = ArchitectureSpec {
            input_dims: dataset.dims(),
            hidden: config.hidden.clone(),
            latent: dataset.num_clusters,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        };
        let params = init_params(&arch, config.seed);
        Ok(TrainState {
            optimizer: Adam::for_params(&params),
            params,
            graph: initial_graph.clone(),
            initial_graph,
            stage: GraphStage::Initial,
            targets,
            epoch: 0,
            history: Vec::new(),
            centroids: None,
            finetune_history: Vec::new(),
            unit_embedding: config.unit_embedding,
        })
    }

    /// Encoder inputs: observed rows, or surrogates for missing ones.
    pub fn inputs(&self) -> &[Array2<f64>] {
        &self.targets.means
    }

    /// Per-view `N x C` representations of every sample.
    pub fn representations(&self) -> Vec<Array2<f64>> {
        encode_all(&self.params, self.inputs())
    }

    pub fn common_representation(&self) -> Array2<f64> {
        fuse_representations(&self.representations())
    }

    /// Views with every missing row replaced by its reconstruction.
    pub fn impute(&self, dataset: &MultiViewDataset) -> Vec<Array2<f64>> {
        let reprs = self.representations();
        dataset
            .views
            .iter()
            .enumerate()
            .map(|(v, x)| {
                let mut out = x.clone();
                let missing: Vec<usize> = (0..dataset.num_samples())
                    .filter(|&i| !dataset.is_available(i, v))
                    .collect();
                if !missing.is_empty() {
                    let z = reprs[v].select(Axis(0), &missing);
                    let rec = self.params.views[v].decoder.forward(z.view());
                    for (r, &i) in missing.iter().enumerate() {
                        out.row_mut(i).assign(&rec.row(r));
                    }
                }
                out
            })
            .collect()
    }

    /// Learned relation graphs over the current representations.
    pub fn learned_graphs(&self, k: usize) -> Result<RelationGraph> {
        let mut reprs = self.representations();
        if self.unit_embedding {
            reprs = reprs.iter().map(|z| unit_rows(z.view())).collect();
        }
        build_learned_graphs(&reprs, k)
    }

    /// The space the clustering head works in: `Z*`, or `Z*` with unit rows.
    pub fn clustering_embedding(&self) -> Array2<f64> {
        let z = self.common_representation();
        if self.unit_embedding {
            unit_rows(z.view())
        } else {
            z
        }
    }

    /// Cluster labels from k-means on the clustering embedding.
    pub fn predict(&self, num_clusters: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
        let z = self.clustering_embedding();
        Ok(eval::kmeans(z.view(), num_clusters, seed, restarts)?.labels)
    }

    /// Hard assignments to the fine-tuned centroids, if any.
    pub fn centroid_assignment(&self) -> Option<Vec<usize>> {
        let z = self.clustering_embedding();
        self.centroids
            .as_ref()
            .map(|mu| hard_assignment(&soft_assignment(z.view(), mu.view())))
    }
}

/// Element-wise sum of the per-view representations.
pub fn fuse_representations(reprs: &[Array2<f64>]) -> Array2<f64> {
    let mut out = reprs[0].clone();
    for z in &reprs[1..] {
        out += z;
    }
    out
}

/// Runs both training stages (and KL fine-tuning when enabled).
pub fn train(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::initialize(dataset, config)?;
    let labels = dataset.labels.as_deref();
    let mut rng = rng_from(config.seed, streams::SHUFFLE);

    for epoch in 1..=config.max_epochs {
        if epoch >= config.stage2_start && (epoch - config.stage2_start) % config.q_rebuild_interval == 0 {
            state.graph = state.learned_graphs(config.k).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            state.stage = GraphStage::Learned;
        }
        let exclude = !config.include_missing_in_wgc && state.stage == GraphStage::Initial;

        let mut sums = LossBreakdown::default();
        for batch in make_batches(dataset.num_samples(), config.batch_size, &mut rng) {
            let objective = Objective {
                dataset,
                targets: &state.targets,
                graph: &state.graph,
                weights: config.weights,
                mode: config.wgc_denominator,
                exclude_missing_anchors: exclude,
            };
            let (loss, grads) = objective
                .evaluate(&state.params, &batch)
                .map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
            let w = batch.len() as f64;
            sums.rec += loss.rec * w;
            sums.wgc += loss.wgc * w;
            sums.cgc += loss.cgc * w;
            sums.total += loss.total * w;
            optimizer_step(&mut state.params, &grads, &mut state.optimizer, config.learning_rate);
        }
        if !state.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameters".into(),
            });
        }
        let n = dataset.num_samples() as f64;
        let loss = LossBreakdown {
            rec: sums.rec / n,
            wgc: sums.wgc / n,
            cgc: sums.cgc / n,
            total: sums.total / n,
        };
        let graph_error = labels.map(|l| graph_error(&state.graph, Some(l))).transpose()?;
        state.history.push(EpochRecord {
            epoch,
            stage: state.stage,
            loss,
            graph_error,
        });
        state.epoch = epoch;

        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                save_checkpoint(&state.params, dir.join(format!("epoch_{epoch}")))?;
            }
        }
        if let Some(tol) = config.plateau_tolerance {
            let p = config.plateau_patience;
            if p > 0 && state.history.len() > p {
                let old = state.history[state.history.len() - 1 - p].loss.total;
                if old - loss.total <= tol * old.abs() {
                    break;
                }
            }
        }
    }

    if config.finetune && config.max_epochs > 0 {
        fine_tune_kl(&mut state, dataset, config)?;
    }
    Ok(state)
}

/// Rows scaled to unit length; zero rows stay zero.
pub fn unit_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut u = z.to_owned();
    for mut row in u.outer_iter_mut() {
        let r = row.dot(&row).sqrt();
        if r > 0.0 {
            row /= r;
        }
    }
    u
}

/// Back-propagates `du` (gradient w.r.t. `unit_rows(z)`) to `z`.
pub fn unit_rows_backward(z: ArrayView2<'_, f64>, du: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(z.dim());
    for ((zi, gi), mut out) in z.outer_iter().zip(du.outer_iter()).zip(dz.outer_iter_mut()) {
        let r = zi.dot(&zi).sqrt();
        if r > 0.0 {
            let proj = zi.dot(&gi) / (r * r);
            out.assign(&((&gi - &(&zi * proj)) / r));
        }
    }
    dz
}

/// Student-t soft assignments `q[i][c]` of rows of `z` to centroids.
pub fn soft_assignment(z: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut q = Array2::zeros((z.nrows(), centroids.nrows()));
    for (i, zi) in z.outer_iter().enumerate() {
        let mut sum = 0.0;
        for (c, mu) in centroids.outer_iter().enumerate() {
            let d = &zi - &mu;
            let w = 1.0 / (1.0 + d.dot(&d));
            q[[i, c]] = w;
            sum += w;
        }
        q.row_mut(i).mapv_inplace(|w| w / sum);
    }
    q
}

/// Sharpened target `p[i][c] ∝ q[i][c]^2 / f_c` with `f_c = sum_i q[i][c]`.
pub fn target_distribution(q: &Array2<f64>) -> Array2<f64> {
    let freq = q.sum_axis(Axis(0));
    let mut p = q.mapv(|x| x * x);
    for mut row in p.outer_iter_mut() {
        row /= &freq;
        let s = row.sum();
        row /= s;
    }
    p
}

fn hard_assignment(q: &Array2<f64>) -> Vec<usize> {
    q.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0
        })
        .collect()
}

/// Mean `KL(P || Q)` over rows and its gradients with respect to `z` and
/// the centroids (the target is held fixed).
pub fn kl_loss_with_grad(
    z: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = z.nrows() as f64;
    let mut dz = Array2::zeros(z.dim());
    let mut dmu = Array2::zeros(centroids.dim());
    let mut loss = 0.0;
    let mut w = Array1::zeros(centroids.nrows());
    for (i, zi) in z.outer_iter().enumerate() {
        for (c, mu) in centroids.outer_iter().enumerate() {
            let d = &zi - &mu;
            w[c] = 1.0 / (1.0 + d.dot(&d));
        }
        let sum = w.sum();
        for (c, mu) in centroids.outer_iter().enumerate() {
            let q = w[c] / sum;
            let p = target[[i, c]];
            if p > 0.0 {
                loss += p * (p / q).ln() / n;
            }
            let coef = 2.0 * (p - q) * w[c] / n;
            let d = &zi - &mu;
            let mut gz = dz.row_mut(i);
            gz.scaled_add(coef, &d);
            let mut gm = dmu.row_mut(c);
            gm.scaled_add(-coef, &d);
        }
    }
    (loss, dz, dmu)
}

/// KL clustering fine-tuning of the autoencoders and a set of centroids
/// initialised by k-means on the fused representation. Reconstruction stays
/// in the objective so the decoders keep up with the encoders.
pub fn fine_tune_kl(state: &mut TrainState, dataset: &MultiViewDataset, config: &TrainConfig) -> Result<()> {
    let c = dataset.num_clusters;
    let seed = split_seed(config.seed, streams::FINETUNE);
    let z = state.clustering_embedding();
    let KMeansResult { centroids, .. } = eval::kmeans(z.view(), c, seed, config.kmeans_restarts)?;
    let mut centroids = centroids;
    let mut opt = Adam::for_params(&state.params);
    let mut opt_mu = Adam::new(&[centroids.len()]);
    let mut rng = rng_from(seed, streams::SHUFFLE);
    let views = state.params.num_views();

    for epoch in 0..config.finetune_epochs {
        let z = state.clustering_embedding();
        let target = target_distribution(&soft_assignment(z.view(), centroids.view()));
        let mut epoch_loss = 0.0;
        for batch in make_batches(dataset.num_samples(), config.batch_size, &mut rng) {
            let traces: Vec<_> = (0..views)
                .map(|v| {
                    state.params.views[v]
                        .encoder
                        .forward_trace(state.targets.means[v].select(Axis(0), &batch).view())
                })
                .collect();
            let mut zb = traces[0].output().clone();
            for t in &traces[1..] {
                zb += t.output();
            }
            let pb = target.select(Axis(0), &batch);
            let (kl, dz, dmu) = if state.unit_embedding {
                let (kl, du, dmu) = kl_loss_with_grad(unit_rows(zb.view()).view(), centroids.view(), pb.view());
                (kl, unit_rows_backward(zb.view(), du.view()), dmu)
            } else {
                kl_loss_with_grad(zb.view(), centroids.view(), pb.view())
            };
            let dz = dz * config.finetune_gamma;
            let dmu = dmu * config.finetune_gamma;
            let mut grads = state.params.zeros_like();
            let mut dzs = vec![dz; views];
            let dec_traces: Vec<_> = (0..views)
                .map(|v| state.params.views[v].decoder.forward_trace(traces[v].output().view()))
                .collect();
            let xhat: Vec<Array2<f64>> = dec_traces.iter().map(|t| t.output().clone()).collect();
            let (rec, gx) = rec_loss_with_grad(&xhat, &batch, &state.targets)?;
            for (v, g) in gx.into_iter().enumerate() {
                dzs[v] += &state.params.views[v]
                    .decoder
                    .backward(&dec_traces[v], g, &mut grads.views[v].decoder);
            }
            let loss = rec + config.finetune_gamma * kl;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: state.epoch + epoch + 1,
                    detail: "non-finite clustering loss".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            for ((v, trace), d) in traces.iter().enumerate().zip(dzs) {
                state.params.views[v]
                    .encoder
                    .backward(trace, d, &mut grads.views[v].encoder);
            }
            optimizer_step(&mut state.params, &grads, &mut opt, config.finetune_learning_rate);
            opt_mu.step(
                vec![centroids.as_slice_mut().expect("standard layout")],
                vec![dmu.as_slice().expect("standard layout")],
                config.finetune_learning_rate,
            );
        }
        state
            .finetune_history
            .push(epoch_loss / dataset.num_samples() as f64);
    }
    state.centroids = Some(centroids);
    Ok(())
}
