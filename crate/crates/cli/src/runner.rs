//! Sweep execution and artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use active_core::dataio::{generate_synthetic, load_dataset, normalize, MultiViewDataset};
use active_core::eval::{self, MetricsReport};
use active_core::graph::{graph_error, RelationGraph};
use active_core::network::{load_checkpoint, save_checkpoint};
use active_core::rng::split_seed;
use active_core::trainer::{self, Adam, EpochRecord, GraphStage, TrainState};
use anyhow::{bail, Context, Result};

use crate::config::{DataSource, ExperimentConfig};

/// Seeds of one repeat. Every sweep point reuses them, so points are
/// compared on the same data and initialisation.
pub fn repeat_seeds(root: u64, repeat: usize) -> (u64, u64) {
    let base = split_seed(root, repeat as u64);
    (split_seed(base, 0), split_seed(base, 1))
}

/// Builds the dataset of one run.
pub fn build_dataset(cfg: &ExperimentConfig, data_seed: u64) -> Result<MultiViewDataset> {
    let ds = match &cfg.data {
        DataSource::Synthetic { .. } => {
            let spec = cfg.synthetic_spec(data_seed).expect("synthetic source");
            generate_synthetic(&spec)?
        }
        DataSource::Path(dir) => load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))?,
    };
    Ok(if cfg.normalize { normalize(&ds) } else { ds })
}

/// Evaluation of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub report: Option<MetricsReport>,
    /// Predicted clusters; always present.
    pub predicted: Vec<usize>,
    pub nrmse: Option<f64>,
    pub nrmse_baseline: Option<f64>,
    pub graph_error_initial: Option<f64>,
    pub graph_error_final: Option<f64>,
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// The learned graph on the final representations, or the initial graph if
/// training never reached the learned stage.
pub fn final_graph(state: &TrainState, k: usize) -> Result<RelationGraph> {
    Ok(match state.stage {
        GraphStage::Initial => state.initial_graph.clone(),
        GraphStage::Learned => state.learned_graphs(k)?,
    })
}

/// Clusters, imputes and scores a trained state.
pub fn evaluate_state(state: &TrainState, ds: &MultiViewDataset, train_seed: u64, restarts: usize) -> Result<RunMetrics> {
    let k = state.initial_graph.k();
    let predicted = state.predict(ds.num_clusters, train_seed, restarts)?;
    let (nrmse_views, nrmse, nrmse_baseline) = if ds.ground_truth_views.is_some() {
        let model = eval::nrmse(ds, &state.impute(ds))?;
        let base = eval::nrmse(ds, &eval::mean_imputation(ds))?;
        let (m, b) = (mean_present(&model), mean_present(&base));
        (model, m, b)
    } else {
        (Vec::new(), None, None)
    };
    let labels = ds.labels.as_deref();
    let report = labels
        .map(|l| MetricsReport::from_labels(predicted.clone(), l, nrmse_views))
        .transpose()?;
    Ok(RunMetrics {
        epochs: state.epoch,
        final_loss: state.history.last().map(|r| r.loss.total),
        report,
        predicted,
        nrmse,
        nrmse_baseline,
        graph_error_initial: labels.map(|l| graph_error(&state.initial_graph, Some(l))).transpose()?,
        graph_error_final: match labels {
            Some(l) => Some(graph_error(&final_graph(state, k)?, Some(l))?),
            None => None,
        },
    })
}

/// Rebuilds a state from saved parameters.
pub fn restore_state(cfg: &ExperimentConfig, ds: &MultiViewDataset, checkpoint: &Path) -> Result<TrainState> {
    let params = load_checkpoint(checkpoint)?;
    let mut state = TrainState::initialize(ds, &cfg.train)?;
    state.optimizer = Adam::for_params(&params);
    state.params = params;
    if cfg.train.max_epochs >= cfg.train.stage2_start {
        state.stage = GraphStage::Learned;
    }
    Ok(state)
}

/// Values of one metrics row, in [`METRIC_COLUMNS`] order.
fn metric_values(m: &RunMetrics) -> Vec<Option<f64>> {
    let r = m.report.as_ref();
    vec![
        r.map(|r| r.acc),
        r.map(|r| r.nmi),
        r.map(|r| r.ari),
        m.nrmse,
        m.nrmse_baseline,
        m.graph_error_initial,
        m.graph_error_final,
        m.final_loss,
    ]
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "acc",
    "nmi",
    "ari",
    "nrmse",
    "nrmse_baseline",
    "graph_error_initial",
    "graph_error_final",
    "final_loss",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_history(path: &Path, prefix: &[String], history: &[EpochRecord], append_header: bool) -> Result<String> {
    let mut s = String::new();
    if append_header {
        s.push_str("epoch,stage,rec,wgc,cgc,total,graph_error\n");
    }
    for r in history {
        for p in prefix {
            s.push_str(p);
            s.push(',');
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.stage.as_str(),
            r.loss.rec,
            r.loss.wgc,
            r.loss.cgc,
            r.loss.total,
            cell(r.graph_error)
        );
    }
    if !path.as_os_str().is_empty() {
        fs::write(path, &s).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(s)
}

/// One (sweep point, repeat) outcome.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub point: usize,
    pub repeat: usize,
    pub data_seed: u64,
    pub train_seed: u64,
    pub axis_values: Vec<String>,
    pub outcome: std::result::Result<RunMetrics, String>,
}

/// Per-point mean and sample standard deviation of every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub point: usize,
    pub axis_values: Vec<String>,
    pub runs: usize,
    pub failed: usize,
    /// (mean, std) per metric column; `None` when no run reported it.
    pub stats: Vec<Option<(f64, f64)>>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn aggregate(records: &[RunRecord], num_points: usize) -> Vec<AggregateRow> {
    (0..num_points)
        .map(|point| {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| r.point == point).collect();
            let ok: Vec<&RunMetrics> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let stats = (0..METRIC_COLUMNS.len())
                .map(|c| {
                    let vals: Vec<f64> = ok.iter().filter_map(|m| metric_values(m)[c]).collect();
                    mean_std(&vals)
                })
                .collect();
            AggregateRow {
                point,
                axis_values: rows.first().map(|r| r.axis_values.clone()).unwrap_or_default(),
                runs: rows.len(),
                failed: rows.len() - ok.len(),
                stats,
            }
        })
        .collect()
}

fn axis_header(cfg: &ExperimentConfig) -> String {
    cfg.sweep.iter().map(|(k, _)| format!(",{k}")).collect()
}

pub fn metrics_csv(cfg: &ExperimentConfig, records: &[RunRecord]) -> String {
    let mut s = format!(
        "point,repeat,data_seed,train_seed{},status,epochs,{}\n",
        axis_header(cfg),
        METRIC_COLUMNS.join(",")
    );
    for r in records {
        let _ = write!(s, "{},{},{},{}", r.point, r.repeat, r.data_seed, r.train_seed);
        for v in &r.axis_values {
            let _ = write!(s, ",{v}");
        }
        match &r.outcome {
            Ok(m) => {
                let _ = write!(s, ",ok,{}", m.epochs);
                for v in metric_values(m) {
                    let _ = write!(s, ",{}", cell(v));
                }
            }
            Err(_) => {
                s.push_str(",failed,");
                s.push_str(&",".repeat(METRIC_COLUMNS.len()));
            }
        }
        s.push('\n');
    }
    s
}

pub fn aggregate_csv(cfg: &ExperimentConfig, rows: &[AggregateRow]) -> String {
    let mut s = format!("point{},runs,failed", axis_header(cfg));
    for c in METRIC_COLUMNS {
        let _ = write!(s, ",{c}_mean,{c}_std");
    }
    s.push('\n');
    for row in rows {
        let _ = write!(s, "{}", row.point);
        for v in &row.axis_values {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{},{}", row.runs, row.failed);
        for st in &row.stats {
            match st {
                Some((m, sd)) => {
                    let _ = write!(s, ",{m},{sd}");
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

/// Result of a whole experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub out: PathBuf,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Runs every sweep point and repeat, writing artifacts under `out`.
///
/// A failing run is recorded and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_key_values())?;
    let points = cfg.num_points();
    let mut records = Vec::new();
    let mut history = String::from("point,repeat,epoch,stage,rec,wgc,cgc,total,graph_error\n");

    for point in 0..points {
        let pcfg = cfg.at_point(point)?;
        let axis_values: Vec<String> = cfg.point_values(point).into_iter().map(|(_, v)| v).collect();
        for repeat in 0..cfg.repeats {
            let (data_seed, train_seed) = repeat_seeds(cfg.seed, repeat);
            let run_dir = out.join("runs").join(format!("p{point}_r{repeat}"));
            let outcome = run_single(&pcfg, data_seed, train_seed, &run_dir);
            let outcome = match outcome {
                Ok((metrics, state)) => {
                    history.push_str(&write_history(
                        Path::new(""),
                        &[point.to_string(), repeat.to_string()],
                        &state.history,
                        false,
                    )?);
                    Ok(metrics)
                }
                Err(e) => {
                    let msg = format!("{e:#}");
                    eprintln!("point {point} repeat {repeat} failed: {msg}");
                    fs::create_dir_all(&run_dir)?;
                    fs::write(run_dir.join("error.txt"), format!("{msg}\n"))?;
                    Err(msg)
                }
            };
            records.push(RunRecord {
                point,
                repeat,
                data_seed,
                train_seed,
                axis_values: axis_values.clone(),
                outcome,
            });
        }
    }

    let aggregate = aggregate(&records, points);
    fs::write(out.join("metrics.csv"), metrics_csv(cfg, &records))?;
    fs::write(out.join("aggregate.csv"), aggregate_csv(cfg, &aggregate))?;
    fs::write(out.join("history.csv"), history)?;
    Ok(ExperimentResult {
        records,
        aggregate,
        out: out.to_path_buf(),
    })
}

/// Metrics as `key=value` lines.
pub fn metrics_text(m: &RunMetrics) -> String {
    let mut s = format!("epochs={}\n", m.epochs);
    for (name, v) in METRIC_COLUMNS.iter().zip(metric_values(m)) {
        if let Some(v) = v {
            let _ = writeln!(s, "{name}={v}");
        }
    }
    if let Some(r) = &m.report {
        for (v, x) in r.nrmse.iter().enumerate() {
            if let Some(x) = x {
                let _ = writeln!(s, "nrmse_view{v}={x}");
            }
        }
    }
    s
}

/// Trains and evaluates one configuration, writing its run directory
/// (config, seeds, history, metrics and `checkpoints/final`).
pub fn run_single(
    cfg: &ExperimentConfig,
    data_seed: u64,
    train_seed: u64,
    run_dir: &Path,
) -> Result<(RunMetrics, TrainState)> {
    let checkpoint_dir = run_dir.join("checkpoints");
    let ds = build_dataset(cfg, data_seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = train_seed;
    if tcfg.checkpoint_every > 0 {
        tcfg.checkpoint_dir = Some(checkpoint_dir.clone());
    }
    let state = trainer::train(&ds, &tcfg)?;
    let metrics = evaluate_state(&state, &ds, train_seed, tcfg.kmeans_restarts)?;

    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.sweep.clear();
    resolved.out = None;
    fs::write(run_dir.join("config.txt"), resolved.to_key_values())?;
    fs::write(run_dir.join("seeds.txt"), format!("data_seed={data_seed}\ntrain_seed={train_seed}\n"))?;
    write_history(&run_dir.join("history.csv"), &[], &state.history, true)?;
    fs::write(run_dir.join("metrics.txt"), metrics_text(&metrics))?;
    save_checkpoint(&state.params, checkpoint_dir.join("final"))?;
    Ok((metrics, state))
}

/// Reads `key=value` seed lines written next to a run.
pub fn read_seeds(run_dir: &Path) -> Result<(u64, u64)> {
    let path = run_dir.join("seeds.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut data = None;
    let mut train = None;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("data_seed", v)) => data = Some(v.trim().parse()?),
            Some(("train_seed", v)) => train = Some(v.trim().parse()?),
            _ => {}
        }
    }
    match (data, train) {
        (Some(d), Some(t)) => Ok((d, t)),
        _ => bail!("{} lacks data_seed or train_seed", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn repeat_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for r in 0..50 {
            let (a, b) = repeat_seeds(7, r);
            assert!(seen.insert(a) && seen.insert(b));
        }
        assert_eq!(repeat_seeds(7, 3), repeat_seeds(7, 3));
    }
}
