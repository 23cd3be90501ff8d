//! Subcommand implementations, independent of argument parsing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use active_core::dataio::{generate_synthetic, save_dataset};
use anyhow::{bail, Context, Result};

use crate::config::{DataSource, ExperimentConfig};
use crate::runner::{
    build_dataset, evaluate_state, final_graph, metrics_csv, metrics_text, read_seeds, repeat_seeds,
    restore_state, run_single, RunMetrics, RunRecord,
};

/// Writes the synthetic dataset of `repeat` (before normalisation) to `out`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path, repeat: usize) -> Result<()> {
    let (data_seed, _) = repeat_seeds(cfg.seed, repeat);
    let Some(spec) = cfg.synthetic_spec(data_seed) else {
        bail!("gen-data needs a synthetic data source");
    };
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, out)?;
    fs::write(out.join("seeds.txt"), format!("data_seed={data_seed}\n"))?;
    Ok(())
}

/// Trains one model for `repeat`, optionally on a saved dataset, and writes
/// a run directory at `out` with a one-row `metrics.csv`.
pub fn train(cfg: &ExperimentConfig, out: &Path, data: Option<&Path>, repeat: usize) -> Result<RunMetrics> {
    let mut cfg = cfg.clone();
    cfg.sweep.clear();
    if let Some(dir) = data {
        cfg.data = DataSource::Path(dir.to_path_buf());
    }
    cfg.validate()?;
    let (data_seed, train_seed) = repeat_seeds(cfg.seed, repeat);
    let (metrics, _) = run_single(&cfg, data_seed, train_seed, out)?;
    let record = RunRecord {
        point: 0,
        repeat,
        data_seed,
        train_seed,
        axis_values: Vec::new(),
        outcome: Ok(metrics.clone()),
    };
    fs::write(out.join("metrics.csv"), metrics_csv(&cfg, &[record]))?;
    Ok(metrics)
}

/// Loads a run directory written by `train` or by a sweep.
fn load_run(run: &Path, data: Option<&Path>) -> Result<(ExperimentConfig, active_core::MultiViewDataset, u64)> {
    let mut cfg = ExperimentConfig::load(&run.join("config.txt"))?;
    if let Some(dir) = data {
        cfg.data = DataSource::Path(dir.to_path_buf());
    }
    let (data_seed, train_seed) = read_seeds(run)?;
    let ds = build_dataset(&cfg, data_seed)?;
    Ok((cfg, ds, train_seed))
}

fn checkpoint_of(run: &Path, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| run.join("checkpoints").join("final"), Path::to_path_buf)
}

/// Re-scores a saved model; writes `evaluation.txt` in the run directory.
pub fn evaluate(run: &Path, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<RunMetrics> {
    let (cfg, ds, train_seed) = load_run(run, data)?;
    let state = restore_state(&cfg, &ds, &checkpoint_of(run, checkpoint))?;
    let mut metrics = evaluate_state(&state, &ds, train_seed, cfg.train.kmeans_restarts)?;
    // Training history is not part of a checkpoint.
    metrics.epochs = cfg.train.max_epochs;
    metrics.final_loss = None;
    fs::write(run.join("evaluation.txt"), metrics_text(&metrics))?;
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphChoice {
    Initial,
    Learned,
}

impl std::str::FromStr for GraphChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "initial" => Ok(GraphChoice::Initial),
            "learned" => Ok(GraphChoice::Learned),
            _ => Err(format!("unknown graph {s:?} (expected initial or learned)")),
        }
    }
}

/// Writes one row per (view, sample, rank) edge.
pub fn dump_graphs(run: &Path, which: GraphChoice, output: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let (cfg, ds, _) = load_run(run, None)?;
    let state = restore_state(&cfg, &ds, &checkpoint_of(run, checkpoint))?;
    let graph = match which {
        GraphChoice::Initial => state.initial_graph.clone(),
        GraphChoice::Learned => final_graph(&state, cfg.train.k)?,
    };
    graph.write_csv(output)?;
    Ok(())
}

/// Writes the fused representation with labels, one row per sample.
pub fn dump_repr(run: &Path, output: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let (cfg, ds, _) = load_run(run, None)?;
    let state = restore_state(&cfg, &ds, &checkpoint_of(run, checkpoint))?;
    let z = state.common_representation();
    let mut s = String::from("sample,label");
    for c in 0..z.ncols() {
        let _ = write!(s, ",z{c}");
    }
    s.push('\n');
    for (i, row) in z.outer_iter().enumerate() {
        let label = ds.labels.as_ref().map_or(String::new(), |l| l[i].to_string());
        let _ = write!(s, "{i},{label}");
        for x in row {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    fs::write(output, s).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}
