//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`data.`, `mask.`, `train.`, `eval.`,
//! `run.`). A `sweep.<key> = v1 v2 ...` line declares a sweep axis over
//! whitespace-separated values; several axes form a grid in file order.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use active_core::dataio::{MaskRegime, MaskSpec, SyntheticSpec};
use active_core::losses::WgcDenominator;
use active_core::trainer::TrainConfig;
use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        samples: usize,
        clusters: usize,
        dims: Vec<usize>,
        separation: f64,
    },
    /// Directory written by `gen-data` or laid out the same way.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub mask_regime: MaskRegime,
    pub mask_p: f64,
    /// Min-max scale every view before training.
    pub normalize: bool,
    pub train: TrainConfig,
    pub seed: u64,
    pub repeats: usize,
    pub out: Option<PathBuf>,
    /// Sweep axes as (key, values), in declaration order.
    pub sweep: Vec<(String, Vec<String>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                samples: 300,
                clusters: 3,
                dims: vec![10, 10],
                separation: 6.0,
            },
            mask_regime: MaskRegime::TwoViewPaired,
            mask_p: 30.0,
            normalize: true,
            train: TrainConfig::default(),
            seed: 0,
            repeats: 1,
            out: None,
            sweep: Vec::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("invalid value {value:?} for {key}: expected true or false"),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Loss switches as `rec+wgc+cgc`; `none` disables everything.
pub fn parse_losses(value: &str) -> Result<(bool, bool, bool)> {
    let mut on = (false, false, false);
    if value == "none" {
        return Ok(on);
    }
    for part in value.split('+') {
        match part.trim() {
            "rec" => on.0 = true,
            "wgc" => on.1 = true,
            "cgc" => on.2 = true,
            other => bail!("unknown loss term {other:?} (expected rec, wgc or cgc)"),
        }
    }
    Ok(on)
}

fn format_losses(rec: bool, wgc: bool, cgc: bool) -> String {
    let parts: Vec<&str> = [(rec, "rec"), (wgc, "wgc"), (cgc, "cgc")]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

impl ExperimentConfig {
    /// Sets one dotted key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "data.source" => match value {
                "synthetic" => {
                    if !matches!(self.data, DataSource::Synthetic { .. }) {
                        self.data = ExperimentConfig::default().data;
                    }
                }
                _ => bail!("invalid value {value:?} for data.source: use synthetic or set data.path"),
            },
            "data.path" => self.data = DataSource::Path(PathBuf::from(value)),
            "data.samples" | "data.clusters" | "data.dims" | "data.separation" => {
                let DataSource::Synthetic {
                    samples,
                    clusters,
                    dims,
                    separation,
                } = &mut self.data
                else {
                    bail!("{key} applies only to synthetic data");
                };
                match key {
                    "data.samples" => *samples = parse(key, value)?,
                    "data.clusters" => *clusters = parse(key, value)?,
                    "data.dims" => *dims = parse_list(key, value)?,
                    _ => *separation = parse(key, value)?,
                }
            }
            "data.normalize" => self.normalize = parse_bool(key, value)?,
            "mask.regime" => self.mask_regime = parse(key, value)?,
            "mask.p" => self.mask_p = parse(key, value)?,
            "train.k" => t.k = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.stage2_start" => t.stage2_start = parse(key, value)?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.q_rebuild_interval" => t.q_rebuild_interval = parse(key, value)?,
            "train.alpha" => t.weights.alpha = parse(key, value)?,
            "train.beta" => t.weights.beta = parse(key, value)?,
            "train.losses" => {
                let (rec, wgc, cgc) = parse_losses(value)?;
                t.weights.enable_rec = rec;
                t.weights.enable_wgc = wgc;
                t.weights.enable_cgc = cgc;
            }
            "train.wgc_denominator" => t.wgc_denominator = parse::<WgcDenominator>(key, value)?,
            "train.include_missing_in_wgc" => t.include_missing_in_wgc = parse_bool(key, value)?,
            "train.hidden" => t.hidden = parse_list(key, value)?,
            "train.finetune" => t.finetune = parse_bool(key, value)?,
            "train.finetune_epochs" => t.finetune_epochs = parse(key, value)?,
            "train.finetune_learning_rate" => t.finetune_learning_rate = parse(key, value)?,
            "train.finetune_gamma" => t.finetune_gamma = parse(key, value)?,
            "train.unit_embedding" => t.unit_embedding = parse_bool(key, value)?,
            "train.plateau_tolerance" => {
                t.plateau_tolerance = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "train.plateau_patience" => t.plateau_patience = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "eval.kmeans_restarts" => t.kmeans_restarts = parse(key, value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.repeats" => self.repeats = parse(key, value)?,
            "run.out" => self.out = Some(PathBuf::from(value)),
            _ => {
                if let Some(axis) = key.strip_prefix("sweep.") {
                    let values: Vec<String> = value.split_whitespace().map(str::to_string).collect();
                    if values.is_empty() {
                        bail!("sweep axis {axis} has no values");
                    }
                    for v in &values {
                        self.clone()
                            .set(axis, v)
                            .with_context(|| format!("sweep axis {axis}"))?;
                    }
                    self.sweep.retain(|(k, _)| k != axis);
                    self.sweep.push((axis.to_string(), values));
                } else {
                    bail!("unknown config key {key:?}");
                }
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(key.trim(), value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("run.repeats must be at least 1");
        }
        if !(0.0..=100.0).contains(&self.mask_p) {
            bail!("mask.p must lie in [0, 100], got {}", self.mask_p);
        }
        if let DataSource::Synthetic { dims, .. } = &self.data {
            if dims.is_empty() {
                bail!("data.dims must list at least one view");
            }
        }
        self.train.validate()?;
        for point in 0..self.num_points() {
            let cfg = self.at_point(point)?;
            cfg.train
                .validate()
                .with_context(|| format!("sweep point {point}"))?;
        }
        Ok(())
    }

    /// Number of grid points (1 without sweep axes).
    pub fn num_points(&self) -> usize {
        self.sweep.iter().map(|(_, v)| v.len()).product()
    }

    /// Axis values of grid point `index`; the last axis varies fastest.
    pub fn point_values(&self, index: usize) -> Vec<(String, String)> {
        let mut rem = index;
        let mut out = vec![(String::new(), String::new()); self.sweep.len()];
        for (slot, (key, values)) in self.sweep.iter().enumerate().rev() {
            out[slot] = (key.clone(), values[rem % values.len()].clone());
            rem /= values.len();
        }
        out
    }

    /// Configuration of one grid point, without sweep axes.
    pub fn at_point(&self, index: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.sweep.clear();
        for (key, value) in self.point_values(index) {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn synthetic_spec(&self, seed: u64) -> Option<SyntheticSpec> {
        match &self.data {
            DataSource::Synthetic {
                samples,
                clusters,
                dims,
                separation,
            } => Some(SyntheticSpec {
                num_samples: *samples,
                num_clusters: *clusters,
                dims: dims.clone(),
                separation: *separation,
                mask: MaskSpec {
                    regime: self.mask_regime,
                    p: self.mask_p,
                    seed,
                },
            }),
            DataSource::Path(_) => None,
        }
    }

    /// Every key with its current value, parseable by [`Self::parse_str`].
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        match &self.data {
            DataSource::Synthetic {
                samples,
                clusters,
                dims,
                separation,
            } => {
                let _ = writeln!(s, "data.source = synthetic");
                let _ = writeln!(s, "data.samples = {samples}");
                let _ = writeln!(s, "data.clusters = {clusters}");
                let _ = writeln!(s, "data.dims = {}", join(dims));
                let _ = writeln!(s, "data.separation = {separation}");
            }
            DataSource::Path(p) => {
                let _ = writeln!(s, "data.path = {}", p.display());
            }
        }
        let lines = [
            ("data.normalize", self.normalize.to_string()),
            ("mask.regime", self.mask_regime.to_string()),
            ("mask.p", self.mask_p.to_string()),
            ("train.k", t.k.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.stage2_start", t.stage2_start.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.q_rebuild_interval", t.q_rebuild_interval.to_string()),
            ("train.alpha", t.weights.alpha.to_string()),
            ("train.beta", t.weights.beta.to_string()),
            (
                "train.losses",
                format_losses(t.weights.enable_rec, t.weights.enable_wgc, t.weights.enable_cgc),
            ),
            ("train.wgc_denominator", t.wgc_denominator.to_string()),
            ("train.include_missing_in_wgc", t.include_missing_in_wgc.to_string()),
            ("train.hidden", join(&t.hidden)),
            ("train.finetune", t.finetune.to_string()),
            ("train.finetune_epochs", t.finetune_epochs.to_string()),
            ("train.finetune_learning_rate", t.finetune_learning_rate.to_string()),
            ("train.finetune_gamma", t.finetune_gamma.to_string()),
            ("train.unit_embedding", t.unit_embedding.to_string()),
            (
                "train.plateau_tolerance",
                t.plateau_tolerance.map_or("none".into(), |x| x.to_string()),
            ),
            ("train.plateau_patience", t.plateau_patience.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("eval.kmeans_restarts", t.kmeans_restarts.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.repeats", self.repeats.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        if let Some(out) = &self.out {
            let _ = writeln!(s, "run.out = {}", out.display());
        }
        for (k, values) in &self.sweep {
            let _ = writeln!(s, "sweep.{k} = {}", values.join(" "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ExperimentConfig::parse_str(
            "# blobs\ndata.samples = 90\ndata.dims = 4 6 5\nmask.regime = per-view-removal\nmask.p = 10 # percent\ntrain.k = 3\ntrain.losses = rec+cgc\n",
        )
        .unwrap();
        let DataSource::Synthetic { samples, dims, .. } = &cfg.data else {
            panic!()
        };
        assert_eq!(*samples, 90);
        assert_eq!(dims, &vec![4, 6, 5]);
        assert_eq!(cfg.mask_regime, MaskRegime::PerViewRemoval);
        assert_eq!(cfg.mask_p, 10.0);
        assert_eq!(cfg.train.k, 3);
        assert!(cfg.train.weights.enable_rec && !cfg.train.weights.enable_wgc && cfg.train.weights.enable_cgc);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse_str("train.kk = 3").is_err());
        assert!(ExperimentConfig::parse_str("train.k = three").is_err());
        assert!(ExperimentConfig::parse_str("train.k").is_err());
        assert!(ExperimentConfig::parse_str("sweep.train.nope = 1 2").is_err());
        assert!(ExperimentConfig::parse_str("sweep.train.k = 1 x").is_err());
        assert!(ExperimentConfig::parse_str("train.losses = rec+foo").is_err());
    }

    #[test]
    fn sweep_grid_order() {
        let cfg = ExperimentConfig::parse_str("sweep.train.alpha = 0.1 1\nsweep.train.k = 2 3 4").unwrap();
        assert_eq!(cfg.num_points(), 6);
        let vals: Vec<String> = (0..6)
            .map(|p| {
                cfg.point_values(p)
                    .iter()
                    .map(|(_, v)| v.as_str())
                    .collect::<Vec<_>>()
                    .join("/")
            })
            .collect();
        assert_eq!(vals, ["0.1/2", "0.1/3", "0.1/4", "1/2", "1/3", "1/4"]);
        let p = cfg.at_point(4).unwrap();
        assert_eq!((p.train.weights.alpha, p.train.k), (1.0, 3));
        assert!(p.sweep.is_empty());
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = ExperimentConfig::parse_str(
            "train.alpha = 0.25\ntrain.losses = wgc\ntrain.plateau_tolerance = 0.001\nsweep.train.k = 2 5",
        )
        .unwrap();
        cfg.out = Some(PathBuf::from("/tmp/x"));
        let again = ExperimentConfig::parse_str(&cfg.to_key_values()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn losses_format() {
        assert_eq!(parse_losses("none").unwrap(), (false, false, false));
        assert_eq!(format_losses(true, false, true), "rec+cgc");
        assert_eq!(format_losses(false, false, false), "none");
    }
}
