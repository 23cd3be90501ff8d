//! View-specific fully connected autoencoders with hand-written
//! backpropagation, Glorot initialisation and a CSV-per-tensor checkpoint
//! format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::dataio::MultiViewDataset;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::rng::{rng_from, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => x.mapv_inplace(sigmoid),
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the
    /// activation's output.
    fn backprop(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => grad.zip_mut_with(output, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(output, |g, &y| *g *= y * (1.0 - y)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `y = act(x W + b)` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        self.activation.apply(&mut y);
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_trace`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    acts: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace holds the input")
    }
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.forward(h.view());
        }
        h
    }

    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap().view());
            acts.push(next);
        }
        MlpTrace { acts }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input rows.
    pub fn backward(&self, trace: &MlpTrace, grad_output: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = grad_output;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&trace.acts[l + 1], &mut delta);
            let g = &mut grads.layers[l];
            ndarray::linalg::general_mat_mul(1.0, &trace.acts[l].t(), &delta, 1.0, &mut g.weight);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weight.t());
        }
        delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewAutoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Parameters of every view's autoencoder. Gradients and optimiser moments
/// use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub views: Vec<ViewAutoencoder>,
}

impl AutoencoderParams {
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.views.first().map_or(0, |v| v.encoder.output_dim())
    }

    /// Flat views of every weight and bias, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for view in &self.views {
            for layer in view.encoder.layers.iter().chain(&view.decoder.layers) {
                out.push(layer.weight.as_slice().expect("standard layout"));
                out.push(layer.bias.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for view in &mut self.views {
            for layer in view.encoder.layers.iter_mut().chain(&mut view.decoder.layers) {
                out.push(layer.weight.as_slice_mut().expect("standard layout"));
                out.push(layer.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Layer widths and activations shared by all views.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub input_dims: Vec<usize>,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Latent width, equal to the cluster count.
    pub latent: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl ArchitectureSpec {
    pub const DEFAULT_HIDDEN: [usize; 2] = [256, 64];

    /// `[d_v, 256, 64, C]` encoders with ReLU and sigmoid reconstructions.
    pub fn for_dataset(dataset: &MultiViewDataset) -> Self {
        ArchitectureSpec {
            input_dims: dataset.dims(),
            hidden: Self::DEFAULT_HIDDEN.to_vec(),
            latent: dataset.num_clusters,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }

    fn widths(&self, view: usize) -> Vec<usize> {
        let mut w = vec![self.input_dims[view]];
        w.extend(&self.hidden);
        w.push(self.latent);
        w
    }

    /// Zero-initialised parameters with this architecture.
    pub fn zeros(&self) -> AutoencoderParams {
        let views = (0..self.input_dims.len())
            .map(|v| {
                let widths = self.widths(v);
                let depth = widths.len() - 1;
                let encoder = Mlp {
                    layers: (0..depth)
                        .map(|l| {
                            let act = if l + 1 == depth {
                                Activation::Linear
                            } else {
                                self.hidden_activation
                            };
                            Dense::zeros(widths[l], widths[l + 1], act)
                        })
                        .collect(),
                };
                let rev: Vec<usize> = widths.iter().rev().copied().collect();
                let decoder = Mlp {
                    layers: (0..depth)
                        .map(|l| {
                            let act = if l + 1 == depth {
                                self.output_activation
                            } else {
                                self.hidden_activation
                            };
                            Dense::zeros(rev[l], rev[l + 1], act)
                        })
                        .collect(),
                };
                ViewAutoencoder { encoder, decoder }
            })
            .collect();
        AutoencoderParams { views }
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn init_params(spec: &ArchitectureSpec, seed: u64) -> AutoencoderParams {
    let mut params = spec.zeros();
    let mut rng = rng_from(seed, streams::INIT);
    for view in &mut params.views {
        for layer in view.encoder.layers.iter_mut().chain(&mut view.decoder.layers) {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
    }
    params
}

/// Encoder input for a sample missing from `view`: the mean of its
/// transferred neighbours' observed rows.
pub fn surrogate_input(
    dataset: &MultiViewDataset,
    graph: &RelationGraph,
    view: usize,
    sample: usize,
) -> Result<Array1<f64>> {
    if dataset.is_available(sample, view) {
        return Err(Error::AlreadyAvailable { sample, view });
    }
    let neighbors = graph.neighbors(view, sample);
    if neighbors.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "empty transferred graph for sample {sample} in view {view}"
        )));
    }
    let mut mean = Array1::zeros(dataset.views[view].ncols());
    for &j in neighbors {
        mean += &dataset.row(view, j);
    }
    mean /= neighbors.len() as f64;
    Ok(mean)
}

/// Per-view encoder inputs with every missing row replaced by its surrogate.
pub fn encoder_inputs(dataset: &MultiViewDataset, graph: &RelationGraph) -> Result<Vec<Array2<f64>>> {
    let mut inputs = dataset.views.clone();
    for (v, x) in inputs.iter_mut().enumerate() {
        for i in 0..dataset.num_samples() {
            if !dataset.is_available(i, v) {
                let s = surrogate_input(dataset, graph, v, i)?;
                x.row_mut(i).assign(&s);
            }
        }
    }
    Ok(inputs)
}

fn check_view(params: &AutoencoderParams, view: usize) -> Result<&ViewAutoencoder> {
    params.views.get(view).ok_or(Error::DimensionMismatch {
        expected: params.num_views(),
        got: view,
    })
}

pub fn encode(params: &AutoencoderParams, view: usize, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let ae = check_view(params, view)?;
    if x.len() != ae.encoder.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: ae.encoder.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }
    Ok(ae.encoder.forward(x.insert_axis(Axis(0))).row(0).to_owned())
}

pub fn decode(params: &AutoencoderParams, view: usize, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let ae = check_view(params, view)?;
    if z.len() != ae.decoder.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: ae.decoder.input_dim(),
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoder input".into()));
    }
    Ok(ae.decoder.forward(z.insert_axis(Axis(0))).row(0).to_owned())
}

/// Encodes every row of every view.
pub fn encode_all(params: &AutoencoderParams, inputs: &[Array2<f64>]) -> Vec<Array2<f64>> {
    params
        .views
        .iter()
        .zip(inputs)
        .map(|(ae, x)| ae.encoder.forward(x.view()))
        .collect()
}

const CHECKPOINT_FORMAT: &str = "active-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

fn write_tensor(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let mut out = String::new();
    for row in data.chunks(cols.max(1)) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_tensor(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(rows * cols);
    for (lineno, line) in text.lines().enumerate() {
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("bad number {cell:?}"),
            })?;
            out.push(v);
        }
    }
    if out.len() != rows * cols {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{} values, expected {rows}x{cols}", out.len()),
        });
    }
    Ok(out)
}

/// Writes `manifest.txt` plus one CSV per weight and bias.
///
/// Manifest lines after the header are
/// `layer=<view>,<encoder|decoder>,<index>,<activation>,<fan_in>,<fan_out>`;
/// tensors live in `v{view}_{part}_{index}_{weight|bias}.csv`.
pub fn save_checkpoint(params: &AutoencoderParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "format={CHECKPOINT_FORMAT}\nversion={CHECKPOINT_VERSION}\nviews={}\n",
        params.num_views()
    );
    for (v, ae) in params.views.iter().enumerate() {
        for (part, mlp) in [("encoder", &ae.encoder), ("decoder", &ae.decoder)] {
            for (l, layer) in mlp.layers.iter().enumerate() {
                let _ = writeln!(
                    manifest,
                    "layer={v},{part},{l},{},{},{}",
                    layer.activation.as_str(),
                    layer.fan_in(),
                    layer.fan_out()
                );
                let stem = format!("v{v}_{part}_{l}");
                write_tensor(
                    &dir.join(format!("{stem}_weight.csv")),
                    layer.weight.as_slice().expect("standard layout"),
                    layer.fan_out(),
                )?;
                write_tensor(
                    &dir.join(format!("{stem}_bias.csv")),
                    layer.bias.as_slice().expect("standard layout"),
                    layer.fan_out(),
                )?;
            }
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<AutoencoderParams> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut views: Vec<ViewAutoencoder> = Vec::new();
    let mut declared_views = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno + 1, "expected key=value".into()))?;
        match key {
            "format" if value != CHECKPOINT_FORMAT => {
                return Err(bad(lineno + 1, format!("unknown format {value:?}")));
            }
            "version" if value != CHECKPOINT_VERSION.to_string() => {
                return Err(bad(lineno + 1, format!("unsupported version {value}")));
            }
            "views" => {
                declared_views = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| bad(lineno + 1, "bad view count".into()))?,
                );
            }
            "layer" => {
                let f: Vec<&str> = value.split(',').collect();
                if f.len() != 6 {
                    return Err(bad(lineno + 1, "layer line needs 6 fields".into()));
                }
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| bad(lineno + 1, format!("bad integer {s:?}")))
                };
                let (v, l) = (num(f[0])?, num(f[2])?);
                let activation: Activation = f[3].parse()?;
                let (fan_in, fan_out) = (num(f[4])?, num(f[5])?);
                while views.len() <= v {
                    views.push(ViewAutoencoder {
                        encoder: Mlp { layers: Vec::new() },
                        decoder: Mlp { layers: Vec::new() },
                    });
                }
                let mlp = match f[1] {
                    "encoder" => &mut views[v].encoder,
                    "decoder" => &mut views[v].decoder,
                    other => return Err(bad(lineno + 1, format!("unknown part {other:?}"))),
                };
                if mlp.layers.len() != l {
                    return Err(bad(lineno + 1, "layers out of order".into()));
                }
                let stem = format!("v{v}_{}_{l}", f[1]);
                let weight = read_tensor(&dir.join(format!("{stem}_weight.csv")), fan_in, fan_out)?;
                let bias = read_tensor(&dir.join(format!("{stem}_bias.csv")), 1, fan_out)?;
                mlp.layers.push(Dense {
                    weight: Array2::from_shape_vec((fan_in, fan_out), weight)
                        .expect("length checked"),
                    bias: Array1::from(bias),
                    activation,
                });
            }
            _ => {}
        }
    }
    if declared_views != Some(views.len()) {
        return Err(bad(0, "view count does not match layers".into()));
    }
    Ok(AutoencoderParams { views })
}
