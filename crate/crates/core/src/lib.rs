//! Partial multi-view clustering with learned relation graphs.
//!
//! Per-view autoencoders are trained on incomplete multi-view data. Missing
//! samples borrow neighbours from views where they are observed; the graph
//! terms pull graph neighbours together within and across views, and the
//! fused representation is clustered at the end.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod network;
pub mod rng;
pub mod trainer;

pub use dataio::{MaskRegime, MaskSpec, MultiViewDataset, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use graph::RelationGraph;
pub use losses::{LossWeights, WgcDenominator};
pub use network::{ArchitectureSpec, AutoencoderParams};
pub use trainer::{train, TrainConfig, TrainState};
