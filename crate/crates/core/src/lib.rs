//! Local-phase multi-feature chest image enhancement and a teacher/student
//! semi-supervised classification pipeline.
//!
//! The crate is organized around the stages of that pipeline:
//!
//! * [`enhance`] — FFT-domain quadrature filtering, local phase features
//!   (LwPA, LPE, ELEA) and their composition into three-channel
//!   multi-feature images.
//! * [`dataset`] — manifests, stratified subject-disjoint splits, image
//!   normalization and a procedural synthetic corpus for desk-scale runs.
//! * [`net`] — a compact dual-stream late-fusion CNN with hand-written
//!   reverse-mode gradients and plain SGD training.
//! * [`ssl`] — the five-step teacher/student pipeline: teacher training,
//!   pseudo-labeling, top-K selection, student training, finetuning.
//! * [`metrics`] — confusion matrices, macro precision/recall/F1, top-1,
//!   multi-seed aggregation and the paired t-test.

pub mod dataset;
pub mod enhance;
pub mod error;
pub mod image;
pub mod metrics;
pub mod net;
pub mod ssl;

pub use crate::error::{Error, Result};
pub use crate::image::{GrayImage, MultiFeatureImage};
pub use crate::enhance::{
    AttenuationImage, EnergyImage, EnhanceConfig, FilterBankConfig, PhaseImage, ProfileKind,
    RegularizerConfig,
};
pub use crate::dataset::{DatasetManifest, SampleRecord, SplitAssignment, SplitConfig};
pub use crate::net::{Gradient, ModelParams, NetConfig, TrainConfig};
pub use crate::metrics::{ConfusionMatrix, MetricsReport, TTestResult};
pub use crate::ssl::{PipelineConfig, PseudoLabel, PseudoLabelSet, SelectionConfig, Variant};
