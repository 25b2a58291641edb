//! Spectral functional maps between embedding spaces.
//!
//! Each modality's embedding matrix is turned into a symmetrized Gaussian kNN
//! graph, its normalized Laplacian is diagonalized, and a small operator `C`
//! between the two truncated eigenbases is fitted from anchor correspondences
//! (or from heat kernel signatures when no anchors are available). The crate
//! then scores cross-modal retrieval through `C`, compares against ambient
//! space baselines, and reports the spectral compatibility diagnostics:
//!
//! | quantity | meaning |
//! |----------|---------|
//! | spectral distance | RMS gap between max-normalized eigenvalue spectra |
//! | diagonal dominance | share of each row's energy of `C` on the diagonal |
//! | orthogonality error | `‖CᵀC − I‖_F / k`, zero for isometric maps |
//! | commutativity error | `‖CΛ_src − Λ_tgt C‖_F` |
//!
//! Data-parallel inner loops (kNN distances, score matrices, ranking, the
//! row-decoupled map solve) go through [`exec`], which uses rayon when the
//! `parallel` feature is on and can be forced sequential at runtime.

// `!(x >= 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataio;
pub mod diagnostics;
mod error;
pub mod exec;
pub mod fmap;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod retrieval;
pub mod spectral;
pub mod synth;

pub use dataio::{AnchorSet, EmbeddingMatrix, PipelineConfig};
pub use diagnostics::DiagnosticsReport;
pub use error::{Error, Result, StageExt};
pub use fmap::FunctionalMap;
pub use graph::{AffinityGraph, Laplacian};
pub use retrieval::{Direction, RecallTable, ScoreMatrix};
pub use spectral::{HksDescriptor, SpectralBasis};
