//! Zero-shot pose transfer for unrigged, stylized characters.
//!
//! The pipeline has three learned pieces, all small dense networks trained on CPU:
//!
//! - [`shape`]: an auto-decoder that maps a query point plus a per-character shape code
//!   to an embedding, with heads for occupancy, body-part probabilities and an inverse
//!   map back to the query point.
//! - [`pose`]: an implicit deformation network that predicts a per-point offset from
//!   (point, shape code, pose code).
//! - [`ttt`]: per-(character, pose) test-time fine-tuning of the deformation network
//!   with a part-wise distance-preservation loss, an edge loss and a driving-character loss.
//!
//! Ground truth comes from [`synth`], a procedural biped factory with rigs, skinning
//! weights, stylized variants and a PCA pose latent. [`metrics`] scores transfers.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod seed;
pub mod shape;
pub mod synth;
pub mod ttt;

pub use error::{Error, Result};
pub use mesh::{Mesh, Vec3};
