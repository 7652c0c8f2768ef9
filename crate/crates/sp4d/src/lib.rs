//! Annotation-free decomposition of dynamic LiDAR sequences.
//!
//! Given a sequence of raw point-cloud frames, the pipeline produces
//! temporally consistent **4D superpoints** (per-frame clusters tracked
//! across time by scene-flow consistency), merges them into dynamic
//! **instances** via spatiotemporal similarity, selects a canonical frame
//! per instance and initializes per-point **deformation tracks**, and
//! classifies each instance as static or dynamic. Two smoothness
//! regularizers (edge-aware 2D flow smoothness and 3D KNN velocity
//! smoothness) are provided with verified analytic gradients.
//!
//! Stages, in pipeline order:
//!
//! 1. [`ground`] — per-frame ground removal (RANSAC plane fit).
//! 2. [`dbscan`] — per-frame clustering of non-ground points.
//! 3. [`flow`] — scene flow per adjacent frame pair (estimated or loaded).
//! 4. [`superpoint`] — cross-frame cluster matching and lifecycle rules.
//! 5. [`instance`] — superpoint similarity clustering, canonical frames,
//!    deformation tracks, static/dynamic split.
//! 6. [`reg`] — standalone smoothness regularizers with gradients.
//!
//! [`synth`] generates deterministic synthetic scenes with ground truth
//! and scores predictions against them; [`pipeline`], [`config`] and
//! [`io`] provide orchestration, configuration and the file formats used
//! by the `sp4d` command-line tool. See the crate examples for runnable
//! walkthroughs of each stage.

// index loops mirror the subscript math throughout; negated comparisons
// (`!(x > 0.0)`) deliberately reject NaN parameters
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dbscan;
pub mod error;
pub mod flow;
pub mod ground;
pub mod index;
pub mod instance;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod reg;
pub mod superpoint;
pub mod synth;

pub use error::{Result, Sp4dError};
pub use model::{FlowField, FrameSequence, PointFrame, GROUND, NOISE};
