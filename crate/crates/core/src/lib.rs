//! Analogical trajectory transfer between instance-labeled 3D point-cloud scenes.
//!
//! A trajectory recorded in a *target* scene is carried over to a *reference*
//! scene with a different but analogous layout. The pipeline groups objects
//! into small clusters, matches clusters across scenes with spectral graph
//! matching, fits a pool of thin-plate-spline maps per cluster pair, assembles
//! one map per cluster with beam search, merges the selection into a single
//! scene map, and finally refines the warped trajectory by first-order
//! descent on a shape / anchor / navigability / feature energy.
//!
//! Module map:
//!
//! * [`scene_io`]: scene and trajectory types, ATTS/ATTT binary formats,
//!   voxel downsampling.
//! * [`graph`]: object graph, Ward clustering, region propagation.
//! * [`matching`]: affinity matrix, spectral matching, cluster aggregation,
//!   top-K cluster assignment.
//! * [`maps`]: similarity seeds, 3D thin-plate splines, per-cluster candidates.
//! * [`assembly`]: distortion / navigability costs, beam search, global map.
//! * [`refine`]: trajectory energy, analytic gradients, Adam refinement.
//! * [`plan`]: occupancy grid and A* planning.
//! * [`metrics`]: evaluation metrics.
//! * [`synth`]: paired synthetic scenes with ground truth.
//! * [`pipeline`]: end-to-end transfer.

pub mod assembly;
pub mod assign;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod maps;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod plan;
pub mod refine;
pub mod rng;
pub mod scene_io;
pub mod spatial;
pub mod synth;

pub use config::Config;
pub use error::{Error, Result};
pub use scene_io::{Scene, Trajectory};

/// 3D point in scene coordinates (meters, y up).
pub type Point = nalgebra::Point3<f64>;
/// 3D displacement.
pub type Vec3 = nalgebra::Vector3<f64>;
