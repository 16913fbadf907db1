//! Synthesis of paired (complete, occluded) urban LiDAR scenes, plus the
//! numerical kernels, losses, metrics and merge step used to build and
//! evaluate scene gap-completion models.

pub mod boundary;
pub mod cloud;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod geom;
pub mod kdtree;
pub mod kernels;
pub mod metrics;
pub mod pipeline;
pub mod placement;
pub mod postprocess;
pub mod ply;
pub mod raycast;
pub mod rng;
pub mod scanstrip;
pub mod synthetic;

pub use cloud::{Frame, PointCloud};
pub use error::{Error, Result};
pub use geom::{Aabb, Point3, Vec3};
pub use kdtree::KdIndex;
pub use rng::SeededRng;
