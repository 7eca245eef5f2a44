//! Metric-scale one-shot alignment of a normalized mesh to an RGB-D
//! observation, query-view pose estimation, pose-error metrics, and a
//! synthetic scene generator.

pub mod align;
pub mod error;
pub mod geom;
pub mod io;
pub mod matching;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod scalar;
pub mod scenegen;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RigidTransform = geom::Rigid3<f64>;
pub type ScaledModelPose = geom::ScaledPose<f64>;
pub type CameraIntrinsics = geom::Pinhole<f64>;
pub type PointCloud = geom::PointSet<f64>;
pub type Correspondence2D3D = geom::Corr2D3D<f64>;

pub type RigidTransformF32 = geom::Rigid3<f32>;
pub type CameraIntrinsicsF32 = geom::Pinhole<f32>;

pub use nalgebra::{Matrix3, Vector2, Vector3};
