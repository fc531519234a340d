//! Zero-shot 6D object pose estimation from rendered templates and
//! patch-descriptor correspondences.
//!
//! The geometric core is generic over the scalar type; the aliases below fix
//! it to `f64`, which the rest of the pipeline uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bop_eval;
pub mod descriptors;
pub mod geometry;
pub mod matching;
pub mod mesh;
pub mod pipeline;
pub mod pose_solver;
pub mod raster;
pub mod render;
pub mod scalar;
pub mod synthetic;

pub use scalar::RealScalar;

pub type Pose = geometry::Pose<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type TriMesh = mesh::TriMesh<f64>;
pub type CorrespondenceSet = matching::CorrespondenceSet<f64>;
pub type PoseEstimate = pose_solver::PoseEstimate<f64>;
