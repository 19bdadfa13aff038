//! Rigid transforms, meshes, and the geometric utilities the estimator sits on.

mod aabb;
mod hausdorff;
mod io;
mod kdtree;
mod marching;
mod mesh;
mod pose;
mod sample;

pub use aabb::Aabb;
pub use hausdorff::{directed_hausdorff, two_way_hausdorff};
pub use io::{load_mesh, parse_obj, parse_stl, write_obj, MeshIoError};
pub use kdtree::KdTree;
pub use marching::{marching_cubes, marching_cubes_values, GridSpec};
pub use mesh::{SurfaceSampler, TriangleMesh};
pub use pose::{OrientedPoint, Pose};
pub use sample::poisson_disc_sample;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("operation requires a non-empty point set")]
    EmptySet,
    #[error("mesh has no area to sample")]
    ZeroArea,
    #[error("requested {requested} samples but only placed {placed}")]
    SamplingExhausted { requested: usize, placed: usize },
}
