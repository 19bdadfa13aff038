//! Signed distance fields: the shape representation every other module
//! predicts against. A field is a dense grid sampled either from an analytic
//! primitive, from a watertight mesh, or from a learned implicit surface.

mod build;
mod field;
mod model;
mod primitive;

pub use build::build_sdf_grid;
pub use field::{FieldSource, SdfField};
pub use model::{Library, LibraryManifest, ManifestEntry, ObjectModel};
pub use primitive::{PlacedPrimitive, PrimitiveSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdfError {
    #[error("mesh is not watertight; {count} bad edges, first few: {sample:?}")]
    NotWatertight {
        count: usize,
        sample: Vec<(u32, u32)>,
    },
    #[error("resolution {0} too coarse (need at least 16 nodes)")]
    ResolutionTooCoarse(usize),
    #[error("field cache: {0}")]
    BadCache(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("primitive: {0}")]
    Primitive(String),
    #[error("mesh: {0}")]
    MeshIo(#[from] crate::geometry::MeshIoError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
