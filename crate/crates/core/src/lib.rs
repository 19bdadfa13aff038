//! Core engine for active tactile object perception.
//!
//! A probe touches an unknown rigid object one contact at a time. From the
//! stream of contact points (and the free-space information gathered on the
//! way) the engine maintains a joint belief over object class and 6-DOF pose,
//! decides whether the object matches anything in its model library, rebuilds
//! the surface of unfamiliar objects as a Gaussian-process implicit surface,
//! and picks the next touch location so that every step reduces the largest
//! remaining uncertainty.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: poses, meshes, spatial search, surface sampling, iso-surface
//!   extraction, mesh file formats
//! - [`sdf`]: discretised signed distance fields, primitive shapes, model
//!   library with on-disk caching
//! - [`measurement`]: contact and free-space likelihoods
//! - [`pf`]: the class + pose particle filter and its pair-feature proposals
//! - [`gpis`]: implicit-surface Gaussian process with derivative observations
//! - [`exploration`]: next-touch selection, contact enforcement, coverage
//!   termination
//! - [`simulator`]: ground-truth world used by the test harness
//!
//! Estimation code never reads simulator state. The only channel between the
//! two is the [`exploration::TactileProbe`] trait, which reports what a real
//! sensor would: contact locations and surface normals.

pub mod exploration;
pub mod geometry;
pub mod gpis;
pub mod measurement;
pub mod pf;
pub mod sdf;
pub mod simulator;

pub use geometry::{Aabb, GridSpec, OrientedPoint, Pose, TriangleMesh};
pub use sdf::{ObjectModel, SdfField};

/// Half-width of the cubic workspace; everything lives in `[-WS, WS]^3`.
pub const WORKSPACE_HALF: f64 = 6.0;
