//! Next-touch selection, contact enforcement, and coverage termination.
//!
//! Target points come from one of three policies: the estimated surface
//! vertex with the highest posterior variance (while reconstructing), the
//! vertex of the believed shape farthest from every contact so far (once the
//! object looks known), or a random surface walk. A chosen target is only a
//! guess; the contact-enforcement procedure turns it into an actual touch by
//! pushing into the believed shape, and falling back to walking along the
//! real surface when the belief turns out to be hollow there.
//!
//! The estimator side of this module talks to the world exclusively through
//! [`TactileProbe`]; nothing here reads ground truth.

use crate::geometry::{KdTree, OrientedPoint, Pose};
use crate::gpis::{GpisModel, SurfaceEstimate};
use crate::measurement::Observation;
use crate::sdf::SdfField;
use nalgebra::{Point3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplorationError {
    #[error("target selection needs a non-empty surface")]
    EmptySurface,
    #[error("contact enforcement is stuck; no touch could be established")]
    Stuck,
}

/// What a tactile sensor can physically do: check one point for contact, and
/// sweep along a straight segment reporting the first surface crossing. All
/// world knowledge available to the estimator flows through these two calls.
pub trait TactileProbe {
    /// Probe a single point: a contact (with the measured surface normal) if
    /// the point lies on the surface within sensor tolerance, otherwise a
    /// free-space report at that point.
    fn probe_point(&self, x: &Point3<f64>) -> Observation;
    /// Move straight from `start` along unit `dir` for at most `max_len`,
    /// returning the first contact if the path crosses the surface.
    fn ray_march(
        &self,
        start: &Point3<f64>,
        dir: &Unit<Vector3<f64>>,
        max_len: f64,
    ) -> Option<OrientedPoint>;
}

/// The believed shape that enforcement pushes into: any implicit surface
/// with a signed distance and gradient.
pub trait ImplicitShape {
    fn signed_distance(&self, x: &Point3<f64>) -> f64;
    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64>;
}

/// A library shape at a hypothesised pose.
pub struct PosedShape<'a> {
    pub field: &'a SdfField,
    pub pose: Pose,
}

impl ImplicitShape for PosedShape<'_> {
    fn signed_distance(&self, x: &Point3<f64>) -> f64 {
        self.field.sample(&self.pose.inverse_transform_point(x))
    }

    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
        self.pose
            .rotate_vector(&self.field.gradient(&self.pose.inverse_transform_point(x)))
    }
}

impl ImplicitShape for GpisModel {
    fn signed_distance(&self, x: &Point3<f64>) -> f64 {
        self.mean_sd(x)
    }

    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
        let (mean, _) = self.predict(x);
        Vector3::new(mean[1], mean[2], mean[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOrigin {
    GpisVariance,
    MapDhd,
    RrtRandom,
}

#[derive(Debug, Clone, Copy)]
pub struct TargetPoint {
    pub x: Point3<f64>,
    pub origin: TargetOrigin,
}

/// One acquisition step's yield. At most one free-space point is ever
/// registered per step, and only when the believed surface was not there.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub contact: Option<OrientedPoint>,
    pub non_contact: Option<Point3<f64>>,
    /// Straight-line distance from the intended target to the achieved
    /// contact; a measure of how wrong the belief was locally.
    pub probe_path_length: f64,
}

impl StepOutcome {
    pub fn observations(&self) -> Vec<Observation> {
        let mut out = Vec::new();
        if let Some(c) = self.contact {
            out.push(Observation::Contact(c));
        }
        if let Some(p) = self.non_contact {
            out.push(Observation::Free(p));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationParams {
    /// How deep phase 1 pushes into the believed shape before giving up.
    pub delta_pen: f64,
    /// Sub-step of the phase-1 inward march.
    pub march_step: f64,
    /// Tangential step of the surface walk.
    pub tangent_step: f64,
    /// Path budget for the phase-3 surface walk.
    pub tangent_budget: f64,
    /// Step length of the random surface walk.
    pub rrt_step: f64,
    /// Coverage termination threshold on the directed Hausdorff distance.
    pub epsilon: f64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        Self {
            delta_pen: 1.0,
            march_step: 0.05,
            tangent_step: 0.15,
            tangent_budget: 3.0,
            rrt_step: 0.3,
            epsilon: 0.6,
        }
    }
}

/// The estimated-surface vertex with the highest posterior variance; ties go
/// to the lowest vertex index.
pub fn select_target_gpis(surface: &SurfaceEstimate) -> Result<TargetPoint, ExplorationError> {
    if surface.mesh.vertices.is_empty() {
        return Err(ExplorationError::EmptySurface);
    }
    let mut best = 0usize;
    for (i, &v) in surface.vertex_variance.iter().enumerate() {
        if v > surface.vertex_variance[best] {
            best = i;
        }
    }
    Ok(TargetPoint {
        x: surface.mesh.vertices[best],
        origin: TargetOrigin::GpisVariance,
    })
}

/// The believed-shape vertex farthest from every contact so far; ties go to
/// the lowest vertex index. Touching it maximally tightens the coverage
/// bound.
pub fn select_target_dhd(
    map_vertices: &[Point3<f64>],
    contacts: &[Point3<f64>],
) -> Result<TargetPoint, ExplorationError> {
    if map_vertices.is_empty() || contacts.is_empty() {
        return Err(ExplorationError::EmptySurface);
    }
    let tree = KdTree::build(contacts);
    let mut best = 0usize;
    let mut best_d = f64::NEG_INFINITY;
    for (i, v) in map_vertices.iter().enumerate() {
        let d = tree.nearest_dist_sq(v);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(TargetPoint {
        x: map_vertices[best],
        origin: TargetOrigin::MapDhd,
    })
}

/// max over `a` of the distance to the nearest point of `b`.
pub fn directed_hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let tree = KdTree::build(b);
    a.iter()
        .map(|p| tree.nearest_dist_sq(p))
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Exploration stops once every vertex of the believed shape has a contact
/// within `epsilon`.
pub fn should_terminate(
    est_vertices: &[Point3<f64>],
    contacts: &[Point3<f64>],
    epsilon: f64,
) -> bool {
    directed_hausdorff(est_vertices, contacts) <= epsilon
}

/// Walk one step along the true surface from an existing contact toward a
/// goal: step in the tangent plane, then re-find the surface by casting
/// along the contact normal. `None` when the goal direction is normal to the
/// surface or the surface falls away.
pub fn surface_walk_step(
    world: &impl TactileProbe,
    from: &OrientedPoint,
    toward: &Point3<f64>,
    step: f64,
) -> Option<OrientedPoint> {
    let n = from.normal.into_inner();
    let to_goal = toward - from.position;
    let tangent = to_goal - n * n.dot(&to_goal);
    let len = tangent.norm();
    if len < 1e-9 {
        return None;
    }
    let stepped = from.position + tangent * (step / len);
    // The surface bends away from the tangent plane by at most ~step at
    // object-scale curvature; bracket it from the outside.
    let cast = Unit::new_normalize(-n);
    world.ray_march(&(stepped + n * step), &cast, 2.0 * step)
}

/// Turn a target into an actual touch.
///
/// Phase 1 approaches from outside the believed shape and pushes along its
/// inward gradient until `delta_pen` below the believed surface, sweeping the
/// real world along each sub-step. If the world was never hit, the target
/// was hallucinated: phase 2 registers the single free-space point at the
/// target and sweeps straight toward the nearest real contact. Phase 3
/// re-touches that contact and walks the real surface toward the target
/// until a fresh contact registers.
pub fn enforce_contact(
    target: &TargetPoint,
    est: &impl ImplicitShape,
    world: &impl TactileProbe,
    contacts: &[OrientedPoint],
    params: &ExplorationParams,
) -> Result<StepOutcome, ExplorationError> {
    // Phase 1: retreat outward so the approach itself cannot tunnel through
    // the real surface, then march inward.
    let out_grad = est.gradient(&target.x);
    let mut p = if out_grad.norm() > 1e-9 {
        target.x + out_grad.normalize() * params.delta_pen
    } else {
        target.x
    };
    let max_steps = (4.0 * params.delta_pen / params.march_step) as usize + 40;
    for _ in 0..max_steps {
        if est.signed_distance(&p) <= -params.delta_pen {
            break;
        }
        let g = est.gradient(&p);
        let norm = g.norm();
        if norm < 1e-9 {
            break;
        }
        let dir = Unit::new_normalize(-g);
        if let Some(c) = world.ray_march(&p, &dir, params.march_step) {
            return Ok(StepOutcome {
                contact: Some(c),
                non_contact: None,
                probe_path_length: (c.position - target.x).norm(),
            });
        }
        p += dir.into_inner() * params.march_step;
    }
    // Phase 2: the believed surface is not there. Record that and head for
    // the nearest place the world is known to be.
    let non_contact = Some(target.x);
    let Some(nearest) = contacts.iter().min_by(|a, b| {
        (a.position - target.x)
            .norm_squared()
            .total_cmp(&(b.position - target.x).norm_squared())
    }) else {
        return Err(ExplorationError::Stuck);
    };
    let to_contact = nearest.position - target.x;
    let gap = to_contact.norm();
    if gap > 1e-9 {
        let dir = Unit::new_normalize(to_contact);
        if let Some(c) = world.ray_march(&target.x, &dir, gap + 0.05) {
            return Ok(StepOutcome {
                contact: Some(c),
                non_contact,
                probe_path_length: (c.position - target.x).norm(),
            });
        }
    }
    // Phase 3: slide along the real surface from the known contact toward
    // the target until a fresh touch registers.
    let mut cur = *nearest;
    let mut walked = 0.0;
    while walked < params.tangent_budget {
        match surface_walk_step(world, &cur, &target.x, params.tangent_step) {
            Some(c) => {
                walked += params.tangent_step;
                cur = c;
                if (c.position - nearest.position).norm() >= 0.5 * params.tangent_step {
                    return Ok(StepOutcome {
                        contact: Some(c),
                        non_contact,
                        probe_path_length: (c.position - target.x).norm(),
                    });
                }
            }
            None => break,
        }
    }
    Err(ExplorationError::Stuck)
}

/// Random surface walk: pick a uniform workspace point, walk one step toward
/// it from the nearest existing contact. Never registers free space.
pub fn rrt_explore<R: Rng + ?Sized>(
    world: &impl TactileProbe,
    contacts: &[OrientedPoint],
    rng: &mut R,
    params: &ExplorationParams,
) -> Result<StepOutcome, ExplorationError> {
    if contacts.is_empty() {
        return Err(ExplorationError::Stuck);
    }
    let half = crate::WORKSPACE_HALF;
    for _ in 0..10 {
        let goal = Point3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        );
        let nearest = contacts
            .iter()
            .min_by(|a, b| {
                (a.position - goal)
                    .norm_squared()
                    .total_cmp(&(b.position - goal).norm_squared())
            })
            .expect("non-empty");
        if let Some(c) = surface_walk_step(world, nearest, &goal, params.rrt_step) {
            return Ok(StepOutcome {
                contact: Some(c),
                non_contact: None,
                probe_path_length: (c.position - nearest.position).norm(),
            });
        }
    }
    Err(ExplorationError::Stuck)
}
