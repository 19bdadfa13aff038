//! Likelihood of tactile evidence under a hypothesised shape and pose.
//!
//! Two kinds of evidence exist. A *contact* reports a surface point and its
//! outward normal; under a hypothesis the point has some predicted signed
//! distance (zero if the hypothesis nails it) and a predicted normal, and
//! both residuals are scored with independent Gaussians. A *free* point is a
//! location the probe passed through without touching anything; its
//! likelihood is the probability that the true signed distance there is
//! positive given the predicted one.
//!
//! All log-likelihoods are normalised so a perfect prediction scores exactly
//! zero: the Gaussian normalising constants are dropped and the free-space
//! term tends to `ln 1` deep in empty space. That makes the running sum of a
//! hypothesis's scores directly interpretable as accumulated mismatch.

use crate::geometry::{OrientedPoint, Pose};
use crate::sdf::SdfField;
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Sensor noise scales. Distances share the workspace unit; the normal scale
/// is in Euclidean mismatch units (two unit vectors differ by at most 2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub sigma_d: f64,
    pub sigma_n: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_d: 0.50,
            sigma_n: 1.50,
        }
    }
}

/// One piece of tactile evidence, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    /// The probe touched the surface here, normal pointing out of the object.
    Contact(OrientedPoint),
    /// The probe occupied this point without feeling anything.
    Free(Point3<f64>),
}

impl Observation {
    pub fn is_contact(&self) -> bool {
        matches!(self, Observation::Contact(_))
    }

    pub fn position(&self) -> Point3<f64> {
        match self {
            Observation::Contact(op) => op.position,
            Observation::Free(p) => *p,
        }
    }
}

/// Log-likelihood of a contact whose sensed point lies on the true surface
/// (so the sensed distance is zero by construction). `pred_d` is the
/// hypothesis's signed distance at the sensed point, `pred_n` and `obs_n`
/// must be unit vectors.
pub fn contact_log_lik(
    pred_d: f64,
    pred_n: &Vector3<f64>,
    obs_n: &Vector3<f64>,
    noise: &NoiseParams,
) -> f64 {
    let nd = (pred_n - obs_n).norm_squared();
    -(pred_d * pred_d) / (2.0 * noise.sigma_d * noise.sigma_d)
        - nd / (2.0 * noise.sigma_n * noise.sigma_n)
}

/// Log-probability that a point with predicted signed distance `pred_d` is
/// truly in free space: `ln Phi(pred_d / sigma_d)`.
pub fn free_log_lik(pred_d: f64, noise: &NoiseParams) -> f64 {
    log_normal_cdf(pred_d / noise.sigma_d)
}

/// `ln Phi(u)` for the standard normal CDF, finite for any finite `u`.
///
/// The CDF route underflows to zero near `u = -37`; past that the standard
/// tail expansion `Phi(u) ~ phi(u) / (-u)` takes over.
pub fn log_normal_cdf(u: f64) -> f64 {
    let p = 0.5 * libm::erfc(-u / SQRT_2);
    if p > 0.0 {
        p.ln()
    } else {
        -0.5 * u * u - (-u).ln() - 0.5 * (2.0 * PI).ln()
    }
}

/// Score one observation against an object model held at a given pose.
///
/// The observation is pulled into the model frame, the field supplies the
/// predicted distance (and normal, for contacts), and the prediction is
/// scored in world frame.
pub fn observation_log_lik(
    field: &SdfField,
    pose: &Pose,
    obs: &Observation,
    noise: &NoiseParams,
) -> f64 {
    match obs {
        Observation::Contact(op) => {
            let q = pose.inverse_transform_point(&op.position);
            let d = field.sample(&q);
            let g = field.gradient(&q);
            let obs_n = op.normal.into_inner();
            let pred_n = if g.norm_squared() > 1e-18 {
                pose.rotate_vector(&g.normalize())
            } else {
                // Degenerate gradient (field plateau): no normal information,
                // so charge only the distance residual.
                obs_n
            };
            contact_log_lik(d, &pred_n, &obs_n, noise)
        }
        Observation::Free(p) => free_log_lik(field.sample(&pose.inverse_transform_point(p)), noise),
    }
}

/// Sum of [`observation_log_lik`] over a batch.
pub fn batch_log_lik(
    field: &SdfField,
    pose: &Pose,
    observations: &[Observation],
    noise: &NoiseParams,
) -> f64 {
    observations
        .iter()
        .map(|o| observation_log_lik(field, pose, o, noise))
        .sum()
}
