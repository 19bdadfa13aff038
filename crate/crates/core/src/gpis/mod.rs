//! Implicit-surface Gaussian process over signed distance and its gradient.
//!
//! Each contact contributes a 4-vector observation: signed distance zero plus
//! the measured surface normal. The GP prior mean is the signed distance (and
//! raw gradient) of a reference shape at a reference pose, so the posterior
//! is that shape warped to honour the touched points; far from all data it
//! falls back to the prior exactly.
//!
//! The kernel is the compactly supported cubic polynomial
//! `k(d) = a (2d^3 - 3Rd^2 + R^3)` for `d < R`, zero beyond, with its first
//! and mixed second derivatives filling the off-diagonal blocks of each 4x4
//! covariance block. The scale `a` doubles as a process-noise knob: the
//! larger it is, the less the posterior trusts the prior shape, and it is
//! re-optimised online against the data likelihood.

use crate::geometry::{marching_cubes_values, Aabb, GridSpec, OrientedPoint, Pose, TriangleMesh};
use crate::sdf::SdfField;
use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3, Vector4};
use nalgebra::linalg::Cholesky;
use nalgebra::Dyn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpisError {
    #[error("shape fit needs at least one contact")]
    NoContacts,
    #[error("kernel system stayed singular through the jitter ladder")]
    SingularKernel,
    #[error("reconstruction collapsed: posterior has no zero crossing on the grid")]
    ReconstructionCollapse,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpisParams {
    /// Initial kernel scale.
    pub a0: f64,
    /// Kernel support radius; must exceed the largest object extent so every
    /// surface pair stays correlated.
    pub r: f64,
    /// Sensor noise added to the diagonal.
    pub sigma: f64,
    /// Contacts beyond this are thinned by farthest-point selection to bound
    /// the cubic solve.
    pub train_cap: usize,
}

impl Default for GpisParams {
    fn default() -> Self {
        Self {
            a0: 1.0,
            r: 12.0,
            sigma: 1e-4,
            train_cap: 400,
        }
    }
}

/// Bounds for the kernel scale.
pub const SCALE_MIN: f64 = 1e-3;
pub const SCALE_MAX: f64 = 1e3;

/// Relative diagonal boosts (in units of the prior variance a R^3) tried in
/// turn when the kernel matrix is numerically singular.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// 4x4 covariance block between the (distance, gradient) observation at `x`
/// and the one at `xp`. Zero once the points are `r` or further apart.
pub fn thin_plate_block(x: &Point3<f64>, xp: &Point3<f64>, a: f64, r: f64) -> Matrix4<f64> {
    let diff = x - xp;
    let d = diff.norm();
    if d >= r {
        return Matrix4::zeros();
    }
    let mut b = Matrix4::zeros();
    b[(0, 0)] = a * (2.0 * d * d * d - 3.0 * r * d * d + r * r * r);
    if d < 1e-300 {
        // Coincident points: the cross terms vanish and the gradient block
        // is the isotropic limit 6 a r I.
        for i in 0..3 {
            b[(1 + i, 1 + i)] = 6.0 * a * r;
        }
        return b;
    }
    let s = 6.0 * a * (d - r);
    for i in 0..3 {
        // d k / d x_i and d k / d xp_j differ only by sign.
        b[(1 + i, 0)] = s * diff[i];
        b[(0, 1 + i)] = -s * diff[i];
        for j in 0..3 {
            let mut h = -6.0 * a * diff[i] * diff[j] / d;
            if i == j {
                h -= s;
            }
            b[(1 + i, 1 + j)] = h;
        }
    }
    b
}

/// Row 0 of the cross-covariance against a training point: covariance of the
/// query's signed distance with the training (distance, gradient) 4-vector.
fn sd_row(x: &Point3<f64>, xp: &Point3<f64>, a: f64, r: f64) -> [f64; 4] {
    let diff = x - xp;
    let d = diff.norm();
    if d >= r {
        return [0.0; 4];
    }
    let k = a * (2.0 * d * d * d - 3.0 * r * d * d + r * r * r);
    let s = -6.0 * a * (d - r);
    [k, s * diff.x, s * diff.y, s * diff.z]
}

/// Posterior surface: the zero level set mesh and the signed-distance
/// variance at each of its vertices.
pub struct SurfaceEstimate {
    pub mesh: TriangleMesh,
    pub vertex_variance: Vec<f64>,
}

/// A fitted implicit-surface model. Immutable after fitting, except for the
/// explicit kernel-scale re-optimisation.
pub struct GpisModel {
    pub train_points: Vec<OrientedPoint>,
    pub a: f64,
    pub r: f64,
    pub sigma: f64,
    /// Relative diagonal boost that made the factorization succeed (0 if
    /// none was needed).
    pub jitter: f64,
    /// Log marginal likelihood of the residuals at the current scale.
    pub log_marginal: f64,
    prior_field: SdfField,
    prior_pose: Pose,
    residual: DVector<f64>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Prior mean: signed distance and raw (unnormalised) gradient of the
/// reference shape, expressed in the world frame.
fn prior_mean(field: &SdfField, pose: &Pose, x: &Point3<f64>) -> Vector4<f64> {
    let local = pose.inverse_transform_point(x);
    let sd = field.sample(&local);
    let g = pose.rotate_vector(&field.gradient(&local));
    Vector4::new(sd, g.x, g.y, g.z)
}

/// Thin `contacts` down to at most `cap` by farthest-point selection,
/// after dropping near-duplicate positions. Deterministic: starts from the
/// first contact.
fn thin_training_set(contacts: &[OrientedPoint], cap: usize) -> Vec<OrientedPoint> {
    let mut unique: Vec<OrientedPoint> = Vec::new();
    for c in contacts {
        if unique
            .iter()
            .all(|u| (u.position - c.position).norm_squared() > 1e-12)
        {
            unique.push(*c);
        }
    }
    if unique.len() <= cap {
        return unique;
    }
    let mut chosen = vec![0usize];
    let mut dist: Vec<f64> = unique
        .iter()
        .map(|u| (u.position - unique[0].position).norm_squared())
        .collect();
    while chosen.len() < cap {
        let (next, _) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        chosen.push(next);
        for (i, u) in unique.iter().enumerate() {
            dist[i] = dist[i].min((u.position - unique[next].position).norm_squared());
        }
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| unique[i]).collect()
}

/// Unscaled kernel matrix (a = 1, no diagonal boost) over training points.
fn assemble_k0(points: &[Point3<f64>], r: f64) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(4 * n, 4 * n);
    for i in 0..n {
        for j in i..n {
            let b = thin_plate_block(&points[i], &points[j], 1.0, r);
            for bi in 0..4 {
                for bj in 0..4 {
                    k[(4 * i + bi, 4 * j + bj)] = b[(bi, bj)];
                    k[(4 * j + bj, 4 * i + bi)] = b[(bi, bj)];
                }
            }
        }
    }
    k
}

/// Factorize a K₀ scaled by `a` plus noise, walking the jitter ladder until
/// the Cholesky succeeds. Returns the factorization, the weights, the jitter
/// level used, and the log marginal likelihood of `residual`.
fn factorize(
    k0: &DMatrix<f64>,
    residual: &DVector<f64>,
    a: f64,
    r: f64,
    sigma: f64,
) -> Result<(Cholesky<f64, Dyn>, DVector<f64>, f64, f64), GpisError> {
    let n = k0.nrows();
    for &level in &JITTER_LADDER {
        let mut s = k0 * a;
        let boost = sigma * sigma + level * a * r * r * r;
        for i in 0..n {
            s[(i, i)] += boost;
        }
        if let Some(chol) = Cholesky::new(s) {
            let alpha = chol.solve(residual);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
            let log_marginal = -0.5 * residual.dot(&alpha)
                - 0.5 * log_det
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok((chol, alpha, level, log_marginal));
        }
    }
    Err(GpisError::SingularKernel)
}

/// Observation targets and prior values, flattened to 4 entries per contact.
fn residual_vector(
    points: &[OrientedPoint],
    field: &SdfField,
    pose: &Pose,
) -> DVector<f64> {
    let mut r = DVector::zeros(4 * points.len());
    for (i, c) in points.iter().enumerate() {
        let mu = prior_mean(field, pose, &c.position);
        // Target: exactly on the surface, gradient equal to the unit normal.
        r[4 * i] = 0.0 - mu[0];
        for j in 0..3 {
            r[4 * i + 1 + j] = c.normal[j] - mu[1 + j];
        }
    }
    r
}

impl GpisModel {
    /// Fit the posterior to contact observations around a reference shape.
    pub fn fit(
        contacts: &[OrientedPoint],
        prior_field: &SdfField,
        prior_pose: &Pose,
        params: &GpisParams,
    ) -> Result<Self, GpisError> {
        if contacts.is_empty() {
            return Err(GpisError::NoContacts);
        }
        let train_points = thin_training_set(contacts, params.train_cap);
        let positions: Vec<Point3<f64>> = train_points.iter().map(|c| c.position).collect();
        let residual = residual_vector(&train_points, prior_field, prior_pose);
        let k0 = assemble_k0(&positions, params.r);
        let a = params.a0.clamp(SCALE_MIN, SCALE_MAX);
        let (chol, alpha, jitter, log_marginal) =
            factorize(&k0, &residual, a, params.r, params.sigma)?;
        Ok(Self {
            train_points,
            a,
            r: params.r,
            sigma: params.sigma,
            jitter,
            log_marginal,
            prior_field: prior_field.clone(),
            prior_pose: *prior_pose,
            residual,
            alpha,
            chol,
        })
    }

    /// Posterior (distance, gradient) mean and signed-distance variance.
    pub fn predict(&self, x: &Point3<f64>) -> (Vector4<f64>, f64) {
        let n = self.train_points.len();
        let mut kx = DMatrix::zeros(4, 4 * n);
        for (i, c) in self.train_points.iter().enumerate() {
            let b = thin_plate_block(x, &c.position, self.a, self.r);
            for bi in 0..4 {
                for bj in 0..4 {
                    kx[(bi, 4 * i + bj)] = b[(bi, bj)];
                }
            }
        }
        let mean = prior_mean(&self.prior_field, &self.prior_pose, x)
            + Vector4::from_iterator((&kx * &self.alpha).iter().copied());
        let krow = kx.row(0).transpose();
        let solved = self.chol.solve(&krow);
        let var = self.a * self.r * self.r * self.r - krow.dot(&solved);
        (mean, var.max(0.0))
    }

    /// Signed-distance posterior mean only; the surface-extraction hot path.
    pub fn mean_sd(&self, x: &Point3<f64>) -> f64 {
        let mut acc = prior_mean(&self.prior_field, &self.prior_pose, x)[0];
        for (i, c) in self.train_points.iter().enumerate() {
            let row = sd_row(x, &c.position, self.a, self.r);
            for j in 0..4 {
                acc += row[j] * self.alpha[4 * i + j];
            }
        }
        acc
    }

    /// Signed-distance posterior variance only.
    pub fn var_sd(&self, x: &Point3<f64>) -> f64 {
        let n = self.train_points.len();
        let mut krow = DVector::zeros(4 * n);
        for (i, c) in self.train_points.iter().enumerate() {
            let row = sd_row(x, &c.position, self.a, self.r);
            for j in 0..4 {
                krow[4 * i + j] = row[j];
            }
        }
        let solved = self.chol.solve(&krow);
        (self.a * self.r * self.r * self.r - krow.dot(&solved)).max(0.0)
    }

    /// Zero level set of the posterior mean on `grid`, with per-vertex
    /// signed-distance variance.
    pub fn extract_surface(&self, grid: &GridSpec) -> Result<SurfaceEstimate, GpisError> {
        let [nx, ny, nz] = grid.dims;
        let mut values = vec![0.0f64; grid.node_count()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values[grid.node_index(i, j, k)] = self.mean_sd(&grid.node(i, j, k));
                }
            }
        }
        let mesh = marching_cubes_values(&values, grid, 0.0);
        if mesh.triangles.is_empty() {
            return Err(GpisError::ReconstructionCollapse);
        }
        let vertex_variance = mesh.vertices.iter().map(|v| self.var_sd(v)).collect();
        Ok(SurfaceEstimate {
            mesh,
            vertex_variance,
        })
    }

    /// A grid that tightly covers the prior shape and every training point,
    /// for per-step surface extraction.
    pub fn focused_grid(&self, max_nodes: usize) -> GridSpec {
        let corners = self.prior_field.grid.aabb();
        let mut min = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut take = |p: Point3<f64>| {
            min = min.inf(&p);
            max = max.sup(&p);
        };
        for &cx in &[corners.min.x, corners.max.x] {
            for &cy in &[corners.min.y, corners.max.y] {
                for &cz in &[corners.min.z, corners.max.z] {
                    take(self.prior_pose.transform_point(&Point3::new(cx, cy, cz)));
                }
            }
        }
        for c in &self.train_points {
            take(c.position);
        }
        let pad = Vector3::repeat(0.5);
        GridSpec::from_aabb(&Aabb::new(min - pad, max + pad), max_nodes)
    }

    /// Re-optimise the kernel scale against the data likelihood and
    /// refactorize. Gradient ascent in log(a): the eigenbasis of the kernel
    /// matrix makes each gradient evaluation linear in the data size, and
    /// the step is clamped (halving on oscillation) because the raw
    /// derivative scales with the observation count.
    pub fn optimize_kernel_scale(&mut self) -> f64 {
        let positions: Vec<Point3<f64>> = self.train_points.iter().map(|c| c.position).collect();
        let k0 = assemble_k0(&positions, self.r);
        let n = k0.nrows();
        let r3 = self.r * self.r * self.r;
        // Fold the jitter into the kernel side so the positive-definiteness
        // criterion is independent of a; escalate if this level is too low.
        let mut jitter = self.jitter;
        let eigen = loop {
            let mut shifted = k0.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter * r3;
            }
            let eigen = shifted.symmetric_eigen();
            let min_eig = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min_eig > 0.0 {
                break eigen;
            }
            match JITTER_LADDER.iter().find(|&&l| l > jitter) {
                Some(&next) => jitter = next,
                None => return self.a,
            }
        };
        let rt = eigen.eigenvectors.transpose() * &self.residual;
        let s2 = self.sigma * self.sigma;
        let grad = |ln_a: f64| {
            let a = ln_a.exp();
            let mut g = 0.0;
            for (i, &lam) in eigen.eigenvalues.iter().enumerate() {
                let denom = a * lam + s2;
                g += 0.5 * rt[i] * rt[i] * a * lam / (denom * denom);
                g -= 0.5 * a * lam / denom;
            }
            g
        };
        let mut ln_a = self.a.ln();
        let mut scale = 0.1;
        let mut prev_sign = 0.0f64;
        for _ in 0..25 {
            let g = grad(ln_a);
            if !g.is_finite() {
                return self.a;
            }
            if prev_sign != 0.0 && g.signum() != prev_sign {
                scale *= 0.5;
            }
            prev_sign = g.signum();
            let delta = (scale * g).clamp(-1.0, 1.0);
            ln_a = (ln_a + delta).clamp(SCALE_MIN.ln(), SCALE_MAX.ln());
            if delta.abs() < 1e-4 {
                break;
            }
        }
        let a = ln_a.exp().clamp(SCALE_MIN, SCALE_MAX);
        if let Ok((chol, alpha, jitter, log_marginal)) =
            factorize(&k0, &self.residual, a, self.r, self.sigma)
        {
            self.a = a;
            self.chol = chol;
            self.alpha = alpha;
            self.jitter = jitter;
            self.log_marginal = log_marginal;
        }
        self.a
    }
}

/// Log marginal likelihood of the contacts' residuals under a candidate
/// prior shape, at fixed kernel scale. Higher is a better prior.
pub fn gp_prior_fitness_log(
    contacts: &[OrientedPoint],
    prior_field: &SdfField,
    prior_pose: &Pose,
    params: &GpisParams,
) -> Result<f64, GpisError> {
    if contacts.is_empty() {
        return Err(GpisError::NoContacts);
    }
    let train = thin_training_set(contacts, params.train_cap);
    let positions: Vec<Point3<f64>> = train.iter().map(|c| c.position).collect();
    let residual = residual_vector(&train, prior_field, prior_pose);
    let k0 = assemble_k0(&positions, params.r);
    let a = params.a0.clamp(SCALE_MIN, SCALE_MAX);
    let (_, _, _, log_marginal) = factorize(&k0, &residual, a, params.r, params.sigma)?;
    Ok(log_marginal)
}
