//! Filter-level consistency checks against brute force.
//!
//! A toy planar world with two classes (a unit sphere and a box) is small
//! enough to evaluate the exact posterior on a dense pose grid with the same
//! likelihood the filter uses. The filter's class marginal must agree with
//! that reference, and every particle's running evidence must equal a from-
//! scratch rescore of all observations.

use nalgebra::{Point3, Vector3};
use palpate_core::geometry::{Aabb, GridSpec, OrientedPoint, Pose};
use palpate_core::measurement::{batch_log_lik, NoiseParams, Observation};
use palpate_core::pf::{table_from_models, Filter, FilterModel, FilterParams};
use palpate_core::sdf::{FieldSource, ObjectModel, SdfField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const BOX_HALF: [f64; 3] = [1.0, 0.65, 0.8];

fn box_sdf(p: &Point3<f64>, h: &Vector3<f64>) -> f64 {
    let q = Vector3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
    let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

fn toy_models() -> Vec<FilterModel> {
    let sphere_aabb = Aabb::new(Point3::new(-2.2, -2.2, -2.2), Point3::new(2.2, 2.2, 2.2));
    let sphere_field = SdfField::from_fn(
        GridSpec::from_aabb(&sphere_aabb, 48),
        FieldSource::AnalyticPrimitive,
        |p| p.coords.norm() - 1.0,
    );
    let h = Vector3::new(BOX_HALF[0], BOX_HALF[1], BOX_HALF[2]);
    let box_aabb = Aabb::new(Point3::new(-2.2, -1.9, -2.0), Point3::new(2.2, 1.9, 2.0));
    let box_field = SdfField::from_fn(
        GridSpec::from_aabb(&box_aabb, 48),
        FieldSource::AnalyticPrimitive,
        move |p| box_sdf(&p, &h),
    );
    let sphere = ObjectModel::from_field("toy-sphere", 0, false, sphere_field).unwrap();
    let boxm = ObjectModel::from_field("toy-box", 1, false, box_field).unwrap();
    vec![
        FilterModel::from_object(&sphere),
        FilterModel::from_object(&boxm),
    ]
}

/// Surface point and outward normal of the box cross-section in the z = 0
/// plane, along planar direction `theta` from the box centre (box frame).
fn box_planar_contact(theta: f64) -> (Point3<f64>, Vector3<f64>) {
    let (dx, dy) = (theta.cos(), theta.sin());
    let tx = if dx.abs() > 1e-12 {
        BOX_HALF[0] / dx.abs()
    } else {
        f64::INFINITY
    };
    let ty = if dy.abs() > 1e-12 {
        BOX_HALF[1] / dy.abs()
    } else {
        f64::INFINITY
    };
    if tx <= ty {
        (
            Point3::new(BOX_HALF[0] * dx.signum(), tx * dy, 0.0),
            Vector3::new(dx.signum(), 0.0, 0.0),
        )
    } else {
        (
            Point3::new(ty * dx, BOX_HALF[1] * dy.signum(), 0.0),
            Vector3::new(0.0, dy.signum(), 0.0),
        )
    }
}

fn truth_pose() -> Pose {
    Pose::new(Vector3::new(0.35, -0.2, 0.0), Vector3::new(0.5, 0.0, 0.0))
}

fn box_truth_contacts(n: usize) -> Vec<OrientedPoint> {
    let pose = truth_pose();
    (0..n)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (p, nrm) = box_planar_contact(theta);
            OrientedPoint::new(pose.transform_point(&p), pose.rotate_vector(&nrm))
        })
        .collect()
}

fn sphere_truth_contacts(n: usize) -> Vec<OrientedPoint> {
    let shift = Vector3::new(0.35, -0.2, 0.0);
    (0..n)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let d = Vector3::new(theta.cos(), theta.sin(), 0.0);
            OrientedPoint::new(Point3::from(shift + d), d)
        })
        .collect()
}

/// Sensor noise sharp enough that fifteen contacts are decisive. At the
/// default sigmas both classes stay plausible, and then the planar grid and
/// the full 6-DOF filter integrate over different pose spaces, so their
/// marginals measure different things; the comparison is only meaningful
/// where the posterior concentrates.
fn sharp_noise() -> NoiseParams {
    NoiseParams {
        sigma_d: 0.1,
        sigma_n: 0.5,
    }
}

/// Exact class marginal over a dense planar pose grid (x, y in [-1, 1],
/// yaw over the full turn), uniform prior over cells and classes.
fn grid_class_marginal(models: &[FilterModel], contacts: &[OrientedPoint]) -> Vec<f64> {
    let obs: Vec<Observation> = contacts.iter().map(|c| Observation::Contact(*c)).collect();
    let noise = sharp_noise();
    let nxy = 21;
    let nyaw = 24;
    let mut scores: Vec<(usize, f64)> = Vec::new();
    for (class, m) in models.iter().enumerate() {
        for ix in 0..nxy {
            let x = -1.0 + 2.0 * ix as f64 / (nxy - 1) as f64;
            for iy in 0..nxy {
                let y = -1.0 + 2.0 * iy as f64 / (nxy - 1) as f64;
                for iw in 0..nyaw {
                    let yaw = 2.0 * std::f64::consts::PI * iw as f64 / nyaw as f64;
                    let pose = Pose::new(Vector3::new(x, y, 0.0), Vector3::new(yaw, 0.0, 0.0));
                    scores.push((class, batch_log_lik(&m.field, &pose, &obs, &noise)));
                }
            }
        }
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, s| a.max(s.1));
    let mut mass = vec![0.0; models.len()];
    let mut total = 0.0;
    for (class, ll) in scores {
        let w = (ll - max).exp();
        mass[class] += w;
        total += w;
    }
    mass.iter().map(|m| m / total).collect()
}

fn run_filter(models: Arc<Vec<FilterModel>>, contacts: &[OrientedPoint], seed: u64) -> Filter {
    let table = Arc::new(table_from_models(&models));
    let params = FilterParams {
        noise: sharp_noise(),
        ..FilterParams::default()
    };
    let mut filter = Filter::new(models, table, params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in contacts {
        filter.step(&[Observation::Contact(*c)], &mut rng);
    }
    filter
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

#[test]
fn class_marginal_matches_grid_posterior_box_truth() {
    let models = Arc::new(toy_models());
    let contacts = box_truth_contacts(15);
    let reference = grid_class_marginal(&models, &contacts);
    let filter = run_filter(models.clone(), &contacts, 42);
    let marginal = filter.class_marginals();
    let tv = total_variation(&marginal, &reference);
    assert!(
        tv <= 0.1,
        "particle marginal {marginal:?} vs grid {reference:?}, tv {tv:.3}"
    );
    // Fifteen contacts tracing a rectangle are decisive.
    assert!(reference[1] > 0.95, "grid reference not decisive: {reference:?}");
    assert_eq!(filter.map().unwrap().class_id, 1);
    assert!(filter.known());
}

#[test]
fn class_marginal_matches_grid_posterior_sphere_truth() {
    let models = Arc::new(toy_models());
    let contacts = sphere_truth_contacts(15);
    let reference = grid_class_marginal(&models, &contacts);
    let filter = run_filter(models.clone(), &contacts, 7);
    let marginal = filter.class_marginals();
    let tv = total_variation(&marginal, &reference);
    assert!(
        tv <= 0.1,
        "particle marginal {marginal:?} vs grid {reference:?}, tv {tv:.3}"
    );
    assert!(reference[0] > 0.95, "grid reference not decisive: {reference:?}");
    assert_eq!(filter.map().unwrap().class_id, 0);
}

#[test]
fn particle_evidence_equals_rescoring_all_observations() {
    let models = Arc::new(toy_models());
    let table = Arc::new(table_from_models(&models));
    // Proposals off (their evidence is deliberately approximate for non-best
    // candidates); survivors and copies must carry exact running evidence.
    let params = FilterParams {
        lambda: 1e-9,
        n_particles: 400,
        ..FilterParams::default()
    };
    let mut filter = Filter::new(models.clone(), table, params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let contacts = box_truth_contacts(8);
    let mut all_obs: Vec<Observation> = Vec::new();
    for (k, c) in contacts.iter().enumerate() {
        let mut batch = vec![Observation::Contact(*c)];
        if k % 3 == 1 {
            // Interleave a free-space point outside everything.
            batch.push(Observation::Free(Point3::new(3.0, 3.0, 1.0)));
        }
        let report = filter.step(&batch, &mut rng);
        assert_eq!(report.proposed, 0, "lambda should suppress proposals");
        all_obs.extend(batch);
    }
    assert_eq!(filter.observations().len(), all_obs.len());
    let noise = filter.params.noise;
    for p in filter.particles() {
        let rescored = batch_log_lik(&models[p.class_id].field, &p.pose, &all_obs, &noise);
        assert!(
            (p.log_evidence - rescored).abs() <= 1e-9 * rescored.abs().max(1.0),
            "running evidence {} vs rescored {}",
            p.log_evidence,
            rescored
        );
    }
}
