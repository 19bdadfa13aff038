use super::SdfError;
use crate::geometry::{Aabb, Pose};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

/// Analytic signed distance primitives for the procedural object set.
///
/// All are exact except `Superellipsoid`, whose distance is the standard
/// first-order estimate `|p| * (1 - F^(-e1/2))` from the inside-outside
/// function F; the estimate is sign-correct everywhere and within a few
/// percent of true distance near the surface, which is where it is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveSpec {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    /// Ring around the z axis; the zero-radius circle lies in the xy plane.
    Torus {
        major_radius: f64,
        minor_radius: f64,
    },
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
    },
    Superellipsoid {
        semi_axes: [f64; 3],
        e1: f64,
        e2: f64,
    },
    Union {
        parts: Vec<PlacedPrimitive>,
    },
}

/// A primitive posed inside a union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedPrimitive {
    pub shape: PrimitiveSpec,
    #[serde(default)]
    pub translation: [f64; 3],
    /// Yaw, pitch, roll (intrinsic Z-Y-X), radians.
    #[serde(default)]
    pub euler: [f64; 3],
}

impl PlacedPrimitive {
    fn pose(&self) -> Pose {
        Pose::new(
            Vector3::from(self.translation),
            Vector3::from(self.euler),
        )
    }
}

impl PrimitiveSpec {
    /// Signed distance, negative inside.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            PrimitiveSpec::Sphere { radius } => p.coords.norm() - radius,
            PrimitiveSpec::Box { half_extents } => {
                let h = Vector3::from(*half_extents);
                let q = p.coords.abs() - h;
                let outside = q.map(|c| c.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            PrimitiveSpec::Torus {
                major_radius,
                minor_radius,
            } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major_radius;
                (ring * ring + p.z * p.z).sqrt() - minor_radius
            }
            PrimitiveSpec::Capsule { a, b, radius } => {
                let a = Vector3::from(*a);
                let b = Vector3::from(*b);
                let ab = b - a;
                let t = if ab.norm_squared() < 1e-18 {
                    0.0
                } else {
                    ((p.coords - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
                };
                (p.coords - (a + ab * t)).norm() - radius
            }
            PrimitiveSpec::Superellipsoid { semi_axes, e1, e2 } => {
                let r = p.coords.norm();
                let s = Vector3::from(*semi_axes);
                if r < 1e-9 {
                    return -s.min();
                }
                let fxy = (p.x / s.x).abs().powf(2.0 / e2)
                    + (p.y / s.y).abs().powf(2.0 / e2);
                let f = fxy.powf(e2 / e1) + (p.z / s.z).abs().powf(2.0 / e1);
                r * (1.0 - f.powf(-e1 / 2.0))
            }
            PrimitiveSpec::Union { parts } => parts
                .iter()
                .map(|part| part.shape.distance(&part.pose().inverse_transform_point(p)))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Conservative bounding box in the primitive's own frame.
    pub fn aabb(&self) -> Aabb {
        match self {
            PrimitiveSpec::Sphere { radius } => cube_box(*radius),
            PrimitiveSpec::Box { half_extents } => {
                let h = Vector3::from(*half_extents);
                Aabb::new(Point3::from(-h), Point3::from(h))
            }
            PrimitiveSpec::Torus {
                major_radius,
                minor_radius,
            } => {
                let s = major_radius + minor_radius;
                Aabb::new(
                    Point3::new(-s, -s, -minor_radius),
                    Point3::new(s, s, *minor_radius),
                )
            }
            PrimitiveSpec::Capsule { a, b, radius } => {
                let mut bb = Aabb::new(Point3::from(Vector3::from(*a)), Point3::from(Vector3::from(*a)));
                bb.grow(&Point3::from(Vector3::from(*b)));
                bb.padded(*radius)
            }
            PrimitiveSpec::Superellipsoid { semi_axes, .. } => {
                let h = Vector3::from(*semi_axes);
                Aabb::new(Point3::from(-h), Point3::from(h))
            }
            PrimitiveSpec::Union { parts } => {
                let mut acc: Option<Aabb> = None;
                for part in parts {
                    let child = part.shape.aabb();
                    let pose = part.pose();
                    // Bound the posed child by its transformed corners.
                    let mut corners = Vec::with_capacity(8);
                    for i in 0..8 {
                        let c = Point3::new(
                            if i & 1 == 0 { child.min.x } else { child.max.x },
                            if i & 2 == 0 { child.min.y } else { child.max.y },
                            if i & 4 == 0 { child.min.z } else { child.max.z },
                        );
                        corners.push(pose.transform_point(&c));
                    }
                    let posed = Aabb::from_points(corners.iter()).unwrap();
                    acc = Some(match acc {
                        Some(b) => b.union(&posed),
                        None => posed,
                    });
                }
                acc.unwrap_or_else(|| cube_box(0.0))
            }
        }
    }

    /// Reject parameters that would make the field meaningless.
    pub fn validate(&self) -> Result<(), SdfError> {
        let bad = |msg: String| Err(SdfError::Primitive(msg));
        match self {
            PrimitiveSpec::Sphere { radius } => {
                if *radius <= 0.0 {
                    return bad(format!("sphere radius {radius} must be positive"));
                }
            }
            PrimitiveSpec::Box { half_extents } => {
                if half_extents.iter().any(|&h| h <= 0.0) {
                    return bad(format!("box half extents {half_extents:?} must be positive"));
                }
            }
            PrimitiveSpec::Torus {
                major_radius,
                minor_radius,
            } => {
                if *minor_radius <= 0.0 || *major_radius <= *minor_radius {
                    return bad(format!(
                        "torus needs 0 < minor ({minor_radius}) < major ({major_radius})"
                    ));
                }
            }
            PrimitiveSpec::Capsule { radius, .. } => {
                if *radius <= 0.0 {
                    return bad(format!("capsule radius {radius} must be positive"));
                }
            }
            PrimitiveSpec::Superellipsoid { semi_axes, e1, e2 } => {
                if semi_axes.iter().any(|&h| h <= 0.0) || *e1 <= 0.0 || *e2 <= 0.0 {
                    return bad("superellipsoid needs positive axes and exponents".into());
                }
            }
            PrimitiveSpec::Union { parts } => {
                if parts.is_empty() {
                    return bad("union needs at least one part".into());
                }
                for part in parts {
                    part.shape.validate()?;
                }
            }
        }
        Ok(())
    }
}

fn cube_box(r: f64) -> Aabb {
    Aabb::new(Point3::new(-r, -r, -r), Point3::new(r, r, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_distance_is_radial() {
        let s = PrimitiveSpec::Sphere { radius: 1.0 };
        assert_eq!(s.distance(&Point3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(s.distance(&Point3::origin()), -1.0);
    }

    #[test]
    fn box_center_depth_is_smallest_half_extent() {
        let b = PrimitiveSpec::Box {
            half_extents: [1.0, 1.0, 1.0],
        };
        assert_eq!(b.distance(&Point3::origin()), -1.0);
        assert_eq!(b.distance(&Point3::new(2.0, 0.0, 0.0)), 1.0);
        // Corner exterior distance is the diagonal.
        let d = b.distance(&Point3::new(2.0, 2.0, 2.0));
        assert!((d - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn torus_interior_point_matches_formula() {
        let t = PrimitiveSpec::Torus {
            major_radius: 2.0,
            minor_radius: 0.5,
        };
        assert_eq!(t.distance(&Point3::new(2.0, 0.0, 0.0)), -0.5);
        assert!((t.distance(&Point3::new(2.5, 0.0, 0.0)) - 0.0).abs() < 1e-12);
        assert!((t.distance(&Point3::origin()) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn capsule_is_a_padded_segment() {
        let c = PrimitiveSpec::Capsule {
            a: [0.0, 0.0, -1.0],
            b: [0.0, 0.0, 1.0],
            radius: 0.5,
        };
        assert_eq!(c.distance(&Point3::new(0.0, 0.0, 0.0)), -0.5);
        assert_eq!(c.distance(&Point3::new(1.0, 0.0, 0.5)), 0.5);
        assert!((c.distance(&Point3::new(0.0, 0.0, 2.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn superellipsoid_sign_and_surface_are_right() {
        let e = PrimitiveSpec::Superellipsoid {
            semi_axes: [2.0, 1.0, 0.5],
            e1: 1.0,
            e2: 1.0,
        };
        assert!(e.distance(&Point3::origin()) < 0.0);
        for p in [
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 0.5),
        ] {
            assert!(e.distance(&p).abs() < 1e-9, "surface point {p}");
        }
        assert!(e.distance(&Point3::new(3.0, 0.0, 0.0)) > 0.5);
    }

    #[test]
    fn union_takes_the_minimum_over_posed_parts() {
        let u = PrimitiveSpec::Union {
            parts: vec![
                PlacedPrimitive {
                    shape: PrimitiveSpec::Sphere { radius: 1.0 },
                    translation: [0.0, 0.0, 0.0],
                    euler: [0.0; 3],
                },
                PlacedPrimitive {
                    shape: PrimitiveSpec::Sphere { radius: 0.5 },
                    translation: [2.0, 0.0, 0.0],
                    euler: [0.0; 3],
                },
            ],
        };
        assert_eq!(u.distance(&Point3::new(2.0, 0.0, 0.0)), -0.5);
        assert_eq!(u.distance(&Point3::origin()), -1.0);
        assert!((u.distance(&Point3::new(1.25, 0.0, 0.0)) - 0.25).abs() < 1e-12);
        let bb = u.aabb();
        assert!(bb.contains(&Point3::new(2.5, 0.0, 0.0)));
        assert!(bb.contains(&Point3::new(-1.0, 0.0, 0.0)));
    }

    #[test]
    fn unknown_tag_fails_to_parse() {
        let json = r#"{"kind": "wedge", "size": 1.0}"#;
        assert!(serde_json::from_str::<PrimitiveSpec>(json).is_err());
        let ok = r#"{"kind": "sphere", "radius": 2.0}"#;
        let spec: PrimitiveSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(spec, PrimitiveSpec::Sphere { radius: 2.0 });
    }

    #[test]
    fn validation_catches_bad_parameters() {
        assert!(PrimitiveSpec::Sphere { radius: -1.0 }.validate().is_err());
        assert!(PrimitiveSpec::Torus {
            major_radius: 0.4,
            minor_radius: 0.5
        }
        .validate()
        .is_err());
        assert!(PrimitiveSpec::Union { parts: vec![] }.validate().is_err());
    }
}
