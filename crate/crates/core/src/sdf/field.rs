use super::SdfError;
use crate::geometry::GridSpec;
use nalgebra::{Point3, Vector3};

/// Where a field's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    MeshDerived,
    AnalyticPrimitive,
    GpisLearned,
}

impl FieldSource {
    fn to_byte(self) -> u8 {
        match self {
            FieldSource::MeshDerived => 0,
            FieldSource::AnalyticPrimitive => 1,
            FieldSource::GpisLearned => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FieldSource::MeshDerived),
            1 => Some(FieldSource::AnalyticPrimitive),
            2 => Some(FieldSource::GpisLearned),
            _ => None,
        }
    }
}

/// Dense signed distance grid in the object's canonical frame.
///
/// Values are stored x-fastest in single precision. Inside the grid the field
/// is the trilinear interpolant; outside it extends as a conservative lower
/// bound: value at the clamped boundary point plus the distance to it. The
/// extension is continuous and monotone in the distance from the grid, which
/// is all the free-space likelihood needs from far queries.
#[derive(Debug, Clone)]
pub struct SdfField {
    pub grid: GridSpec,
    pub values: Vec<f32>,
    pub source: FieldSource,
}

const CACHE_MAGIC: &[u8; 4] = b"SDFG";
const CACHE_VERSION: u32 = 1;

impl SdfField {
    pub fn from_fn<F: Fn(&Point3<f64>) -> f64>(grid: GridSpec, source: FieldSource, f: F) -> Self {
        let [nx, ny, nz] = grid.dims;
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(&grid.node(i, j, k)) as f32);
                }
            }
        }
        Self {
            grid,
            values,
            source,
        }
    }

    /// Trilinear sample at a canonical-frame point (see type docs for the
    /// out-of-grid extension).
    pub fn sample(&self, p: &Point3<f64>) -> f64 {
        let g = &self.grid;
        let far = g.node(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1);
        let clamped = Point3::new(
            p.x.clamp(g.origin.x, far.x),
            p.y.clamp(g.origin.y, far.y),
            p.z.clamp(g.origin.z, far.z),
        );
        let outside = (p - clamped).norm();
        let local = (clamped - g.origin) / g.cell;
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let cells = g.dims[a] - 2;
            let i = (local[a].floor() as usize).min(cells);
            idx[a] = i;
            frac[a] = (local[a] - i as f64).clamp(0.0, 1.0);
        }
        let v = |di: usize, dj: usize, dk: usize| {
            self.values[g.node_index(idx[0] + di, idx[1] + dj, idx[2] + dk)] as f64
        };
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let c00 = v(0, 0, 0) * (1.0 - fx) + v(1, 0, 0) * fx;
        let c10 = v(0, 1, 0) * (1.0 - fx) + v(1, 1, 0) * fx;
        let c01 = v(0, 0, 1) * (1.0 - fx) + v(1, 0, 1) * fx;
        let c11 = v(0, 1, 1) * (1.0 - fx) + v(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz + outside
    }

    /// Central-difference gradient with step = one cell (one-sided against
    /// the grid boundary), in the canonical frame.
    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let h = self.grid.cell;
        let mut grad = Vector3::zeros();
        for a in 0..3 {
            let mut lo = *p;
            let mut hi = *p;
            lo[a] -= h;
            hi[a] += h;
            grad[a] = (self.sample(&hi) - self.sample(&lo)) / (2.0 * h);
        }
        grad
    }

    /// Serialise to the flat binary cache layout: magic, version, source,
    /// dims, origin, cell, then little-endian f32 values x-fastest.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 4);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.push(self.source.to_byte());
        out.extend_from_slice(&[0u8; 3]);
        for d in self.grid.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for c in [self.grid.origin.x, self.grid.origin.y, self.grid.origin.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.grid.cell.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SdfError> {
        let bad = |msg: &str| SdfError::BadCache(msg.to_string());
        if bytes.len() < 56 {
            return Err(bad("truncated header"));
        }
        if &bytes[0..4] != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(SdfError::BadCache(format!("unsupported version {version}")));
        }
        let source = FieldSource::from_byte(bytes[8]).ok_or_else(|| bad("bad source tag"))?;
        let mut dims = [0usize; 3];
        for (a, d) in dims.iter_mut().enumerate() {
            let o = 12 + a * 4;
            *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
            if *d < 2 {
                return Err(bad("degenerate dims"));
            }
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let origin = Point3::new(f64_at(24), f64_at(32), f64_at(40));
        let cell = f64_at(48);
        if !cell.is_finite() || cell <= 0.0 || !origin.coords.iter().all(|c| c.is_finite()) {
            return Err(bad("bad geometry header"));
        }
        let count = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| bad("dims overflow"))?;
        let payload = &bytes[56..];
        if payload.len() != count * 4 {
            return Err(SdfError::BadCache(format!(
                "payload size {} does not match dims {:?}",
                payload.len(),
                dims
            )));
        }
        let mut values = Vec::with_capacity(count);
        for c in payload.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            values.push(v);
        }
        Ok(Self {
            grid: GridSpec {
                origin,
                cell,
                dims,
            },
            values,
            source,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SdfError> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SdfError> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_field(radius: f64, nodes: usize) -> SdfField {
        let pad = 1.0;
        let aabb = Aabb::new(
            Point3::new(-radius - pad, -radius - pad, -radius - pad),
            Point3::new(radius + pad, radius + pad, radius + pad),
        );
        let grid = GridSpec::from_aabb(&aabb, nodes);
        SdfField::from_fn(grid, FieldSource::AnalyticPrimitive, |p| {
            p.coords.norm() - radius
        })
    }

    #[test]
    fn interpolation_matches_analytic_sphere() {
        let f = sphere_field(1.0, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut max_err = 0.0f64;
        for _ in 0..2000 {
            let p = Point3::new(
                rng.random_range(-1.8..1.8),
                rng.random_range(-1.8..1.8),
                rng.random_range(-1.8..1.8),
            );
            max_err = max_err.max((f.sample(&p) - (p.coords.norm() - 1.0)).abs());
        }
        assert!(max_err < 0.01, "interp error {max_err}");
    }

    #[test]
    fn refinement_halves_interpolation_error() {
        let probe: Vec<Point3<f64>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..3000)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.7..1.7),
                        rng.random_range(-1.7..1.7),
                        rng.random_range(-1.7..1.7),
                    )
                })
                .collect()
        };
        let err = |nodes: usize| {
            let f = sphere_field(1.0, nodes);
            probe
                .iter()
                .map(|p| (f.sample(p) - (p.coords.norm() - 1.0)).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err(32);
        let fine = err(64);
        assert!(fine <= 0.55 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn out_of_grid_extension_is_a_monotone_lower_bound() {
        let f = sphere_field(1.0, 48);
        // Lower bound holds up to the trilinear error of the boundary
        // samples (trilinear over-estimates the convex radial distance by
        // O(cell^2), and the extension inherits that offset).
        let slack = f.grid.cell * f.grid.cell;
        let mut prev = f.sample(&Point3::new(2.0, 0.0, 0.0));
        for k in 1..40 {
            let x = 2.0 + 0.25 * k as f64;
            let v = f.sample(&Point3::new(x, 0.0, 0.0));
            assert!(v > prev, "not monotone at x={x}");
            assert!(v <= x - 1.0 + slack, "not a lower bound at x={x}: {v}");
            prev = v;
        }
    }

    #[test]
    fn gradient_points_outward_on_a_sphere() {
        let f = sphere_field(1.0, 64);
        let g = f.gradient(&Point3::new(1.0, 0.0, 0.0));
        assert!((g.normalize() - Vector3::x()).norm() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let p = Point3::from(dir * rng.random_range(0.95..1.05));
            let g = f.gradient(&p);
            assert!((g.norm() - 1.0).abs() < 0.1, "eikonal violated: {}", g.norm());
            assert!(g.normalize().dot(&dir) > 0.99);
        }
    }

    #[test]
    fn cache_round_trips_bit_exactly() {
        let f = sphere_field(0.8, 24);
        let bytes = f.encode();
        let g = SdfField::decode(&bytes).unwrap();
        assert_eq!(f.values, g.values);
        assert_eq!(f.grid, g.grid);
        assert_eq!(f.source, g.source);
        assert_eq!(bytes, g.encode());
    }

    #[test]
    fn cache_rejects_corruption() {
        let f = sphere_field(0.8, 16);
        let good = f.encode();
        assert!(SdfField::decode(&good[..10]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(SdfField::decode(&bad_magic).is_err());
        let mut bad_dims = good.clone();
        bad_dims[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(SdfField::decode(&bad_dims).is_err());
        let mut truncated = good.clone();
        truncated.truncate(good.len() - 3);
        assert!(SdfField::decode(&truncated).is_err());
        let mut nan_payload = good;
        nan_payload[56..60].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(SdfField::decode(&nan_payload).is_err());
    }
}
