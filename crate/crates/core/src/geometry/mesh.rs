use super::{Aabb, GeometryError, OrientedPoint, Pose};
use nalgebra::{Point3, Unit, Vector3};
use rand::Rng;
use std::collections::HashMap;

/// Indexed triangle mesh. Invariant: every index is `< vertices.len()`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Self {
        debug_assert!(triangles
            .iter()
            .all(|t| t.iter().all(|&i| (i as usize) < vertices.len())));
        Self {
            vertices,
            triangles,
        }
    }

    /// Axis-aligned box with the given half extents, centred at the origin,
    /// with outward-facing triangles.
    pub fn cuboid(half: Vector3<f64>) -> Self {
        let h = half;
        let vertices = vec![
            Point3::new(-h.x, -h.y, -h.z),
            Point3::new(h.x, -h.y, -h.z),
            Point3::new(h.x, h.y, -h.z),
            Point3::new(-h.x, h.y, -h.z),
            Point3::new(-h.x, -h.y, h.z),
            Point3::new(h.x, -h.y, h.z),
            Point3::new(h.x, h.y, h.z),
            Point3::new(-h.x, h.y, h.z),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2], // -z
            [4, 5, 6],
            [4, 6, 7], // +z
            [0, 1, 5],
            [0, 5, 4], // -y
            [3, 7, 6],
            [3, 6, 2], // +y
            [0, 4, 7],
            [0, 7, 3], // -x
            [1, 2, 6],
            [1, 6, 5], // +x
        ];
        Self::new(vertices, triangles)
    }

    pub fn corners(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unit normal by winding order; `None` when the triangle is degenerate.
    pub fn triangle_normal(&self, t: usize) -> Option<Unit<Vector3<f64>>> {
        let [a, b, c] = self.corners(t);
        Unit::try_new((b - a).cross(&(c - a)), 1e-12)
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        let rot = pose.rotation();
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| rot * v + pose.translation)
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Drop triangles with a repeated vertex index or area below `min_area`.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let verts = std::mem::take(&mut self.vertices);
        self.triangles.retain(|&[a, b, c]| {
            if a == b || b == c || a == c {
                return false;
            }
            let (pa, pb, pc) = (
                verts[a as usize],
                verts[b as usize],
                verts[c as usize],
            );
            0.5 * (pb - pa).cross(&(pc - pa)).norm() >= min_area
        });
        self.vertices = verts;
    }

    /// Undirected edges not shared by exactly two triangles.
    pub fn open_edges(&self) -> Vec<(u32, u32)> {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let key = (u.min(v), u.max(v));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let mut bad: Vec<(u32, u32)> = counts
            .into_iter()
            .filter(|&(_, n)| n != 2)
            .map(|(e, _)| e)
            .collect();
        bad.sort_unstable();
        bad
    }

    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.open_edges().is_empty()
    }

    /// Keep only the vertex-connected component with the largest surface area.
    pub fn largest_component(&self) -> TriangleMesh {
        if self.triangles.is_empty() {
            return TriangleMesh::default();
        }
        let n = self.vertices.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for &[a, b, c] in &self.triangles {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            let rc = find(&mut parent, c);
            parent[rb as usize] = ra;
            parent[rc as usize] = ra;
        }
        let mut area: HashMap<u32, f64> = HashMap::new();
        for t in 0..self.triangles.len() {
            let root = find(&mut parent, self.triangles[t][0]);
            *area.entry(root).or_insert(0.0) += self.triangle_area(t);
        }
        let best = area
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(r, _)| r)
            .unwrap();
        let mut remap: Vec<u32> = vec![u32::MAX; n];
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for &tri in &self.triangles {
            if find(&mut parent, tri[0]) != best {
                continue;
            }
            let mut out = [0u32; 3];
            for (k, &idx) in tri.iter().enumerate() {
                if remap[idx as usize] == u32::MAX {
                    remap[idx as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[idx as usize]);
                }
                out[k] = remap[idx as usize];
            }
            triangles.push(out);
        }
        TriangleMesh::new(vertices, triangles)
    }
}

/// Area-weighted triangle sampler for drawing uniform surface points.
pub struct SurfaceSampler<'a> {
    mesh: &'a TriangleMesh,
    cdf: Vec<f64>,
    tris: Vec<u32>,
    total: f64,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Result<Self, GeometryError> {
        let mut cdf = Vec::new();
        let mut tris = Vec::new();
        let mut acc = 0.0;
        for t in 0..mesh.triangles.len() {
            let a = mesh.triangle_area(t);
            if a > 0.0 && mesh.triangle_normal(t).is_some() {
                acc += a;
                cdf.push(acc);
                tris.push(t as u32);
            }
        }
        if acc <= 0.0 {
            return Err(GeometryError::ZeroArea);
        }
        Ok(Self {
            mesh,
            cdf,
            tris,
            total: acc,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> OrientedPoint {
        let u = rng.random::<f64>() * self.total;
        let k = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let t = self.tris[k] as usize;
        let [a, b, c] = self.mesh.corners(t);
        // Square-root trick: uniform over the triangle interior.
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let p = a * (1.0 - r1) + (b.coords * (1.0 - r2) + c.coords * r2) * r1;
        OrientedPoint {
            position: Point3::from(p),
            normal: self.mesh.triangle_normal(t).unwrap(),
        }
    }
}
