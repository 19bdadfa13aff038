use super::{FieldSource, SdfError, SdfField};
use crate::geometry::{Aabb, GridSpec, TriangleMesh};
use nalgebra::{Point3, Vector3};

/// Bounding-volume tree over triangles; answers point-distance and
/// x-parallel ray-crossing queries for the grid builder.
pub(crate) struct TriBvh {
    tris: Vec<[Point3<f64>; 3]>,
    nodes: Vec<BvhNode>,
}

struct BvhNode {
    aabb: Aabb,
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

const LEAF: u32 = u32::MAX;
const LEAF_SIZE: usize = 8;

impl TriBvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let mut tris: Vec<[Point3<f64>; 3]> = (0..mesh.triangles.len())
            .map(|t| mesh.corners(t))
            .collect();
        let mut nodes = Vec::new();
        let len = tris.len() as u32;
        if len > 0 {
            build_node(&mut tris, 0, len, &mut nodes);
        }
        Self { tris, nodes }
    }

    pub fn distance_sq(&self, p: &Point3<f64>) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        self.distance_rec(0, p, &mut best);
        best
    }

    fn distance_rec(&self, node: u32, p: &Point3<f64>, best: &mut f64) {
        let n = &self.nodes[node as usize];
        if n.aabb.distance_sq(p) >= *best {
            return;
        }
        if n.left == LEAF {
            for t in n.start..n.end {
                let [a, b, c] = self.tris[t as usize];
                *best = best.min(point_triangle_distance_sq(p, &a, &b, &c));
            }
            return;
        }
        // Nearer child first tightens the bound sooner.
        let (l, r) = (n.left, n.right);
        let dl = self.nodes[l as usize].aabb.distance_sq(p);
        let dr = self.nodes[r as usize].aabb.distance_sq(p);
        if dl <= dr {
            self.distance_rec(l, p, best);
            self.distance_rec(r, p, best);
        } else {
            self.distance_rec(r, p, best);
            self.distance_rec(l, p, best);
        }
    }

    /// Parametric x values where the +x ray through `(y, z)` crosses triangles.
    pub fn x_crossings(&self, y: f64, z: f64, out: &mut Vec<f64>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            let n = &self.nodes[node as usize];
            if y < n.aabb.min.y || y > n.aabb.max.y || z < n.aabb.min.z || z > n.aabb.max.z {
                continue;
            }
            if n.left == LEAF {
                for t in n.start..n.end {
                    let [a, b, c] = self.tris[t as usize];
                    if let Some(x) = x_ray_triangle(&a, &b, &c, y, z) {
                        out.push(x);
                    }
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
        out.sort_unstable_by(f64::total_cmp);
    }
}

fn build_node(tris: &mut [[Point3<f64>; 3]], offset: u32, len: u32, nodes: &mut Vec<BvhNode>) -> u32 {
    let slice = &tris[..len as usize];
    let mut aabb = Aabb::new(slice[0][0], slice[0][0]);
    for t in slice {
        for v in t {
            aabb.grow(v);
        }
    }
    let id = nodes.len() as u32;
    nodes.push(BvhNode {
        aabb,
        start: offset,
        end: offset + len,
        left: LEAF,
        right: LEAF,
    });
    if (len as usize) > LEAF_SIZE {
        let ext = aabb.extents();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = len as usize / 2;
        tris[..len as usize].select_nth_unstable_by(mid, |a, b| {
            let ca = a[0][axis] + a[1][axis] + a[2][axis];
            let cb = b[0][axis] + b[1][axis] + b[2][axis];
            ca.total_cmp(&cb)
        });
        let (left_slice, right_slice) = tris.split_at_mut(mid);
        let left = build_node(left_slice, offset, mid as u32, nodes);
        let right = build_node(right_slice, offset + mid as u32, len - mid as u32, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
    }
    id
}

/// Squared distance from a point to a triangle (closest-point region walk).
pub(crate) fn point_triangle_distance_sq(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (ap - ab * v - ac * w).norm_squared()
}

fn x_ray_triangle(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, y: f64, z: f64) -> Option<f64> {
    // Barycentric test in the yz projection; triangles parallel to the x
    // axis project to zero area and are skipped (the ray grazes them).
    let d = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
    if d.abs() < 1e-14 {
        return None;
    }
    let u = ((y - a.y) * (c.z - a.z) - (c.y - a.y) * (z - a.z)) / d;
    let v = ((b.y - a.y) * (z - a.z) - (y - a.y) * (b.z - a.z)) / d;
    if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
        Some(a.x + u * (b.x - a.x) + v * (c.x - a.x))
    } else {
        None
    }
}

/// Sample a watertight mesh into a signed distance grid.
///
/// Magnitude is exact point-triangle distance; sign comes from crossing
/// parity along +x rays, one ray per (y, z) node row. Rays are jittered off
/// the lattice so axis-aligned geometry cannot sit exactly on edge or vertex
/// paths.
pub fn build_sdf_grid(
    mesh: &TriangleMesh,
    resolution: usize,
    padding: f64,
) -> Result<SdfField, SdfError> {
    if resolution < 16 {
        return Err(SdfError::ResolutionTooCoarse(resolution));
    }
    let mut clean = mesh.clone();
    clean.remove_degenerate(1e-12);
    let open = clean.open_edges();
    if !open.is_empty() {
        return Err(SdfError::NotWatertight {
            count: open.len(),
            sample: open.into_iter().take(8).collect(),
        });
    }
    let aabb = clean
        .aabb()
        .ok_or_else(|| SdfError::Primitive("empty mesh".into()))?
        .padded(padding);
    let grid = GridSpec::from_aabb(&aabb, resolution);
    let bvh = TriBvh::build(&clean);
    let [nx, ny, nz] = grid.dims;
    let jitter = Vector3::new(0.0, 0.37221 * 1e-4 * grid.cell, 0.59417 * 1e-4 * grid.cell);
    let mut values = vec![0f32; grid.node_count()];
    let mut crossings: Vec<f64> = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            let row0 = grid.node(0, j, k);
            bvh.x_crossings(row0.y + jitter.y, row0.z + jitter.z, &mut crossings);
            for i in 0..nx {
                let p = grid.node(i, j, k);
                let ahead = crossings.partition_point(|&x| x < p.x);
                let inside = ahead % 2 == 1;
                let dist = bvh.distance_sq(&p).sqrt();
                values[grid.node_index(i, j, k)] = if inside { -dist } else { dist } as f32;
            }
        }
    }
    Ok(SdfField {
        grid,
        values,
        source: FieldSource::MeshDerived,
    })
}
