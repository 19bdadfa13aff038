use nalgebra::Point3;

/// Static 3-d tree for nearest-neighbour queries.
///
/// Points are reordered into an implicit balanced tree (median element splits
/// each range, axis cycles with depth), so no per-node allocation is needed.
pub struct KdTree {
    pts: Vec<(Point3<f64>, u32)>,
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut pts: Vec<(Point3<f64>, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i as u32))
            .collect();
        fn rec(s: &mut [(Point3<f64>, u32)], depth: usize) {
            if s.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let m = s.len() / 2;
            s.select_nth_unstable_by(m, |a, b| a.0[axis].total_cmp(&b.0[axis]));
            let (left, rest) = s.split_at_mut(m);
            rec(left, depth + 1);
            rec(&mut rest[1..], depth + 1);
        }
        rec(&mut pts, 0);
        Self { pts }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Index (into the original slice) and distance of the closest point.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.pts.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, 0u32);
        Self::search(&self.pts, 0, q, &mut best);
        Some((best.1 as usize, best.0.sqrt()))
    }

    /// Squared distance to the closest point, `INFINITY` for an empty tree.
    pub fn nearest_dist_sq(&self, q: &Point3<f64>) -> f64 {
        if self.pts.is_empty() {
            return f64::INFINITY;
        }
        let mut best = (f64::INFINITY, 0u32);
        Self::search(&self.pts, 0, q, &mut best);
        best.0
    }

    fn search(s: &[(Point3<f64>, u32)], depth: usize, q: &Point3<f64>, best: &mut (f64, u32)) {
        if s.is_empty() {
            return;
        }
        let axis = depth % 3;
        let m = s.len() / 2;
        let d2 = (s[m].0 - q).norm_squared();
        if d2 < best.0 {
            *best = (d2, s[m].1);
        }
        let delta = q[axis] - s[m].0[axis];
        let (near, far) = if delta < 0.0 {
            (&s[..m], &s[m + 1..])
        } else {
            (&s[m + 1..], &s[..m])
        };
        Self::search(near, depth + 1, q, best);
        if delta * delta < best.0 {
            Self::search(far, depth + 1, q, best);
        }
    }
}
