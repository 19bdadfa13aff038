use super::{GeometryError, OrientedPoint, SurfaceSampler, TriangleMesh};
use rand::Rng;

/// Draw `count` surface points with (approximately maximal) pairwise spacing.
///
/// Greedy dart throwing against an area-uniform sampler. The exclusion radius
/// starts at `sqrt(area / count)` and anneals down whenever the surface cannot
/// absorb more darts, so the call always returns exactly `count` points unless
/// the radius collapses entirely (degenerate mesh).
pub fn poisson_disc_sample<R: Rng>(
    mesh: &TriangleMesh,
    count: usize,
    rng: &mut R,
) -> Result<Vec<OrientedPoint>, GeometryError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let area = mesh.total_area();
    let mut radius = (area / count as f64).sqrt();
    let floor = radius * 1e-6;
    let max_failures = 64 * count.max(4);
    let mut accepted: Vec<OrientedPoint> = Vec::with_capacity(count);
    while accepted.len() < count {
        let r2 = radius * radius;
        let mut failures = 0;
        while accepted.len() < count && failures < max_failures {
            let cand = sampler.sample(rng);
            let clear = accepted
                .iter()
                .all(|p| (p.position - cand.position).norm_squared() >= r2);
            if clear {
                accepted.push(cand);
                failures = 0;
            } else {
                failures += 1;
            }
        }
        if accepted.len() < count {
            radius *= 0.75;
            if radius < floor {
                return Err(GeometryError::SamplingExhausted {
                    requested: count,
                    placed: accepted.len(),
                });
            }
        }
    }
    Ok(accepted)
}
