use super::{GeometryError, KdTree};
use nalgebra::Point3;

/// Directed Hausdorff distance: `max_{p in a} min_{q in b} |p - q|`.
pub fn directed_hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    let tree = KdTree::build(b);
    let mut worst = 0.0f64;
    for p in a {
        worst = worst.max(tree.nearest_dist_sq(p));
    }
    Ok(worst.sqrt())
}

/// Symmetric (two-way) Hausdorff distance.
pub fn two_way_hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64, GeometryError> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_directed(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
        a.iter()
            .map(|p| {
                b.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
            .sqrt()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect()
    }

    #[test]
    fn single_pair_is_euclidean_distance() {
        let a = [Point3::new(0.0, 0.0, 0.0)];
        let b = [Point3::new(3.0, 4.0, 0.0)];
        assert_eq!(directed_hausdorff(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn subset_has_zero_directed_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_cloud(&mut rng, 40);
        let a: Vec<_> = b.iter().step_by(3).copied().collect();
        assert_eq!(directed_hausdorff(&a, &b).unwrap(), 0.0);
        assert!(directed_hausdorff(&b, &a).unwrap() > 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        let a = [Point3::origin()];
        assert!(directed_hausdorff(&a, &[]).is_err());
        assert!(directed_hausdorff(&[], &a).is_err());
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = random_cloud(&mut rng, 500);
            let b = random_cloud(&mut rng, 311);
            assert_eq!(directed_hausdorff(&a, &b).unwrap(), brute_directed(&a, &b));
        }
    }

    #[test]
    fn two_way_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let a = random_cloud(&mut rng, 30);
            let b = random_cloud(&mut rng, 17);
            let ab = two_way_hausdorff(&a, &b).unwrap();
            let ba = two_way_hausdorff(&b, &a).unwrap();
            assert_eq!(ab, ba);
        }
    }
}
