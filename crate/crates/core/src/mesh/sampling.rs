use super::Vec3;
use crate::error::{Error, Result};

/// Greedy max-min (farthest point) sampling starting from `seed_index`.
/// Ties go to the lowest index, so the result is deterministic.
pub fn farthest_point_sampling(points: &[Vec3], k: usize, seed_index: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::TooFewPoints {
            requested: k,
            available: points.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= points.len() {
        return Err(Error::SizeMismatch {
            expected: points.len(),
            actual: seed_index,
        });
    }
    let mut selected = Vec::with_capacity(k);
    selected.push(seed_index);
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| (p - points[seed_index]).norm_squared())
        .collect();
    while selected.len() < k {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        let q = points[best];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - q).norm_squared());
        }
    }
    Ok(selected)
}
