use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{RigidTransform, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpReport {
    pub iterations: usize,
    pub rms: f64,
    pub converged: bool,
}

/// Point-to-point ICP aligning `source` onto `target`. Correspondences are
/// brute-force nearest neighbors; each step solves the rigid fit in closed form.
pub fn rigid_icp(
    source: &[Vec3],
    target: &[Vec3],
    max_iters: usize,
    tol: f64,
) -> Result<(RigidTransform, IcpReport)> {
    check_spread(source, "source")?;
    check_spread(target, "target")?;
    let mut transform = RigidTransform::identity();
    let mut moved = source.to_vec();
    let mut prev_rms = f64::INFINITY;
    let mut report = IcpReport {
        iterations: 0,
        rms: f64::INFINITY,
        converged: false,
    };
    for it in 0..max_iters {
        let matched: Vec<Vec3> = moved.iter().map(|p| target[nearest(target, p)]).collect();
        let step = kabsch(&moved, &matched);
        transform = step.compose(&transform);
        moved = source.iter().map(|p| transform.apply(p)).collect();
        let rms = rms_to_nearest(&moved, target);
        report = IcpReport {
            iterations: it + 1,
            rms,
            converged: false,
        };
        if (prev_rms - rms).abs() < tol {
            report.converged = true;
            break;
        }
        prev_rms = rms;
    }
    Ok((transform, report))
}

fn nearest(target: &[Vec3], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in target.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Root-mean-square distance from each point to its nearest target point.
pub fn rms_to_nearest(points: &[Vec3], target: &[Vec3]) -> f64 {
    let s: f64 = points
        .iter()
        .map(|p| (p - target[nearest(target, p)]).norm_squared())
        .sum();
    (s / points.len() as f64).sqrt()
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn check_spread(points: &[Vec3], which: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{which} has fewer than 3 points")));
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let sv = cov.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().map(|x| x.abs()).collect();
    sv.sort_by(f64::total_cmp);
    if sv[1] <= 1e-12 * sv[2].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!("{which} points are collinear")));
    }
    Ok(())
}

/// Least-squares rotation and translation taking `src[i]` to `dst[i]`.
fn kabsch(src: &[Vec3], dst: &[Vec3]) -> RigidTransform {
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        r = vt.transpose() * fix * u.transpose();
    }
    RigidTransform::new(r, cd - r * cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.3..0.3),
                )
            })
            .collect()
    }

    #[test]
    fn identical_clouds_give_identity() {
        let c = cloud(50, 1);
        let (t, rep) = rigid_icp(&c, &c, 20, 1e-10).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(rep.rms < 1e-12);
    }

    #[test]
    fn recovers_known_motion() {
        let c = cloud(200, 2);
        let truth = RigidTransform::new(
            Rotation3::from_axis_angle(&Vec3::z_axis(), 10f64.to_radians()).into_inner(),
            Vec3::new(0.1, 0.0, 0.0),
        );
        let moved: Vec<Vec3> = c.iter().map(|p| truth.apply(p)).collect();
        let (t, rep) = rigid_icp(&c, &moved, 100, 1e-14).unwrap();
        assert!((t.rotation - truth.rotation).abs().max() < 1e-4, "{rep:?}");
        assert!((t.translation - truth.translation).norm() < 1e-4);
        // applying the inverse restores the original cloud
        let back = t.inverse();
        for (p, q) in c.iter().zip(&moved) {
            assert!((back.apply(q) - p).norm() < 1e-4);
        }
    }

    #[test]
    fn noisy_residual_bounded() {
        let c = cloud(200, 3);
        let scale = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy: Vec<Vec3> = c
            .iter()
            .map(|p| {
                p + Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect();
        let (_, rep) = rigid_icp(&c, &noisy, 50, 1e-10).unwrap();
        assert!(rep.rms <= 2.0 * scale, "{}", rep.rms);
    }

    #[test]
    fn collinear_source_is_rejected() {
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = cloud(10, 5);
        assert!(matches!(rigid_icp(&line, &c, 10, 1e-8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rotation_stays_orthonormal() {
        let c = cloud(60, 6);
        let d = cloud(60, 7);
        for iters in 1..8 {
            let (t, _) = rigid_icp(&c, &d, iters, 0.0).unwrap();
            assert!(t.orthonormality_error() < 1e-6);
        }
    }
}
