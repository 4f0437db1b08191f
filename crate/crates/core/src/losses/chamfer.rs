use crate::error::{Error, Result};
use crate::mesh::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct ChamferTerms {
    pub value: f64,
    /// Number of nearest-neighbor terms clipped at `d²`, over both directions.
    pub truncated: usize,
}

fn nearest(p: &Vec3, set: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Symmetric Chamfer distance with each squared nearest-neighbor distance
/// clipped at `d²`. Pass `f64::INFINITY` for the plain symmetric Chamfer.
pub fn robust_chamfer(v: &[Vec3], u: &[Vec3], d: f64) -> Result<f64> {
    Ok(robust_chamfer_grad(v, u, d)?.0.value)
}

/// Loss, truncation count and gradient with respect to the points of `v`.
/// Clipped terms contribute no gradient.
pub fn robust_chamfer_grad(v: &[Vec3], u: &[Vec3], d: f64) -> Result<(ChamferTerms, Vec<Vec3>)> {
    if v.is_empty() || u.is_empty() {
        return Err(Error::Empty("chamfer point set"));
    }
    let cap = d * d;
    let mut grad = vec![Vec3::zeros(); v.len()];
    let mut truncated = 0;
    let (nv, nu) = (v.len() as f64, u.len() as f64);
    let mut forward = 0.0;
    for (i, p) in v.iter().enumerate() {
        let (j, dist) = nearest(p, u);
        if dist < cap {
            forward += dist;
            grad[i] += (p - u[j]) * (2.0 / nv);
        } else {
            forward += cap;
            truncated += 1;
        }
    }
    let mut backward = 0.0;
    for q in u {
        let (i, dist) = nearest(q, v);
        if dist < cap {
            backward += dist;
            grad[i] += (v[i] - q) * (2.0 / nu);
        } else {
            backward += cap;
            truncated += 1;
        }
    }
    Ok((
        ChamferTerms {
            value: forward / nv + backward / nu,
            truncated,
        },
        grad,
    ))
}
