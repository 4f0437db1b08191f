use super::{vertex_normals, vertex_normals_backward, Mesh, Vec3};
use crate::error::{Error, Result};

fn umbrella_residuals(positions: &[Vec3], neighbors: &[Vec<usize>]) -> Result<Vec<Vec3>> {
    if neighbors.len() != positions.len() {
        return Err(Error::SizeMismatch {
            expected: positions.len(),
            actual: neighbors.len(),
        });
    }
    positions
        .iter()
        .zip(neighbors)
        .enumerate()
        .map(|(i, (p, nb))| {
            if nb.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let mean = nb.iter().map(|&j| positions[j]).sum::<Vec3>() / nb.len() as f64;
            Ok(p - mean)
        })
        .collect()
}

/// Mean squared distance of each vertex from its neighbor centroid.
pub fn laplacian_loss(positions: &[Vec3], neighbors: &[Vec<usize>]) -> Result<f64> {
    let r = umbrella_residuals(positions, neighbors)?;
    Ok(r.iter().map(|d| d.norm_squared()).sum::<f64>() / positions.len() as f64)
}

pub fn laplacian_loss_grad(
    positions: &[Vec3],
    neighbors: &[Vec<usize>],
) -> Result<(f64, Vec<Vec3>)> {
    let r = umbrella_residuals(positions, neighbors)?;
    let n = positions.len() as f64;
    let loss = r.iter().map(|d| d.norm_squared()).sum::<f64>() / n;
    let mut grad = vec![Vec3::zeros(); positions.len()];
    for (i, (d, nb)) in r.iter().zip(neighbors).enumerate() {
        let g = d * (2.0 / n);
        grad[i] += g;
        let share = g / nb.len() as f64;
        for &j in nb {
            grad[j] -= share;
        }
    }
    Ok((loss, grad))
}

/// Mean over edges of `‖n_i − n_j‖` using area-weighted vertex normals.
pub fn normal_consistency_loss(mesh: &Mesh) -> f64 {
    normal_consistency_loss_grad(mesh.vertices(), mesh).0
}

/// Loss and gradient with respect to `positions`, using `mesh` for topology.
pub fn normal_consistency_loss_grad(positions: &[Vec3], mesh: &Mesh) -> (f64, Vec<Vec3>) {
    let edges = mesh.edges();
    if edges.is_empty() {
        return (0.0, vec![Vec3::zeros(); positions.len()]);
    }
    let normals = vertex_normals(positions, mesh.faces());
    let inv = 1.0 / edges.len() as f64;
    let mut loss = 0.0;
    let mut grad_n = vec![Vec3::zeros(); positions.len()];
    for e in edges {
        let d = normals[e[0]] - normals[e[1]];
        let len = d.norm();
        loss += len;
        // the norm has a kink at zero; take the zero subgradient there
        if len > 1e-15 {
            let g = d * (inv / len);
            grad_n[e[0]] += g;
            grad_n[e[1]] -= g;
        }
    }
    let grad = vertex_normals_backward(positions, mesh.faces(), &grad_n);
    (loss * inv, grad)
}

/// Mean over canonical edges of the squared change in edge length.
pub fn edge_length_loss(canonical: &Mesh, deformed: &[Vec3]) -> Result<f64> {
    Ok(edge_length_loss_grad(canonical, deformed)?.0)
}

pub fn edge_length_loss_grad(canonical: &Mesh, deformed: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    if deformed.len() != canonical.num_vertices() {
        return Err(Error::SizeMismatch {
            expected: canonical.num_vertices(),
            actual: deformed.len(),
        });
    }
    let mut grad = vec![Vec3::zeros(); deformed.len()];
    let edges = canonical.edges();
    if edges.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / edges.len() as f64;
    let rest = canonical.vertices();
    let mut loss = 0.0;
    for e in edges {
        let l0 = (rest[e[0]] - rest[e[1]]).norm();
        let d = deformed[e[0]] - deformed[e[1]];
        let l = d.norm();
        let diff = l0 - l;
        loss += diff * diff;
        if l > 0.0 {
            let g = d * (-2.0 * diff * inv / l);
            grad[e[0]] += g;
            grad[e[1]] -= g;
        }
    }
    Ok((loss * inv, grad))
}
